"""Exact information quantities on small finite protocols.

Everything is reported in bits; where a bound is native to natural logs the
ln(2) factor is kept explicit at the API boundary.  Protocol enumeration is
guarded to table sizes that stay comfortably exact in double precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import ParameterError, ProtocolSpec, SpecError, Transcript, speaker

LN2 = math.log(2.0)

ENUMERATION_GUARD = 1 << 20


def binary_entropy(p: float) -> float:
    """h(p) in bits, with 0 log 0 = 0."""
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"probability {p} outside [0, 1]")
    if p in (0.0, 1.0):
        return 0.0
    return -(p * math.log2(p) + (1.0 - p) * math.log2(1.0 - p))


def kl_bernoulli(p: float, q: float) -> float:
    """D(p || q) in bits; infinite when absolute continuity fails."""
    if not 0.0 <= p <= 1.0 or not 0.0 <= q <= 1.0:
        raise ParameterError("arguments must be probabilities")
    if (p > 0.0 and q == 0.0) or (p < 1.0 and q == 1.0):
        return math.inf
    total = 0.0
    if p > 0.0:
        total += p * math.log2(p / q)
    if p < 1.0:
        total += (1.0 - p) * math.log2((1.0 - p) / (1.0 - q))
    return total


def uniform_inputs(spec: ProtocolSpec) -> dict:
    """Uniform product distribution over the declared input domains."""
    w = 1.0 / (len(spec.alice_inputs) * len(spec.bob_inputs))
    return {(x, y): w for x in spec.alice_inputs for y in spec.bob_inputs}


@dataclass
class FiniteJoint:
    """Exact joint table over (x, y, transcript) for one protocol and mu."""

    table: dict[tuple, float]
    rounds: int

    @classmethod
    def from_protocol(cls, spec: ProtocolSpec, mu: dict) -> "FiniteJoint":
        size = len(spec.alice_inputs) * len(spec.bob_inputs) * (1 << spec.rounds)
        if size > ENUMERATION_GUARD:
            raise SpecError(f"joint table of {size} entries exceeds the guard")
        table: dict[tuple, float] = {}
        for (x, y), weight in mu.items():
            if weight < 0:
                raise ParameterError("mu has a negative weight")
            if weight == 0.0:
                continue
            stack: list[tuple[Transcript, float]] = [("", weight)]
            while stack:
                prefix, pr = stack.pop()
                if len(prefix) == spec.rounds:
                    table[(x, y, prefix)] = table.get((x, y, prefix), 0.0) + pr
                    continue
                party = speaker(len(prefix))
                r = spec.intent(party, spec.input_for(party, x, y), prefix)
                if spec.crossover is not None:
                    c = spec.crossover_at(party, spec.input_for(party, x, y), prefix)
                    pr_one = r * (1.0 - c) + (1.0 - r) * c
                else:
                    pr_one = r
                if pr_one > 0.0:
                    stack.append((prefix + "1", pr * pr_one))
                if pr_one < 1.0:
                    stack.append((prefix + "0", pr * (1.0 - pr_one)))
        total = sum(table.values())
        if abs(total - 1.0) > 1e-9:
            raise InvalidJointError(f"joint table sums to {total}, not 1")
        return cls(table, spec.rounds)

    def mutual_information(self) -> float:
        """I(XY; transcript) in bits, straight from the joint table."""
        p_xy: dict[tuple, float] = {}
        p_t: dict[str, float] = {}
        for (x, y, t), pr in self.table.items():
            p_xy[(x, y)] = p_xy.get((x, y), 0.0) + pr
            p_t[t] = p_t.get(t, 0.0) + pr
        info = 0.0
        for (x, y, t), pr in self.table.items():
            if pr > 0.0:
                info += pr * math.log2(pr / (p_xy[(x, y)] * p_t[t]))
        return info


class InvalidJointError(ValueError):
    pass


@dataclass(frozen=True)
class InfoCostResult:
    """External information cost via three independent computation routes.

    `bits` is the direct mutual information with the full transcript,
    `chain_bits` sums the per-round conditional informations, and
    `divergence_bits` sums the per-round expected divergences between the
    speaker's parameter and the public posterior.  The three must agree.
    """

    bits: float
    chain_bits: float
    divergence_bits: float
    per_round: tuple[float, ...]

    def __float__(self) -> float:
        return self.bits


def external_info_cost(phi: ProtocolSpec, mu: dict) -> InfoCostResult:
    """Exact IC of a noiseless protocol: what the transcript tells an observer.

    Enumerates the prefix tree once.  Private coins (Bernoulli nodes) are
    marginalized by construction; zero-weight branches are pruned.
    """
    if phi.crossover is not None:
        raise SpecError("information cost is computed for noiseless protocols")
    size = len(phi.alice_inputs) * len(phi.bob_inputs) * (1 << phi.rounds)
    if size > ENUMERATION_GUARD:
        raise SpecError(f"enumeration of {size} entries exceeds the guard")

    # level: prefix -> {(x, y): joint probability of (inputs, prefix)}
    level: dict[Transcript, dict[tuple, float]] = {
        "": {pair: w for pair, w in mu.items() if w > 0.0}
    }
    per_round_chain: list[float] = []
    per_round_div: list[float] = []
    for i in range(phi.rounds):
        party = speaker(i)
        info_chain = 0.0
        info_div = 0.0
        nxt: dict[Transcript, dict[tuple, float]] = {}
        for prefix, joint in level.items():
            p_prefix = sum(joint.values())
            if p_prefix <= 0.0:
                continue
            q = 0.0
            params = {}
            for (x, y), pr in joint.items():
                r = phi.intent(party, phi.input_for(party, x, y), prefix)
                params[(x, y)] = r
                q += pr * r
            q /= p_prefix
            mean_h = 0.0
            mean_d = 0.0
            for (x, y), pr in joint.items():
                r = params[(x, y)]
                mean_h += pr / p_prefix * binary_entropy(r)
                mean_d += pr / p_prefix * kl_bernoulli(r, q) if pr > 0 else 0.0
                child1 = pr * r
                child0 = pr * (1.0 - r)
                if child1 > 0.0:
                    nxt.setdefault(prefix + "1", {})[(x, y)] = child1
                if child0 > 0.0:
                    nxt.setdefault(prefix + "0", {})[(x, y)] = child0
            info_chain += p_prefix * (binary_entropy(q) - mean_h)
            info_div += p_prefix * mean_d
        per_round_chain.append(info_chain)
        per_round_div.append(info_div)
        level = nxt

    direct = FiniteJoint.from_protocol(phi, mu).mutual_information()
    return InfoCostResult(
        bits=direct,
        chain_bits=sum(per_round_chain),
        divergence_bits=sum(per_round_div),
        per_round=tuple(per_round_chain),
    )


def ine_bounds(p: float, q: float) -> tuple[float, float]:
    """Quadratic sandwich around ln(2) * D(p || q) over the two outcomes.

    lower = sum_x delta^2 / (2 max(...)), upper = sum_x delta^2 / q_x, and
    lower <= ln(2) * D(p || q) <= upper.
    """
    if not 0.0 < q < 1.0:
        raise ParameterError("the reference parameter must be interior")
    if not 0.0 <= p <= 1.0:
        raise ParameterError("p must be a probability")
    delta = p - q
    lower = delta**2 / (2.0 * max(p, q)) + delta**2 / (2.0 * max(1.0 - p, 1.0 - q))
    upper = delta**2 / q + delta**2 / (1.0 - q)
    return lower, upper


# Constants materialized from the four-region divergence analysis.  The
# region with large p and tiny q needs sup_{p >= 0.02} h(p)/p, attained at
# p = 0.02; the often-quoted log(100) is an under-estimate of that supremum,
# so the honest constant below is what the verification grids can support.
_C_LOG3 = 1.0 - 1.0 / math.log2(3.0)
_H_RATIO_SUP = binary_entropy(0.02) / 0.02
_C_LOG_Q = 1.0 - _H_RATIO_SUP / math.log2(200.0)


def table1_bound(p: float, q: float) -> tuple[str, float]:
    """Explicit divergence lower bound and its region label.

    Regions follow the sampler's dispatch order; every returned value
    satisfies D(p || q) >= bound on the whole region.
    """
    if not 0.0 < q < 1.0 or not 0.0 <= p <= 1.0:
        raise ParameterError("need 0 < q < 1 and p in [0, 1]")
    if p <= 2.0 * q:
        return "p <= 2q", (p - q) ** 2 / (4.0 * q * LN2)
    if p < 0.02 and q < 0.01:
        if p > 3.0 * q:
            bound = _C_LOG3 * p * math.log2(p / q)
        else:
            bound = (p - q) ** 2 / (2.0 * p * LN2)
        return "2q < p < 0.02, q < 0.01", bound
    if q >= 0.01:
        return "2q < p, q >= 0.01", (p - q) ** 2 / (2.0 * p * LN2)
    if q <= 0.005:
        bound = _C_LOG_Q * p * math.log2(1.0 / q)
    else:
        bound = p / (8.0 * LN2)
    return "p >= 0.02, q < 0.01", bound
