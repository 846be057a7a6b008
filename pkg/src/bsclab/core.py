"""Two-party protocols over binary symmetric channels with feedback.

A protocol runs for a fixed number of rounds with strictly alternating
speakers (Alice speaks round 1).  Because the channel has feedback, both
parties observe every *received* bit, so the shared state after round i is
the received transcript prefix.  Transcripts are plain strings of '0'/'1'.

The reference executor `run_over_bsc` is the ground-truth oracle for the
rest of the package: it flips each transmitted bit independently with the
channel's crossover probability and accounts bits and energy exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from typing import Any, Callable, Iterator

import numpy as np

ALICE = "alice"
BOB = "bob"

Transcript = str


class ParameterError(ValueError):
    """A numeric parameter is outside its admissible range."""


class SpecError(ValueError):
    """A protocol specification is malformed or queried off its tree."""


class InvariantViolation(RuntimeError):
    """An internal consistency check failed; indicates a bug, not bad input."""


class IterationCapExceeded(RuntimeError):
    """A rejection loop or random walk exceeded its configured step cap."""


def speaker(round_index: int) -> str:
    """Speaker of a 0-indexed round; Alice opens and the schedule alternates."""
    return ALICE if round_index % 2 == 0 else BOB


def bit_energy(crossover: float) -> float:
    """Energy charged for one bit sent at the given crossover: 4*(c - 1/2)^2."""
    if not 0.0 <= crossover <= 1.0:
        raise ParameterError(f"crossover must be in [0, 1], got {crossover}")
    return 4.0 * (crossover - 0.5) ** 2


@dataclass(frozen=True)
class Noise:
    """Channel noise level, stored as the advantage eps; crossover = 1/2 - eps."""

    epsilon: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.epsilon <= 0.5:
            raise ParameterError(f"advantage must be in [0, 1/2], got {self.epsilon}")

    @property
    def crossover(self) -> float:
        return 0.5 - self.epsilon

    @classmethod
    def from_crossover(cls, crossover: float) -> "Noise":
        if not 0.0 <= crossover <= 0.5:
            raise ParameterError(f"crossover must be in [0, 1/2], got {crossover}")
        return cls(0.5 - crossover)


@dataclass(frozen=True)
class ErrorCounts:
    """Per-party flip counts of one execution; m_x on Alice rounds, m_y on Bob's."""

    m_x: int
    m_y: int

    @property
    def m(self) -> int:
        return self.m_x + self.m_y


@dataclass
class CostLedger:
    """Monotone bit counter and energy accumulator.

    Every transmitted bit charges 1 to `bits_sent` and `bit_energy(c)` to
    `energy`, where c is the crossover actually used for that bit.
    """

    bits_sent: int = 0
    energy: float = 0.0

    def charge(self, crossover: float, count: int = 1) -> None:
        if count < 0:
            raise ParameterError("cannot charge a negative bit count")
        self.bits_sent += count
        self.energy += count * bit_energy(crossover)

    def charge_energy(self, crossover: float, steps: int) -> None:
        # Same as charge(); kept separate so walk loops read naturally.
        self.charge(crossover, steps)


class RandomSource:
    """Four independent deterministic streams: public, alice, bob, channel.

    Identical seeds reproduce identical executions bit-for-bit.  Trial i of a
    batch uses seed base+i, so batches are embarrassingly parallel.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        pub, alice, bob, chan = np.random.SeedSequence(self.seed).spawn(4)
        self.public = np.random.default_rng(pub)
        self.alice = np.random.default_rng(alice)
        self.bob = np.random.default_rng(bob)
        self.channel = np.random.default_rng(chan)

    @classmethod
    def for_trial(cls, base_seed: int, index: int) -> "RandomSource":
        return cls(base_seed + index)

    def stream_for(self, party: str) -> np.random.Generator:
        if party == ALICE:
            return self.alice
        if party == BOB:
            return self.bob
        raise SpecError(f"unknown party {party!r}")


def bernoulli(gen: np.random.Generator, p: float) -> int:
    return int(gen.random() < p)


@dataclass(frozen=True)
class ProtocolSpec:
    """Finite two-party protocol tree with alternating speakers.

    `next_bit(party, own_input, received_prefix)` gives the speaker's intent
    for the next round: 0/1 for a deterministic protocol, or a Bernoulli
    parameter in [0, 1] when the speaker uses a private coin at that node.
    `crossover`, when present, gives the per-bit channel choice of a
    variable-noise protocol (the transmitter picks it from the same view).
    """

    rounds: int
    alice_inputs: tuple
    bob_inputs: tuple
    next_bit: Callable[[str, Any, str], float]
    crossover: Callable[[str, Any, str], float] | None = None
    deterministic: bool = True
    padding: int = 0

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise SpecError("protocol needs at least one round")
        if not self.alice_inputs or not self.bob_inputs:
            raise SpecError("input domains must be non-empty")

    def input_for(self, party: str, x: Any, y: Any) -> Any:
        return x if party == ALICE else y

    def intent(self, party: str, own_input: Any, prefix: Transcript) -> float:
        """Intent at a node, validated to be a probability."""
        if len(prefix) >= self.rounds:
            raise SpecError(f"prefix {prefix!r} is not interior to a {self.rounds}-round tree")
        try:
            value = self.next_bit(party, own_input, prefix)
        except KeyError as exc:
            raise SpecError(f"next_bit undefined at ({party}, {own_input!r}, {prefix!r})") from exc
        value = float(value)
        if not 0.0 <= value <= 1.0:
            raise SpecError(f"next_bit value {value} at {prefix!r} is not a probability")
        return value

    def intent_bit(self, party: str, own_input: Any, prefix: Transcript) -> int:
        """Intent of a deterministic protocol; rejects Bernoulli nodes."""
        value = self.intent(party, own_input, prefix)
        if value not in (0.0, 1.0):
            raise SpecError("protocol is not deterministic at this node")
        return int(value)

    def crossover_at(self, party: str, own_input: Any, prefix: Transcript) -> float:
        if self.crossover is None:
            raise SpecError("protocol has no per-bit crossover table")
        c = float(self.crossover(party, own_input, prefix))
        if not 0.0 <= c <= 0.5:
            raise ParameterError(f"per-bit crossover {c} outside [0, 1/2]")
        return c


def pad_to_even(spec: ProtocolSpec) -> ProtocolSpec:
    """Append a constant-0 dummy round if the round count is odd.

    Padding is recorded in `padding` so reports can quote raw and padded T.
    """
    if spec.rounds % 2 == 0:
        return spec
    base_rounds = spec.rounds
    inner_next = spec.next_bit
    inner_cross = spec.crossover

    def padded_next(party: str, own_input: Any, prefix: Transcript) -> float:
        if len(prefix) >= base_rounds:
            return 0.0
        return inner_next(party, own_input, prefix)

    padded_cross = None
    if inner_cross is not None:
        def padded_cross(party: str, own_input: Any, prefix: Transcript) -> float:
            if len(prefix) >= base_rounds:
                return 0.0
            return inner_cross(party, own_input, prefix)

    return replace(
        spec,
        rounds=base_rounds + 1,
        next_bit=padded_next,
        crossover=padded_cross,
        padding=spec.padding + 1,
    )


def run_over_bsc(
    spec: ProtocolSpec,
    x: Any,
    y: Any,
    noise: Noise | None,
    rng: RandomSource,
) -> tuple[Transcript, ErrorCounts, CostLedger]:
    """Execute all rounds over the BSC with feedback.

    Each transmitted bit is flipped independently with the crossover
    probability (the spec's per-bit table overrides `noise` when present);
    thanks to feedback both parties continue from the received bit.
    """
    if x not in spec.alice_inputs or y not in spec.bob_inputs:
        raise SpecError(f"inputs ({x!r}, {y!r}) outside the declared domains")
    if noise is None and spec.crossover is None:
        raise ParameterError("need either a channel noise level or a per-bit crossover table")
    transcript = ""
    m_x = m_y = 0
    ledger = CostLedger()
    for i in range(spec.rounds):
        party = speaker(i)
        own = spec.input_for(party, x, y)
        intent = spec.intent(party, own, transcript)
        if intent in (0.0, 1.0):
            sent = int(intent)
        else:
            sent = bernoulli(rng.stream_for(party), intent)
        c = spec.crossover_at(party, own, transcript) if spec.crossover is not None else noise.crossover
        flipped = bernoulli(rng.channel, c)
        received = sent ^ flipped
        ledger.charge(c)
        if flipped:
            if party == ALICE:
                m_x += 1
            else:
                m_y += 1
        transcript += str(received)
    return transcript, ErrorCounts(m_x, m_y), ledger


def count_errors(spec: ProtocolSpec, party: str, own_input: Any, transcript: Transcript) -> int:
    """Replay one party's intended bits along a leaf and count corrupted rounds.

    Only meaningful for deterministic protocols: the intent at each node is
    pinned by the received prefix, so received != intended exactly at flips.
    """
    if len(transcript) != spec.rounds:
        raise SpecError(
            f"transcript length {len(transcript)} != protocol rounds {spec.rounds}"
        )
    errors = 0
    for i in range(spec.rounds):
        if speaker(i) != party:
            continue
        intended = spec.intent_bit(party, own_input, transcript[:i])
        if intended != int(transcript[i]):
            errors += 1
    return errors


def flip_pattern(spec: ProtocolSpec, x: Any, y: Any, transcript: Transcript) -> np.ndarray:
    """Per-round flip indicators of a leaf of a deterministic protocol."""
    if len(transcript) != spec.rounds:
        raise SpecError("transcript is not a full leaf")
    pattern = np.zeros(spec.rounds, dtype=np.int8)
    for i in range(spec.rounds):
        party = speaker(i)
        intended = spec.intent_bit(party, spec.input_for(party, x, y), transcript[:i])
        pattern[i] = intended ^ int(transcript[i])
    return pattern


def apply_flip_pattern(
    spec: ProtocolSpec, x: Any, y: Any, root: Transcript, pattern: np.ndarray
) -> Transcript:
    """Materialize the leaf reached from `root` under a given flip pattern.

    Inverse of `flip_pattern` restricted to the subtree below `root`; the
    pattern bit of round i flips the speaker's intended bit at that node.
    """
    transcript = root
    for e in np.asarray(pattern, dtype=np.int8):
        i = len(transcript)
        party = speaker(i)
        intended = spec.intent_bit(party, spec.input_for(party, x, y), transcript)
        transcript += str(intended ^ int(e))
    return transcript


def enumerate_transcripts(
    spec: ProtocolSpec, x: Any, y: Any, noise: Noise | None = None
) -> Iterator[tuple[Transcript, float]]:
    """Exact leaf law of one input pair: yields (leaf, probability).

    With `noise` (or a per-bit crossover table) the law is the received-bit
    law over the channel; with neither, the noiseless sent-bit law.
    """
    stack = [("", 1.0)]
    while stack:
        prefix, prob = stack.pop()
        if len(prefix) == spec.rounds:
            yield prefix, prob
            continue
        party = speaker(len(prefix))
        own = spec.input_for(party, x, y)
        r = spec.intent(party, own, prefix)
        if spec.crossover is not None:
            c = spec.crossover_at(party, own, prefix)
        elif noise is not None:
            c = noise.crossover
        else:
            c = 0.0
        pr_one = r * (1.0 - c) + (1.0 - r) * c
        if pr_one > 0.0:
            stack.append((prefix + "1", prob * pr_one))
        if pr_one < 1.0:
            stack.append((prefix + "0", prob * (1.0 - pr_one)))


def prefix_probability(
    spec: ProtocolSpec, x: Any, y: Any, prefix: Transcript, noise: Noise | None = None
) -> float:
    """Exact probability of observing a received prefix for one input pair."""
    prob = 1.0
    for i, bit in enumerate(prefix):
        party = speaker(i)
        own = spec.input_for(party, x, y)
        r = spec.intent(party, own, prefix[:i])
        if spec.crossover is not None:
            c = spec.crossover_at(party, own, prefix[:i])
        elif noise is not None:
            c = noise.crossover
        else:
            c = 0.0
        pr_one = r * (1.0 - c) + (1.0 - r) * c
        prob *= pr_one if bit == "1" else 1.0 - pr_one
    return prob


# ---------------------------------------------------------------------------
# Spec constructors and the JSON file interface
# ---------------------------------------------------------------------------


def constant_spec(
    rounds: int,
    bit: int = 1,
    alice_inputs: tuple = (0,),
    bob_inputs: tuple = (0,),
) -> ProtocolSpec:
    """Both parties always intend the same constant bit."""
    value = float(int(bit))

    def next_bit(party: str, own_input: Any, prefix: Transcript) -> float:
        return value

    return ProtocolSpec(rounds, tuple(alice_inputs), tuple(bob_inputs), next_bit)


def xor_spec(
    rounds: int,
    noise: float = 0.0,
    alice_inputs: tuple = (0, 1),
    bob_inputs: tuple = (0, 1),
) -> ProtocolSpec:
    """Each party streams its input bits, each XORed with an iid B_noise coin.

    On its k-th speaking turn a party intends bit k of its integer input.
    noise=0 gives the deterministic send-your-input protocol.
    """
    if not 0.0 <= noise <= 0.5:
        raise ParameterError("xor noise must be in [0, 1/2]")

    def next_bit(party: str, own_input: Any, prefix: Transcript) -> float:
        turn = len(prefix) // 2
        b = (int(own_input) >> turn) & 1
        return b * (1.0 - noise) + (1 - b) * noise

    return ProtocolSpec(
        rounds,
        tuple(alice_inputs),
        tuple(bob_inputs),
        next_bit,
        deterministic=(noise == 0.0),
    )


def seeded_spec(
    rounds: int,
    seed: int,
    alice_inputs: tuple = (0, 1),
    bob_inputs: tuple = (0, 1),
) -> ProtocolSpec:
    """Deterministic tree whose bits come from a keyed hash of (party, input, prefix).

    Lets tests exercise large trees without materializing 2^T tables.
    """
    key = int(seed).to_bytes(8, "little", signed=True)

    def next_bit(party: str, own_input: Any, prefix: Transcript) -> int:
        h = hashlib.blake2b(
            f"{party}|{own_input}|{prefix}".encode(), key=key, digest_size=1
        )
        return h.digest()[0] & 1

    return ProtocolSpec(rounds, tuple(alice_inputs), tuple(bob_inputs), next_bit)


def table_spec(
    rounds: int,
    table: dict,
    alice_inputs: tuple,
    bob_inputs: tuple,
    crossover_table: dict | None = None,
) -> ProtocolSpec:
    """Explicit per-node table: table[party][str(input)][prefix] -> bit or probability."""

    def next_bit(party: str, own_input: Any, prefix: Transcript) -> float:
        return table[party][str(own_input)][prefix]

    deterministic = all(
        float(v) in (0.0, 1.0)
        for per_party in table.values()
        for per_input in per_party.values()
        for v in per_input.values()
    )
    crossover = None
    if crossover_table is not None:
        def crossover(party: str, own_input: Any, prefix: Transcript) -> float:
            return crossover_table[party][str(own_input)][prefix]

    return ProtocolSpec(
        rounds,
        tuple(alice_inputs),
        tuple(bob_inputs),
        next_bit,
        crossover=crossover,
        deterministic=deterministic,
    )


def spec_from_dict(doc: dict) -> ProtocolSpec:
    """Build a ProtocolSpec from its JSON document form."""
    try:
        rounds = int(doc["rounds"])
        alice_inputs = tuple(doc["alice_inputs"])
        bob_inputs = tuple(doc["bob_inputs"])
        kind = doc["kind"]
    except KeyError as exc:
        raise SpecError(f"spec document missing field {exc}") from exc
    if kind == "constant":
        return constant_spec(rounds, int(doc.get("bit", 1)), alice_inputs, bob_inputs)
    if kind == "xor":
        return xor_spec(rounds, float(doc.get("noise", 0.0)), alice_inputs, bob_inputs)
    if kind == "seeded":
        return seeded_spec(rounds, int(doc["seed"]), alice_inputs, bob_inputs)
    if kind == "table":
        return table_spec(
            rounds,
            doc["table"],
            alice_inputs,
            bob_inputs,
            crossover_table=doc.get("crossover_table"),
        )
    raise SpecError(f"unknown spec kind {kind!r}")


def load_spec(path: str) -> ProtocolSpec:
    with open(path, encoding="utf-8") as fh:
        return spec_from_dict(json.load(fh))
