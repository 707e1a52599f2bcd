"""Exact multi-valued agreement via parallel authenticated broadcasts.

Every operator broadcasts its signed measurement; relays append their own
signature, so a message accepted in round k carries exactly k signatures,
starting with the originator's and all distinct. After f+1 rounds each
broadcast slot decides the single recorded value, or the conflict
placeholder when an equivocating originator produced several. All honest
operators end with identical view vectors, which they collapse to one number
with the median (placeholder slots are first replaced by the median of the
decided slots) or, alternatively, with the trimmed-stride average.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set, Tuple

from . import auth, netsim
from .approx import averaging_function
from .model import NetworkParams

CONFLICT = None  # placeholder for equivocated or silent broadcast slots


def median(values: Sequence[float]) -> float:
    """Median with the even-count convention of the midpoint of the middle pair."""
    if not values:
        raise ValueError("median of an empty sequence")
    ordered = sorted(values)
    mid = len(ordered) // 2
    if len(ordered) % 2:
        return ordered[mid]
    return (ordered[mid - 1] + ordered[mid]) / 2.0


def fill_conflicts(view: Dict[int, Optional[float]]) -> Dict[int, float]:
    """Replace placeholder slots by the median of the decided slots."""
    decided = [v for v in view.values() if v is not CONFLICT]
    filler = median(decided) if decided else 0.0
    return {op: (v if v is not CONFLICT else filler) for op, v in view.items()}


def aggregate_view(view: Dict[int, Optional[float]], f: int,
                   method: str = "median") -> float:
    """Collapse a view vector to one agreed number.

    method "median" is the default; "trimmed-stride" applies the
    approximate-agreement averaging function to the same filled vector.
    """
    filled = fill_conflicts(view)
    values = [filled[op] for op in sorted(filled)]
    if method == "median":
        return median(values)
    if method == "trimmed-stride":
        return averaging_function(values, f)
    raise ValueError("unknown aggregation method %r" % method)


class ExactOperator:
    HALT_KINDS: frozenset = frozenset()

    def __init__(self, operator_id: int, params: NetworkParams,
                 registry: auth.KeyRegistry, initial_value: float, instance: str):
        self.operator_id = operator_id
        self.params = params
        self.registry = registry
        self.initial_value = float(initial_value)
        self.instance = instance
        self.halted = False
        self.view: Optional[Dict[int, Optional[float]]] = None
        # recorded[origin] = set of values extracted for that originator
        self.recorded: Dict[int, Set[float]] = {
            op: set() for op in range(1, params.n_operators + 1)
        }
        self._relay_queue: List[auth.SignedMessage] = []
        # (protocol_round, n_signatures) for every accepted message
        self.accepted_chain_lengths: List[Tuple[int, int]] = []

    def _payload(self, origin: int, value: float) -> bytes:
        return auth.encode("usage", self.instance, origin, float(value))

    def _parse_payload(self, payload: bytes) -> Optional[Tuple[int, float]]:
        parts = payload.split(b"|")
        if len(parts) != 4 or parts[0] != b"usage":
            return None
        if parts[1].decode("ascii", "replace") != self.instance:
            return None
        try:
            return int(parts[2]), float(parts[3])
        except ValueError:
            return None

    def make_own_broadcast(self, value: float) -> netsim.Message:
        signed = auth.make_signed(self.registry, self.operator_id,
                                  self._payload(self.operator_id, value))
        return netsim.Message(self.operator_id, netsim.KIND_BCAST, (signed,))

    def outgoing(self, round_no: int) -> List[netsim.Outbound]:
        if round_no == 0:
            return [(netsim.BROADCAST, self.make_own_broadcast(self.initial_value))]
        out: List[netsim.Outbound] = []
        for signed in self._relay_queue:
            msg = netsim.Message(self.operator_id, netsim.KIND_BCAST, (signed,))
            for dest in self.params.operator_ids():
                if dest not in signed.signers:
                    out.append((dest, msg))
        self._relay_queue = []
        return out

    def deliver(self, round_no: int, inbox: Dict[int, List[netsim.Message]]) -> None:
        if self.halted:
            return
        k = round_no + 1  # protocol rounds are 1-based
        f = self.params.max_faulty
        for sender in sorted(inbox):
            for msg in inbox[sender]:
                if msg.kind != netsim.KIND_BCAST or len(msg.body) != 1:
                    continue
                signed = msg.body[0]
                if not isinstance(signed, auth.SignedMessage):
                    continue
                if len(signed.signers) != k:  # round-k messages carry k signatures
                    continue
                parsed = self._parse_payload(signed.payload)
                if parsed is None:
                    continue
                origin, value = parsed
                if origin not in self.recorded or signed.signers[0] != origin:
                    continue
                if not auth.verify_signed(self.registry, signed):
                    continue
                if value in self.recorded[origin]:
                    continue
                self.recorded[origin].add(value)
                self.accepted_chain_lengths.append((k, len(signed.signers)))
                if k <= f and self.operator_id not in signed.signers:
                    self._relay_queue.append(
                        auth.extend_signed(self.registry, signed, self.operator_id)
                    )
        if k == f + 1:
            self.view = {
                op: (next(iter(vals)) if len(vals) == 1 else CONFLICT)
                for op, vals in self.recorded.items()
            }
            self.halted = True


@dataclass
class ExactResult:
    views: Dict[int, Dict[int, Optional[float]]]
    outputs: Dict[int, float]
    rounds: int
    accepted_chain_lengths: Dict[int, List[Tuple[int, int]]]
    bus: netsim.RoundBus


def run_exact(params: NetworkParams, initial_values: Dict[int, float], *,
              instance: str = "mv", seed: int = 0,
              adversary: Optional[netsim.AdversaryStrategy] = None,
              registry: Optional[auth.KeyRegistry] = None,
              aggregation: str = "median",
              frame_bytes: Optional[int] = None,
              record_transcript: bool = False) -> ExactResult:
    """Run the N parallel broadcasts for exactly f+1 rounds and aggregate."""
    ids = sorted(initial_values)
    if len(ids) != params.n_operators:
        raise ValueError("expected %d initial values, got %d" % (params.n_operators, len(ids)))
    registry = registry or auth.KeyRegistry(ids, auth.derive_seed(seed, "keys"))

    bus = netsim.RoundBus(ids, seed=seed, frame_bytes=frame_bytes,
                          record_transcript=record_transcript)
    for op in ids:
        bus.register(ExactOperator(op, params, registry, initial_values[op], instance))
    bus.bind_adversary(adversary)

    for _ in range(params.max_faulty + 1):
        bus.run_round()

    machines = {op: bus.participants[op] for op in ids}
    views = {op: dict(m.view) for op, m in machines.items()}
    outputs = {
        op: aggregate_view(view, params.max_faulty, aggregation)
        for op, view in views.items()
    }
    return ExactResult(
        views=views,
        outputs=outputs,
        rounds=bus.round,
        accepted_chain_lengths={op: list(m.accepted_chain_lengths) for op, m in machines.items()},
        bus=bus,
    )
