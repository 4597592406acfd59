"""Read-Identify-Peel: structural grouping, phase extraction, and binarization.

Structural identity of a circuit is the per-qubit chain of gate nodes in
timing order, where a node records the gate kind, the partner qubit of a
two-qubit gate, and the delay duration -- but never a virtual-Z phase value.
Two circuits that differ only in virtual-Z phases therefore build identical
graphs and land in the same equivalence group.

Grouping is greedy in batch order: a circuit joins the first earlier group
whose representative matches, otherwise it founds a new group.  The flattened
groups give the execution order consumed by the scheduler.  ``identify`` uses
a fingerprint-bucketed scan; ``identify_bruteforce`` keeps the plain pairwise
method as an independent oracle.

Phase words are unsigned 32-bit fixed point over [0, 2*pi), so a stitched
execution and a directly-compiled execution agree bit-exactly once both sides
are quantized.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .circuits import TAU, Circuit, Gate, GateKind, param_request
from .errors import CapacityError, DecodeError

BANK_CAPACITY = 2048
PHASE_SCALE = 4294967296.0  # 2**32 words over one turn
BLOB_MAGIC = b"PCEB"
BLOB_VERSION = 1


def quantize_phases(phases) -> np.ndarray:
    """Quantize an array of angles to u32 words: round(canonical/2pi * 2^32) mod 2^32."""
    arr = np.asarray(phases, dtype=np.float64)
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError("phases must be finite")
    r = np.mod(arr, TAU)
    r[r >= TAU] = 0.0
    return (np.round(r / TAU * PHASE_SCALE).astype(np.int64) % (1 << 32)).astype(np.uint32)


def quantize_phase(p: float) -> int:
    return int(quantize_phases(np.array([p]))[0])


def dequantize_word(word: int) -> float:
    return (int(word) & 0xFFFFFFFF) / PHASE_SCALE * TAU


def dequantize_words(words: np.ndarray) -> np.ndarray:
    return np.asarray(words, dtype=np.uint32).astype(np.float64) / PHASE_SCALE * TAU


_NO_PARTNER = -1


def _gate_node(g: Gate, qubit: int) -> tuple:
    kind = g.kind
    if kind is GateKind.TWO_QUBIT:
        other = g.qubits[1] if g.qubits[0] == qubit else g.qubits[0]
        return (kind.value, other, g.two_qubit_name)
    if kind is GateKind.DELAY:
        return (kind.value, _NO_PARTNER, g.duration_ns)
    return (kind.value, _NO_PARTNER, 0)


@dataclass(frozen=True, slots=True)
class StructuralGraph:
    """Per-qubit gate chains with virtual-Z phases erased to parameter slots."""

    n_qubits: int
    chains: tuple[tuple[tuple, ...], ...]
    fingerprint: int

    @property
    def node_count(self) -> int:
        return sum(len(c) for c in self.chains)


def build_graph(c: Circuit) -> StructuralGraph:
    chains: list[list[tuple]] = [[] for _ in range(c.n_qubits)]
    for g in c.gates:
        if g.kind is GateKind.TWO_QUBIT:
            a, b = g.qubits
            chains[a].append((GateKind.TWO_QUBIT.value, b, g.two_qubit_name))
            chains[b].append((GateKind.TWO_QUBIT.value, a, g.two_qubit_name))
        else:
            chains[g.qubits[0]].append(_gate_node(g, g.qubits[0]))
    frozen = tuple(tuple(chain) for chain in chains)
    return StructuralGraph(c.n_qubits, frozen, hash((c.n_qubits, frozen)))


def structural_equal(a: StructuralGraph, b: StructuralGraph) -> bool:
    return a.n_qubits == b.n_qubits and a.chains == b.chains


@dataclass(frozen=True, slots=True)
class EquivalenceReport:
    """Partition of batch indices into structural-equivalence groups.

    The first index of each group is the unique representative; the flattened
    concatenation of groups is the execution order.
    """

    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        seen = set()
        for g in self.groups:
            if not g:
                raise ValueError("empty equivalence group")
            seen.update(g)
        n = sum(len(g) for g in self.groups)
        if len(seen) != n or (n and (min(seen) != 0 or max(seen) != n - 1)):
            raise ValueError("groups do not partition the batch indices")

    @property
    def n_circuits(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def order(self) -> tuple[int, ...]:
        return tuple(i for g in self.groups for i in g)

    @property
    def unique_indices(self) -> tuple[int, ...]:
        return tuple(g[0] for g in self.groups)

    def group_of(self, index: int) -> int:
        for gi, g in enumerate(self.groups):
            if index in g:
                return gi
        raise KeyError(index)

    def equivalency_percent(self) -> float:
        """Share of the batch that did not need its own compilation, (n-u)/n."""
        n = self.n_circuits
        return 100.0 * (n - len(self.groups)) / n if n else 0.0


def identify_graphs(graphs: Iterable[StructuralGraph]) -> EquivalenceReport:
    """Group structurally-equal graphs; only representatives are retained in memory."""
    groups: list[list[int]] = []
    reps: list[StructuralGraph] = []
    buckets: dict[int, list[int]] = {}
    for i, g in enumerate(graphs):
        placed = False
        for gi in buckets.get(g.fingerprint, ()):
            if structural_equal(reps[gi], g):
                groups[gi].append(i)
                placed = True
                break
        if not placed:
            buckets.setdefault(g.fingerprint, []).append(len(groups))
            groups.append([i])
            reps.append(g)
    return EquivalenceReport(tuple(tuple(g) for g in groups))


def identify(batch) -> EquivalenceReport:
    return identify_graphs(build_graph(c) for c in batch.circuits)


def identify_bruteforce(batch) -> EquivalenceReport:
    """O(n^2) reference grouping: linear scan over representatives, no hashing."""
    graphs = [build_graph(c) for c in batch.circuits]
    groups: list[list[int]] = []
    reps: list[StructuralGraph] = []
    for i, g in enumerate(graphs):
        for gi, rep in enumerate(reps):
            if structural_equal(rep, g):
                groups[gi].append(i)
                break
        else:
            groups.append([i])
            reps.append(g)
    return EquivalenceReport(tuple(tuple(g) for g in groups))


def peel(c: Circuit) -> list[np.ndarray]:
    """Per-qubit quantized virtual-Z phase words in encounter order."""
    raw: list[list[float]] = [[] for _ in range(c.n_qubits)]
    for g in c.gates:
        if g.kind is GateKind.VIRTUAL_Z:
            raw[g.qubits[0]].append(g.phase)
    words = []
    for q, phases in enumerate(raw):
        if len(phases) > BANK_CAPACITY:
            raise CapacityError(q, len(phases))
        words.append(quantize_phases(phases))
    return words


def modify(c: Circuit) -> Circuit:
    """Replace every virtual-Z gate with a parameter request at the same position."""
    gates = tuple(
        param_request(g.qubits[0]) if g.kind is GateKind.VIRTUAL_Z else g for g in c.gates
    )
    return Circuit(gates, c.n_qubits, c.shots)


@dataclass(frozen=True, slots=True)
class ParamTable:
    """Peeled phase words: one row per circuit, one u32 array per qubit bank."""

    n_qubits: int
    rows: tuple[tuple[np.ndarray, ...], ...]

    @property
    def n_circuits(self) -> int:
        return len(self.rows)

    def words_for(self, circuit_index: int) -> tuple[np.ndarray, ...]:
        return self.rows[circuit_index]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParamTable):
            return NotImplemented
        return (
            self.n_qubits == other.n_qubits
            and len(self.rows) == len(other.rows)
            and all(
                len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))
                for a, b in zip(self.rows, other.rows)
            )
        )


def _padded_row(words: list[np.ndarray], n_qubits: int) -> tuple[np.ndarray, ...]:
    empty = np.zeros(0, dtype=np.uint32)
    return tuple(words[q] if q < len(words) else empty for q in range(n_qubits))


def build_param_table(circuits, n_qubits: int | None = None) -> ParamTable:
    cs = list(circuits)
    if n_qubits is None:
        n_qubits = max((c.n_qubits for c in cs), default=0)
    rows = []
    for i, c in enumerate(cs):
        try:
            rows.append(_padded_row(peel(c), n_qubits))
        except CapacityError as exc:
            raise CapacityError(exc.qubit, exc.count, exc.limit, where=f"circuit {i}") from None
    return ParamTable(n_qubits, tuple(rows))


@dataclass(frozen=True, slots=True)
class RipResult:
    uniques: tuple[Circuit, ...]  # modified representatives, in group order
    report: EquivalenceReport
    table: ParamTable


def rip(batch) -> RipResult:
    report = identify(batch)
    table = build_param_table(batch.circuits)
    uniques = tuple(modify(batch.circuits[g[0]]) for g in report.groups)
    return RipResult(uniques, report, table)


def binarize(report: EquivalenceReport, table: ParamTable) -> bytes:
    """Serialize (execution order, unique flags, phase words) to the blob format."""
    n = table.n_circuits
    if report.n_circuits != n:
        raise ValueError(f"report covers {report.n_circuits} circuits, table {n}")
    out = bytearray()
    out += BLOB_MAGIC
    out += struct.pack("<HHII", BLOB_VERSION, table.n_qubits, n, len(report.groups))
    out += np.asarray(report.order, dtype="<u4").tobytes()
    flags = bytearray((n + 7) // 8)
    for i in report.unique_indices:
        flags[i // 8] |= 1 << (i % 8)
    out += flags
    for row in table.rows:
        for words in row:
            out += struct.pack("<H", len(words))
            out += np.asarray(words, dtype="<u4").tobytes()
    out += struct.pack("<I", zlib.crc32(out) & 0xFFFFFFFF)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError(f"truncated blob while reading {what}", self.pos)
        b = self.data[self.pos : self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str, what: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def debinarize(blob: bytes) -> tuple[EquivalenceReport, ParamTable]:
    """Exact inverse of ``binarize``; raises DecodeError naming the bad offset."""
    if len(blob) < 4:
        raise DecodeError("blob shorter than magic", 0)
    if blob[:4] != BLOB_MAGIC:
        raise DecodeError(f"bad magic {blob[:4]!r}", 0)
    if len(blob) < 4 + 12 + 4:
        raise DecodeError("blob shorter than fixed header", len(blob))
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    actual_crc = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise DecodeError(
            f"checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}",
            len(blob) - 4,
        )
    r = _Reader(blob[:-4])
    r.take(4, "magic")
    version, n_qubits, n, n_groups = r.unpack("<HHII", "header")
    if version != BLOB_VERSION:
        raise DecodeError(f"unsupported blob version {version}", 4)
    if n_groups > n or (n > 0 and n_groups == 0):
        raise DecodeError(f"group count {n_groups} inconsistent with {n} circuits", 8)
    order_pos = r.pos
    order = np.frombuffer(r.take(4 * n, "order array"), dtype="<u4").astype(np.int64)
    if n and (sorted(order.tolist()) != list(range(n))):
        raise DecodeError("order array is not a permutation of the batch", order_pos)
    flags = r.take((n + 7) // 8, "unique-flag bitmap")
    unique = [bool(flags[i // 8] >> (i % 8) & 1) for i in range(n)]
    if sum(unique) != n_groups:
        raise DecodeError(
            f"{sum(unique)} unique flags set but header declares {n_groups} groups", 8
        )
    groups: list[list[int]] = []
    for idx in order.tolist():
        if unique[idx]:
            groups.append([idx])
        elif groups:
            groups[-1].append(idx)
        else:
            raise DecodeError("execution order does not begin with a unique circuit", order_pos)
    rows = []
    for i in range(n):
        row = []
        for q in range(n_qubits):
            count_pos = r.pos
            (count,) = r.unpack("<H", f"word count (circuit {i}, qubit {q})")
            if count > BANK_CAPACITY:
                raise DecodeError(
                    f"circuit {i} qubit {q}: {count} words exceed bank capacity", count_pos
                )
            words = np.frombuffer(
                r.take(4 * count, f"phase words (circuit {i}, qubit {q})"), dtype="<u4"
            ).copy()
            row.append(words)
        rows.append(tuple(row))
    if r.pos != len(r.data):
        raise DecodeError(f"{len(r.data) - r.pos} unexpected trailing bytes", r.pos)
    report = EquivalenceReport(tuple(tuple(g) for g in groups))
    return report, ParamTable(n_qubits, tuple(rows))
