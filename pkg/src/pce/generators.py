"""Deterministic circuit-batch generators.

Every generator draws from a named 64-bit seeded PRNG (numpy PCG64 behind
``np.random.default_rng``) with the stream split per circuit index, so a batch
is reproducible circuit-by-circuit and byte-identical across runs for the same
spec.  All single-qubit content is lowered through ``u3_decompose``, which is
what makes same-shape circuits structurally equivalent under the dedup engine
(including the pair of readout-calibration circuits: |0...0> and |1...1>
preparations lower to the same pulse skeleton and differ only in phases).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from .circuits import (
    TAU,
    X90_MATRIX,
    Circuit,
    Gate,
    GateKind,
    U3Params,
    cz,
    measure,
    u3_decompose,
    u3_from_unitary,
    u3_matrix,
    z_matrix,
)
from .errors import ConfigError

MAX_QUBIT_ID = 7  # parameter memory has eight banks

# stream tags keep the per-kind PRNG streams disjoint under one seed
_STREAM_RB = 1
_STREAM_CB = 2
_STREAM_RC = 3
_STREAM_BASE = 4

KINDS = ("RB", "RC", "CB", "FRC")

# (phi, theta, lam) triples whose u3_matrix is the named operator up to phase
IDENTITY_PARAMS = U3Params(0.0, 0.0, 0.0)
PAULI_PARAMS = {
    "I": IDENTITY_PARAMS,
    "X": U3Params(math.pi / 2, math.pi, math.pi / 2),
    "Y": U3Params(math.pi, math.pi, 0.0),
    "Z": U3Params(math.pi, 0.0, 0.0),
}
PAULI_NAMES = ("I", "X", "Y", "Z")
# rotations taking |0> to the +1 eigenstate of Z, X, Y
BASIS_PREP_PARAMS = (
    IDENTITY_PARAMS,
    U3Params(math.pi / 2, math.pi / 2, 0.0),
    U3Params(math.pi, math.pi / 2, 0.0),
)

_PAULI_MATRICES = {name: u3_matrix(p) for name, p in PAULI_PARAMS.items()}


def _pauli_mul(a: str, b: str) -> str:
    """Product of Pauli labels, ignoring the global phase."""
    if a == "I":
        return b
    if b == "I":
        return a
    if a == b:
        return "I"
    return ({"X", "Y", "Z"} - {a, b}).pop()


def _cz_conjugate(pa: str, pb: str) -> tuple[str, str]:
    """Labels of CZ (pa x pb) CZ, ignoring the global phase."""
    za = "Z" if pa in ("X", "Y") else "I"
    zb = "Z" if pb in ("X", "Y") else "I"
    return _pauli_mul(pa, zb), _pauli_mul(pb, za)


class Label(NamedTuple):
    """Per-circuit provenance: which (width, depth, randomization, role) produced it."""

    width: tuple[int, ...]
    depth: int
    randomization: int
    role: str


@dataclass(frozen=True)
class BatchSpec:
    """Configuration for one generated batch.

    ``depths`` may be a single list (shared by every width) or one list per
    width.  ``randomizations`` is the circuit count per (width, depth); CB
    additionally accepts one count per width.
    """

    kind: str
    widths: tuple[tuple[int, ...], ...]
    depths: tuple[tuple[int, ...], ...]
    randomizations: int | tuple[int, ...]
    shots: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown batch kind {self.kind!r}, expected one of {KINDS}")
        if not self.widths:
            raise ConfigError("widths must be non-empty")
        widths = tuple(tuple(int(q) for q in w) for w in self.widths)
        for w in widths:
            if not w:
                raise ConfigError("empty width tuple")
            if len(set(w)) != len(w):
                raise ConfigError(f"width {w} repeats a qubit")
            if min(w) < 0 or max(w) > MAX_QUBIT_ID:
                raise ConfigError(f"width {w} uses qubit ids outside 0..{MAX_QUBIT_ID}")
            if self.kind == "CB" and len(w) % 2:
                raise ConfigError(f"CB width {w} must pair all qubits (even size)")
        object.__setattr__(self, "widths", widths)
        depths = self.depths
        if depths and isinstance(depths[0], int):
            depths = (tuple(depths),) * len(widths)
        else:
            depths = tuple(tuple(int(d) for d in d_list) for d_list in depths)
            if len(depths) == 1:
                depths = depths * len(widths)
        if len(depths) != len(widths):
            raise ConfigError(f"{len(depths)} depth lists for {len(widths)} widths")
        for d_list in depths:
            if not d_list or min(d_list) <= 0:
                raise ConfigError(f"depths must be positive, got {d_list}")
        object.__setattr__(self, "depths", depths)
        rand = self.randomizations
        if isinstance(rand, int):
            if rand <= 0:
                raise ConfigError("randomizations must be positive")
        else:
            rand = tuple(int(r) for r in rand)
            if self.kind != "CB":
                raise ConfigError("per-width randomization counts are only meaningful for CB")
            if len(rand) != len(widths) or min(rand) <= 0:
                raise ConfigError(f"need one positive count per width, got {rand}")
            object.__setattr__(self, "randomizations", rand)
        if self.shots <= 0:
            raise ConfigError("shots must be positive")
        if not 0 <= int(self.seed) < (1 << 64):
            raise ConfigError("seed must fit in 64 bits")

    def rand_for(self, width_index: int) -> int:
        r = self.randomizations
        return r if isinstance(r, int) else r[width_index]

    def expected_count(self) -> int:
        per_width_extra = 2 if self.kind == "RB" else 0
        return sum(
            len(self.depths[wi]) * self.rand_for(wi) + per_width_extra
            for wi in range(len(self.widths))
        )


@dataclass(frozen=True)
class CircuitBatch:
    circuits: tuple[Circuit, ...]
    labels: tuple[Label, ...]
    spec: BatchSpec | None = None

    def __post_init__(self):
        if len(self.circuits) != len(self.labels):
            raise ConfigError("labels length must match circuits length")

    def __len__(self) -> int:
        return len(self.circuits)

    @property
    def n_qubits(self) -> int:
        return max((c.n_qubits for c in self.circuits), default=0)


@dataclass(frozen=True)
class CliffordTable:
    """The 24 single-qubit Clifford operators as lowered-gate parameters.

    Entry 0 is the identity; the set is closed under composition up to global
    phase.  ``matrices`` caches ``u3_matrix`` of each entry.
    """

    params: tuple[U3Params, ...]
    matrices: tuple[np.ndarray, ...] = field(repr=False, default=())

    def __len__(self) -> int:
        return len(self.params)


def _phase_free_key(U: np.ndarray) -> bytes:
    mags = np.round(np.abs(U), 6)
    k = int(np.argmax(mags))
    v = U.flat[k]
    W = np.round(U * (abs(v) / v), 9) + (0.0 + 0.0j)  # adding zero folds -0.0 into +0.0
    return W.tobytes()


@functools.lru_cache(maxsize=1)
def clifford_table() -> CliffordTable:
    """Enumerate the 24 single-qubit Cliffords by closing {Z90, X90} over products."""
    gens = [z_matrix(math.pi / 2), X90_MATRIX]
    found: dict[bytes, np.ndarray] = {}
    frontier = [np.eye(2, dtype=complex)]
    found[_phase_free_key(frontier[0])] = frontier[0]
    while frontier:
        nxt = []
        for U in frontier:
            for g in gens:
                V = g @ U
                key = _phase_free_key(V)
                if key not in found:
                    found[key] = V
                    nxt.append(V)
        frontier = nxt
    mats = list(found.values())
    if len(mats) != 24:
        raise RuntimeError(f"Clifford closure produced {len(mats)} elements, expected 24")
    params = tuple(u3_from_unitary(U) for U in mats)
    return CliffordTable(params, tuple(u3_matrix(p) for p in params))


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng((int(seed), *key))


def _measure_all(width: tuple[int, ...]) -> list[Gate]:
    return [measure(q) for q in sorted(width)]


def _rb_circuit(width: tuple[int, ...], depth: int, shots: int, rng: np.random.Generator) -> Circuit:
    table = clifford_table()
    n_qubits = max(width) + 1
    draws = rng.integers(0, len(table), size=(depth, len(width)))
    gates: list[Gate] = []
    products = [np.eye(2, dtype=complex) for _ in width]
    for slot in range(depth):
        for qi, q in enumerate(width):
            idx = int(draws[slot, qi])
            gates.extend(u3_decompose(table.params[idx], q))
            products[qi] = table.matrices[idx] @ products[qi]
    for qi, q in enumerate(width):
        inversion = u3_from_unitary(products[qi].conj().T)
        gates.extend(u3_decompose(inversion, q))
    gates.extend(_measure_all(width))
    return Circuit(tuple(gates), n_qubits, shots)


def gen_read_circuits(width: tuple[int, ...], shots: int = 100) -> tuple[Circuit, Circuit]:
    """Readout calibration pair: prepare |0...0> and |1...1>, both fully lowered."""
    n_qubits = max(width) + 1
    out = []
    for params in (IDENTITY_PARAMS, PAULI_PARAMS["X"]):
        gates: list[Gate] = []
        for q in sorted(width):
            gates.extend(u3_decompose(params, q))
        gates.extend(_measure_all(width))
        out.append(Circuit(tuple(gates), n_qubits, shots))
    return out[0], out[1]


def iter_rb(spec: BatchSpec) -> Iterator[tuple[Circuit, Label]]:
    if spec.kind != "RB":
        raise ConfigError(f"iter_rb needs an RB spec, got {spec.kind}")
    for wi, width in enumerate(spec.widths):
        for di, depth in enumerate(spec.depths[wi]):
            for r in range(spec.rand_for(wi)):
                rng = _rng(spec.seed, _STREAM_RB, wi, di, r)
                yield _rb_circuit(width, depth, spec.shots, rng), Label(width, depth, r, "rb")
        read0, read1 = gen_read_circuits(width, spec.shots)
        yield read0, Label(width, 0, 0, "read0")
        yield read1, Label(width, 0, 1, "read1")


def gen_rb(spec: BatchSpec) -> CircuitBatch:
    pairs = list(iter_rb(spec))
    return CircuitBatch(tuple(c for c, _ in pairs), tuple(l for _, l in pairs), spec)


def _cz_chain(width: tuple[int, ...]) -> list[Gate]:
    return [cz(width[i], width[i + 1]) for i in range(0, len(width) - 1, 2)]


def _pauli_layer(width: tuple[int, ...], names: list[str]) -> list[Gate]:
    gates: list[Gate] = []
    for q, name in zip(width, names):
        gates.extend(u3_decompose(PAULI_PARAMS[name], q))
    return gates


def _cb_circuit(width: tuple[int, ...], depth: int, shots: int, rng: np.random.Generator) -> Circuit:
    n_qubits = max(width) + 1
    gates: list[Gate] = []
    for q, b in zip(width, rng.integers(0, 3, size=len(width))):
        gates.extend(u3_decompose(BASIS_PREP_PARAMS[int(b)], q))
    for _ in range(depth):
        names = [PAULI_NAMES[int(i)] for i in rng.integers(0, 4, size=len(width))]
        gates.extend(_pauli_layer(width, names))
        gates.extend(_cz_chain(width))
    names = [PAULI_NAMES[int(i)] for i in rng.integers(0, 4, size=len(width))]
    gates.extend(_pauli_layer(width, names))
    gates.extend(_measure_all(width))
    return Circuit(tuple(gates), n_qubits, shots)


def iter_cb(spec: BatchSpec) -> Iterator[tuple[Circuit, Label]]:
    if spec.kind != "CB":
        raise ConfigError(f"iter_cb needs a CB spec, got {spec.kind}")
    for wi, width in enumerate(spec.widths):
        for di, depth in enumerate(spec.depths[wi]):
            for r in range(spec.rand_for(wi)):
                rng = _rng(spec.seed, _STREAM_CB, wi, di, r)
                yield _cb_circuit(width, depth, spec.shots, rng), Label(width, depth, r, "cb")


def gen_cb(spec: BatchSpec) -> CircuitBatch:
    pairs = list(iter_cb(spec))
    return CircuitBatch(tuple(c for c, _ in pairs), tuple(l for _, l in pairs), spec)


# --- randomized dressing of a layered base circuit ---------------------------


@dataclass(frozen=True)
class _LayeredBase:
    easy: tuple[dict[int, np.ndarray], ...]  # per layer: qubit -> 2x2 matrix
    hard: tuple[tuple[tuple[int, int], ...], ...]  # per layer: disjoint CZ pairs
    active: tuple[int, ...]
    n_qubits: int
    shots: int


def _parse_layers(base: Circuit) -> _LayeredBase:
    """Split a base circuit into alternating single-qubit and CZ layers."""
    easy: list[dict[int, np.ndarray]] = [{}]
    hard: list[list[tuple[int, int]]] = []
    active: set[int] = set()
    seen_measure = False
    in_hard = False
    for g in base.gates:
        if g.kind is GateKind.MEASURE:
            seen_measure = True
            active.add(g.qubits[0])
            continue
        if seen_measure:
            raise ConfigError("base circuit has gates after measurement")
        if g.kind is GateKind.TWO_QUBIT:
            if g.two_qubit_name != "CZ":
                raise ConfigError(f"dressing supports CZ layers only, got {g.two_qubit_name!r}")
            a, b = g.qubits
            if not in_hard:
                hard.append([])
                in_hard = True
            busy = {q for pair in hard[-1] for q in pair}
            if a in busy or b in busy:
                raise ConfigError(f"hard layer reuses qubit in CZ({a},{b})")
            hard[-1].append((a, b))
            active.update((a, b))
        elif g.kind in (GateKind.X90, GateKind.VIRTUAL_Z):
            if in_hard:
                easy.append({})
                in_hard = False
            q = g.qubits[0]
            m = X90_MATRIX if g.kind is GateKind.X90 else z_matrix(g.phase)
            easy[-1][q] = m @ easy[-1].get(q, np.eye(2, dtype=complex))
            active.add(q)
        else:
            raise ConfigError(f"base circuit may not contain {g.kind.value} gates")
    if in_hard:
        easy.append({})  # trailing correction layer slot
    if len(easy) != len(hard) + 1:
        raise ConfigError("base circuit does not alternate single- and two-qubit layers")
    return _LayeredBase(
        tuple(easy), tuple(tuple(h) for h in hard), tuple(sorted(active)), base.n_qubits, base.shots
    )


def _dress(layers: _LayeredBase, rng: np.random.Generator | None) -> Circuit:
    """Twirl every easy layer with random Paulis and fold in the corrections."""
    gates: list[Gate] = []
    corr = {q: "I" for q in layers.active}
    last = len(layers.easy) - 1
    for k, easy in enumerate(layers.easy):
        if k < last and rng is not None:
            draws = rng.integers(0, 4, size=len(layers.active))
            twirl = {q: PAULI_NAMES[int(d)] for q, d in zip(layers.active, draws)}
        else:
            twirl = {q: "I" for q in layers.active}
        for q in layers.active:
            m = (
                _PAULI_MATRICES[twirl[q]]
                @ easy.get(q, np.eye(2, dtype=complex))
                @ _PAULI_MATRICES[corr[q]]
            )
            gates.extend(u3_decompose(u3_from_unitary(m), q))
        if k < last:
            corr = dict(twirl)
            for a, b in layers.hard[k]:
                corr[a], corr[b] = _cz_conjugate(twirl[a], twirl[b])
            gates.extend(cz(a, b) for a, b in layers.hard[k])
    gates.extend(measure(q) for q in layers.active)
    return Circuit(tuple(gates), layers.n_qubits, layers.shots)


def gen_rc(
    base: Circuit,
    n_rand: int,
    seed: int,
    identity_twirl: bool = False,
    stream: tuple[int, ...] = (),
) -> CircuitBatch:
    """Generate ``n_rand`` logically-equivalent dressings of a layered base circuit."""
    if n_rand < 1:
        raise ConfigError("n_rand must be at least 1")
    layers = _parse_layers(base)
    circuits = []
    labels = []
    for r in range(n_rand):
        rng = None if identity_twirl else _rng(seed, _STREAM_RC, *stream, r)
        circuits.append(_dress(layers, rng))
        labels.append(Label(layers.active, len(layers.hard), r, "rc"))
    return CircuitBatch(tuple(circuits), tuple(labels))


def gen_random_base(
    width: tuple[int, ...], n_cycles: int, rng: np.random.Generator, shots: int = 100
) -> Circuit:
    """Random layered circuit: n_cycles of (random single-qubit layer, CZ chain),
    plus a closing single-qubit layer and measurements."""
    n_qubits = max(width) + 1
    gates: list[Gate] = []
    for k in range(n_cycles + 1):
        for q in width:
            angles = rng.uniform(0.0, TAU, size=3)
            gates.extend(u3_decompose(U3Params(*angles), q))
        if k < n_cycles:
            gates.extend(_cz_chain(width))
    gates.extend(_measure_all(width))
    return Circuit(tuple(gates), n_qubits, shots)


def iter_rc(spec: BatchSpec) -> Iterator[tuple[Circuit, Label]]:
    if spec.kind not in ("RC", "FRC"):
        raise ConfigError(f"iter_rc needs an RC/FRC spec, got {spec.kind}")
    for wi, width in enumerate(spec.widths):
        for di, depth in enumerate(spec.depths[wi]):
            base = gen_random_base(width, depth, _rng(spec.seed, _STREAM_BASE, wi, di), spec.shots)
            batch = gen_rc(base, spec.rand_for(wi), spec.seed, stream=(wi, di))
            for c, label in zip(batch.circuits, batch.labels):
                yield c, Label(width, depth, label.randomization, "rc")


def iter_batch(spec: BatchSpec) -> Iterator[tuple[Circuit, Label]]:
    if spec.kind == "RB":
        return iter_rb(spec)
    if spec.kind == "CB":
        return iter_cb(spec)
    return iter_rc(spec)


def gen_batch(spec: BatchSpec) -> CircuitBatch:
    pairs = list(iter_batch(spec))
    return CircuitBatch(tuple(c for c, _ in pairs), tuple(l for _, l in pairs), spec)


# full-scale reference configurations used by the dedup benchmarks
def preset_spec(name: str, seed: int = 0) -> BatchSpec:
    widths_2_to_8 = tuple(tuple(range(n)) for n in range(2, 9))
    if name == "rc20":
        return BatchSpec(
            "RC", widths_2_to_8, (tuple([1] + list(range(10, 101, 10))),), 20, shots=50, seed=seed
        )
    if name == "frc":
        return BatchSpec(
            "FRC", widths_2_to_8, (tuple([1] + list(range(10, 101, 10))),), 1000, shots=1, seed=seed
        )
    if name == "cb":
        return BatchSpec(
            "CB",
            (tuple(range(2)), tuple(range(4)), tuple(range(6)), tuple(range(8))),
            ((4, 16, 64), (4, 8, 32), (2, 4, 8), (2, 4, 8)),
            (180, 220, 320, 360),
            shots=100,
            seed=seed,
        )
    if name == "rb":
        return BatchSpec(
            "RB",
            tuple(tuple(range(n)) for n in range(1, 9)),
            (
                (16, 128, 384),
                (16, 96, 384),
                (16, 64, 256),
                (16, 64, 192),
                (8, 64, 192),
                (8, 32, 160),
                (4, 32, 160),
                (4, 32, 128),
            ),
            30,
            shots=100,
            seed=seed,
        )
    raise ConfigError(f"unknown preset {name!r}; choose from rc20, frc, cb, rb")
