"""Oracle suites: everything cross-checked by an independent route.

Each suite returns CheckResult rows; the first failure carries a concrete
counterexample (circuit index, qubit/channel, event) so a corrupted phase
word or a broken grouping is nameable, not just boolean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .asm import assemble, compile_circuit, disassemble, machine_from_bytes, machine_to_bytes
from .circuits import Circuit, GateKind, circuit_unitary, global_phase_distance, vz
from .control import PulseTrace, TimingConfig
from .errors import PceError
from .generators import CircuitBatch
from .rip import (
    binarize,
    debinarize,
    dequantize_word,
    identify,
    identify_bruteforce,
    modify,
    peel,
    rip,
)
from .rpc import (
    Ack,
    GetData,
    LoadCircuit,
    LoadDefs,
    LoadParams,
    Run,
    rpc_decode,
    rpc_encode,
)
from .runner import run_experiment

UNITARY_ORACLE_MAX_QUBITS = 4


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str = ""

    def line(self) -> str:
        return f"CHECK {self.name}: {'PASS' if self.ok else 'FAIL'}" + (
            f" ({self.detail})" if self.detail else ""
        )


def first_trace_mismatch(a: PulseTrace, b: PulseTrace) -> str | None:
    if a == b:
        return None
    if len(a) != len(b):
        return f"event counts differ ({len(a)} vs {len(b)})"
    for i in range(len(a)):
        for fname, fa, fb in (
            ("kind", a.kinds[i], b.kinds[i]),
            ("time", a.times[i], b.times[i]),
            ("channel", a.channels[i], b.channels[i]),
            ("partner", a.channels2[i], b.channels2[i]),
            ("phase word", a.phases[i], b.phases[i]),
        ):
            if fa != fb:
                return (
                    f"event {i} on qubit {int(a.channels[i])}: "
                    f"{fname} {fa} vs {fb}"
                )
    return "traces differ in metadata"


def check_dedup_oracle(batch: CircuitBatch) -> CheckResult:
    fast = identify(batch)
    slow = identify_bruteforce(batch)
    if fast == slow:
        return CheckResult("dedup-oracle", True, f"{len(fast.groups)} groups")
    return CheckResult(
        "dedup-oracle",
        False,
        f"bucketed and pairwise grouping disagree: {fast.groups[:3]}... vs {slow.groups[:3]}...",
    )


def check_blob_round_trip(batch: CircuitBatch) -> CheckResult:
    result = rip(batch)
    blob = binarize(result.report, result.table)
    try:
        report2, table2 = debinarize(blob)
    except PceError as exc:
        return CheckResult("blob-round-trip", False, str(exc))
    if report2 != result.report or table2 != result.table:
        return CheckResult("blob-round-trip", False, "decode does not reproduce the tables")
    if binarize(report2, table2) != blob:
        return CheckResult("blob-round-trip", False, "re-encode is not byte-stable")
    return CheckResult("blob-round-trip", True, f"{len(blob)} bytes")


def check_machine_round_trip(batch: CircuitBatch) -> CheckResult:
    result = rip(batch)
    for gi, circuit in enumerate(result.uniques):
        program = compile_circuit(circuit)
        machine = assemble(program)
        if disassemble(machine) != program:
            return CheckResult("machine-round-trip", False, f"unique {gi}: op stream mismatch")
        if machine_from_bytes(machine_to_bytes(machine)) != machine:
            return CheckResult("machine-round-trip", False, f"unique {gi}: file image mismatch")
    return CheckResult("machine-round-trip", True, f"{len(result.uniques)} programs")


def check_rpc_round_trip(batch: CircuitBatch) -> CheckResult:
    result = rip(batch)
    samples: list[object] = [GetData(), Ack(), Run(17)]
    samples.append(LoadDefs(np.exp(1j * np.linspace(0, 2, 16)), np.linspace(4e9, 5e9, 4)))
    for idx in result.report.unique_indices[:4]:
        gi = result.report.unique_indices.index(idx)
        samples.append(LoadCircuit(idx, assemble(compile_circuit(result.uniques[gi]))))
        samples.append(LoadParams(idx, result.table.words_for(idx)))
    for msg in samples:
        decoded, consumed = rpc_decode(rpc_encode(msg))
        if decoded != msg or consumed != len(rpc_encode(msg)):
            return CheckResult("rpc-round-trip", False, f"{type(msg).__name__} mismatch")
    return CheckResult("rpc-round-trip", True, f"{len(samples)} frames")


def _strip_measures(c: Circuit) -> Circuit:
    return Circuit(
        tuple(g for g in c.gates if g.kind is not GateKind.MEASURE), c.n_qubits, c.shots
    )


def check_unitaries(batch: CircuitBatch) -> CheckResult:
    """Role-specific logic checks on every oracle-sized circuit in the batch."""
    report = identify(batch)
    rep_unitaries: dict[int, np.ndarray] = {}
    checked = 0
    for i, (circuit, label) in enumerate(zip(batch.circuits, batch.labels)):
        if circuit.n_qubits > UNITARY_ORACLE_MAX_QUBITS:
            continue
        U = circuit_unitary(_strip_measures(circuit))
        checked += 1
        if label.role == "rb":
            if global_phase_distance(U, np.eye(U.shape[0])) > 1e-9:
                return CheckResult("unitary", False, f"circuit {i}: sequence does not invert")
        elif label.role == "rc":
            gi = report.group_of(i)
            rep = report.groups[gi][0]
            if rep not in rep_unitaries:
                rep_unitaries[rep] = circuit_unitary(_strip_measures(batch.circuits[rep]))
            if global_phase_distance(U, rep_unitaries[rep]) > 1e-9:
                return CheckResult(
                    "unitary", False, f"circuit {i}: not equivalent to representative {rep}"
                )
    return CheckResult("unitary", True, f"{checked} circuits checked")


def check_peel_reinsertion(batch: CircuitBatch, limit: int = 50) -> CheckResult:
    """Re-inserting dequantized words at request positions reproduces each unitary."""
    checked = 0
    for i, circuit in enumerate(batch.circuits):
        if circuit.n_qubits > UNITARY_ORACLE_MAX_QUBITS or checked >= limit:
            continue
        words = peel(circuit)
        cursors = [0] * circuit.n_qubits
        rebuilt = []
        for g in modify(circuit).gates:
            if g.kind is GateKind.PARAM_REQUEST:
                q = g.qubits[0]
                rebuilt.append(vz(q, dequantize_word(int(words[q][cursors[q]]))))
                cursors[q] += 1
            else:
                rebuilt.append(g)
        a = circuit_unitary(_strip_measures(circuit))
        b = circuit_unitary(_strip_measures(Circuit(tuple(rebuilt), circuit.n_qubits, circuit.shots)))
        if global_phase_distance(a, b) > 1e-6:
            return CheckResult("peel-reinsertion", False, f"circuit {i}: unitary drifted")
        checked += 1
    return CheckResult("peel-reinsertion", True, f"{checked} circuits checked")


def check_trace_equivalence(
    batch: CircuitBatch,
    seed: int = 0,
    shots: int | None = None,
    timing: TimingConfig = TimingConfig(),
    blob_override: bytes | None = None,
) -> CheckResult:
    """The central check: stitched execution must replay the baseline bit-for-bit."""
    base = run_experiment(lambda: batch, lambda b: b, "baseline", seed=seed, shots=shots, timing=timing)
    stitched = run_experiment(
        lambda: batch,
        lambda b: b,
        "pce",
        seed=seed,
        shots=shots,
        timing=timing,
        blob_override=blob_override,
    )
    for i in range(len(batch)):
        mismatch = first_trace_mismatch(base.traces[i], stitched.traces[i])
        if mismatch is not None:
            return CheckResult("trace-equivalence", False, f"circuit {i}: {mismatch}")
        if base.data[i] != stitched.data[i]:
            return CheckResult("trace-equivalence", False, f"circuit {i}: shot data differs")
    if base.sim_time_ns != stitched.sim_time_ns:
        return CheckResult(
            "trace-equivalence",
            False,
            f"simulated run time differs ({base.sim_time_ns} vs {stitched.sim_time_ns})",
        )
    return CheckResult("trace-equivalence", True, f"{len(batch)} circuits, bit-exact")


def verify_batch(
    batch: CircuitBatch,
    seed: int = 0,
    shots: int | None = None,
    timing: TimingConfig = TimingConfig(),
    blob_override: bytes | None = None,
) -> list[CheckResult]:
    checks = [
        check_dedup_oracle(batch),
        check_blob_round_trip(batch),
        check_machine_round_trip(batch),
        check_rpc_round_trip(batch),
        check_unitaries(batch),
        check_peel_reinsertion(batch),
    ]
    try:
        checks.append(
            check_trace_equivalence(batch, seed=seed, shots=shots, timing=timing,
                                    blob_override=blob_override)
        )
    except PceError as exc:
        checks.append(CheckResult("trace-equivalence", False, str(exc)))
    return checks
