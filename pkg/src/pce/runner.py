"""Host-side experiment orchestration for both execution modes.

``baseline`` compiles, assembles, and loads every circuit in the batch;
``pce`` runs the dedup pass first, compiles only the unique representatives,
ships the peeled phases as one binary blob, and lets the deft scheduler
re-stitch them at run time.  Both paths drive the control session through the
same RPC framing and fill one profile record whose iteration counts carry the
amortization story.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .asm import MachineProgram, assemble, compile_circuit
from .control import (
    CYCLE_NS,
    REQUEST_LATENCY_CYCLES,
    ControlSession,
    PulseTrace,
    ShotData,
    TimingConfig,
    deft_run,
)
from .errors import ConfigError
from .fileio import batch_hash
from .generators import CircuitBatch
from .profiling import ProfileRecord
from .rip import EquivalenceReport, binarize, rip
from .rpc import ControlServer, DeftClient, LoopbackChannel

# small fixed definition tables loaded once per experiment
_DEFAULT_ENVELOPE = np.exp(1j * np.linspace(0.0, 1.0, 64))
_DEFAULT_FREQ = np.linspace(4.0e9, 6.0e9, 8)

MODES = ("baseline", "pce")


@dataclass
class ExperimentOutcome:
    mode: str
    batch: CircuitBatch
    data: dict[int, ShotData]
    counts: dict[int, dict[str, int]]
    traces: dict[int, PulseTrace]
    record: ProfileRecord
    batch_hash: str
    report: EquivalenceReport | None = None
    blob: bytes | None = None
    uniques: dict[int, MachineProgram] = field(default_factory=dict)
    stitch_requests: int = 0
    sim_time_ns: int = 0


def run_experiment(
    get_circuits: Callable[[], object],
    transpile: Callable[[object], CircuitBatch],
    mode: str,
    seed: int = 0,
    shots: int | None = None,
    timing: TimingConfig = TimingConfig(),
    channel_factory: Callable[[ControlSession], object] | None = None,
    blob_override: bytes | None = None,
) -> ExperimentOutcome:
    """Run one experiment end to end and return its data, traces, and profile."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    record = ProfileRecord()
    session = ControlSession(seed=seed, timing=timing, record=record)
    if channel_factory is None:
        channel = LoopbackChannel(ControlServer(session))
    else:
        channel = channel_factory(session)
    client = DeftClient(channel)
    record.push("Total")
    try:
        with record.scope("Pre-compile"):
            with record.scope("Get circuit"):
                raw = get_circuits()
            with record.scope("Transpile"):
                batch = transpile(raw)
        outcome = ExperimentOutcome(
            mode, batch, {}, {}, {}, record, batch_hash(batch)
        )
        if mode == "pce":
            _run_pce(batch, client, record, outcome, shots, blob_override)
        else:
            _run_baseline(batch, client, record, outcome, shots)
        record.add_computed(
            "Client/Server", channel.transfer_ns, getattr(channel, "frames", 1)
        )
        served = session.total_served
        if served:
            record.add_computed("Stitch", served * REQUEST_LATENCY_CYCLES * CYCLE_NS, served)
        outcome.stitch_requests = served
    finally:
        record.pop("Total")
        if hasattr(channel, "close"):
            channel.close()
    outcome.traces = {i: session.results[i].trace for i in session.results}
    outcome.sim_time_ns = sum(r.sim_time_ns for r in session.results.values())
    return outcome


def _sort_data(record, data, outcome):
    counts = {}
    for idx in sorted(data):
        with record.scope("Data Sort"):
            counts[idx] = data[idx].counts()
    outcome.data = data
    outcome.counts = counts


def _run_baseline(batch, client, record, outcome, shots):
    record.mark_zero("Active")
    with record.scope("Build Run"):
        programs: dict[int, MachineProgram] = {}
        for i, circuit in enumerate(batch.circuits):
            with record.scope("Compile"):
                asm_program = compile_circuit(circuit)
            with record.scope("Assemble"):
                programs[i] = assemble(asm_program)
        with record.scope("RunAll on Host"):
            with record.scope("Run on Host"):
                client.load_defs(_DEFAULT_ENVELOPE, _DEFAULT_FREQ)
                data: dict[int, ShotData] = {}
                for i, program in programs.items():
                    client.load_circuit(i, program)
                    client.run(shots if shots is not None else program.shots)
                    data[i] = client.get_data()
            _sort_data(record, data, outcome)


def _run_pce(batch, client, record, outcome, shots, blob_override):
    with record.scope("RIP"):
        result = rip(batch)
        blob = binarize(result.report, result.table)
    record.mark_zero("Active")
    with record.scope("Build Run"):
        uniques: dict[int, MachineProgram] = {}
        for gi, group in enumerate(result.report.groups):
            with record.scope("Compile"):
                asm_program = compile_circuit(result.uniques[gi])
            with record.scope("Assemble"):
                uniques[group[0]] = assemble(asm_program)
        with record.scope("RunAll on Host"):
            with record.scope("Run on Host"):
                client.load_defs(_DEFAULT_ENVELOPE, _DEFAULT_FREQ)
                data = deft_run(
                    result.report.order,
                    uniques,
                    blob_override if blob_override is not None else blob,
                    client,
                    shots=shots,
                )
            _sort_data(record, data, outcome)
    outcome.report = result.report
    outcome.blob = blob
    outcome.uniques = uniques
