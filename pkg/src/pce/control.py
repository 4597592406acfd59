"""Deterministic control-stack model: parameter memory, stitch logic, executor,
and the deft scheduler.

The executor interprets assembled machine words with one integer phase
accumulator per qubit (32-bit wraparound, reset each shot).  INC_PHASE adds
its immediate, REQ_PARAM adds the next stitched word for that qubit, and
every physical pulse is logged as a trace event stamped with the current
accumulator.  Because both sides work on the same quantized words, a directly
compiled circuit and its stitched representative produce bit-identical traces.

Timing model: every instruction costs 2 cycles to issue (500 MHz, so 4 ns;
prefetch means a parameter request costs the same as a local phase update).
Physical durations are per-channel: X90 16 ns, CZ 100 ns (with the two
channels synchronized), MEASURE 500 ns, DELAY as written, and a configurable
passive-reset gap (default 500 ns) between shots.

Measurement bits are sampled noiselessly from the executed pulse trace via a
small state-vector computation for up to 4 qubits (per-shot seeded sampler);
wider programs run trace-only with all bits zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .asm import MachineProgram
from .errors import (
    AddressError,
    CapacityError,
    PceError,
    RoutingError,
    SchedulingError,
    UnderflowError,
    ValidationError,
)
from .rip import BANK_CAPACITY, debinarize, dequantize_words

N_BANKS = 8
CYCLE_NS = 2  # 500 MHz clock
REQUEST_LATENCY_CYCLES = 2  # prefetch always hits: 4 ns per request
MCM_CORE_BASE = 8  # core ids below this address parameter banks

ENVELOPE_CAPACITY = 4096
FREQ_CAPACITY = 64
COMMAND_BUFFER_WORDS = 1024

EVENT_KIND_NAMES = {
    kernels.EV_X90: "X90",
    kernels.EV_CZ: "CZ",
    kernels.EV_MEASURE: "MEASURE",
    kernels.EV_DELAY: "DELAY",
}


@dataclass(frozen=True)
class TimingConfig:
    x90_ns: int = 16
    cz_ns: int = 100
    measure_ns: int = 500
    reset_ns: int = 500


def addr_map(axi: int) -> tuple[int, int]:
    """Split a 32-bit AXI address into (bank, offset): top 3 of 14 bits select the bank."""
    if axi < 0 or axi >> 14:
        raise AddressError(f"address {axi:#x} uses bits above the 14-bit window")
    return axi >> 11, axi & 0x7FF


class ParameterMemory:
    """Eight parallel 2048-word banks of 32-bit parameters, one per qubit."""

    def __init__(self, debug: bool = False):
        self.banks = np.zeros((N_BANKS, BANK_CAPACITY), dtype=np.uint32)
        self.debug = debug

    def _check_bank(self, bank: int) -> None:
        if not 0 <= bank < N_BANKS:
            raise RoutingError(f"bank {bank} outside 0..{N_BANKS - 1}")

    def write_params(self, bank: int, words) -> int:
        """Controller-side write of a circuit's words at the start of a bank."""
        self._check_bank(bank)
        arr = np.asarray(words, dtype=np.uint32)
        if arr.size > BANK_CAPACITY:
            raise CapacityError(bank, int(arr.size))
        self.banks[bank, : arr.size] = arr
        return int(arr.size)

    def read_param(self, bank: int, offset: int) -> int:
        """Stitch-side read."""
        self._check_bank(bank)
        if not 0 <= offset < BANK_CAPACITY:
            raise AddressError(f"offset {offset} outside 0..{BANK_CAPACITY - 1}")
        return int(self.banks[bank, offset])

    # dual-port debug paths; the mirrored directions exist only for bring-up
    def debug_read_controller(self, bank: int, offset: int) -> int:
        if not self.debug:
            raise PceError("controller read-back is a debug-only path")
        return self.read_param(bank, offset)

    def debug_write_stitch(self, bank: int, offset: int, word: int) -> None:
        if not self.debug:
            raise PceError("stitch-side write is a debug-only path")
        self._check_bank(bank)
        if not 0 <= offset < BANK_CAPACITY:
            raise AddressError(f"offset {offset} outside 0..{BANK_CAPACITY - 1}")
        self.banks[bank, offset] = np.uint32(word)


@dataclass(frozen=True)
class StitchConfig:
    """Per-circuit control codes: words per bank, shot count, optional repeat window."""

    param_counts: tuple[int, ...]
    shots: int
    windows: tuple[tuple[int, int] | None, ...] | None = None  # (start, count) per bank
    mcm_core_ids: frozenset[int] = frozenset()

    def __post_init__(self):
        if len(self.param_counts) > N_BANKS:
            raise ValidationError(f"{len(self.param_counts)} banks configured, have {N_BANKS}")
        pcs = tuple(int(p) for p in self.param_counts) + (0,) * (N_BANKS - len(self.param_counts))
        object.__setattr__(self, "param_counts", pcs)
        for q, pc in enumerate(pcs):
            if not 0 <= pc <= BANK_CAPACITY:
                raise CapacityError(q, pc)
        if self.shots <= 0:
            raise ValidationError("shots must be positive")
        if self.windows is not None:
            wins = tuple(self.windows) + (None,) * (N_BANKS - len(self.windows))
            for q, w in enumerate(wins):
                if w is None:
                    continue
                start, count = w
                if count < 1 or start < 0 or start + count > pcs[q]:
                    raise ValidationError(
                        f"window {w} on bank {q} outside its {pcs[q]}-word parameter set"
                    )
            object.__setattr__(self, "windows", wins)
        for cid in self.mcm_core_ids:
            if cid < MCM_CORE_BASE:
                raise ValidationError(f"core id {cid} is a parameter bank, not an mcm route")

    def window_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        start = np.zeros(N_BANKS, dtype=np.int64)
        count = np.asarray(self.param_counts, dtype=np.int64).copy()
        if self.windows is not None:
            for q, w in enumerate(self.windows):
                if w is not None:
                    start[q], count[q] = w
        return start, count

    def budget(self, bank: int) -> int:
        """Total serviceable requests: one full pass, then shots-1 window passes."""
        pc = self.param_counts[bank]
        if pc == 0:
            return 0
        _, count = self.window_arrays()
        return pc + (self.shots - 1) * int(count[bank])


class StitchUnit:
    """Serves phase words to executing circuits and routes mid-circuit measurements.

    Parameter cursors walk each bank FIFO: the first pass covers the circuit's
    full word set, every later pass repeats the configured window (the full
    set by default), once per shot.  Mid-circuit-measurement core ids never
    touch the cursors; they pop from their own bit queues.
    """

    def __init__(self, memory: ParameterMemory, config: StitchConfig):
        self.memory = memory
        self.config = config
        self.win_start, self.win_count = config.window_arrays()
        self.cursor = np.zeros(N_BANKS, dtype=np.int64)
        self.pass_idx = np.zeros(N_BANKS, dtype=np.int64)
        self.served = np.zeros(N_BANKS, dtype=np.int64)
        self._mcm_bits: dict[int, list[int]] = {cid: [] for cid in config.mcm_core_ids}

    def push_mcm(self, core_id: int, bit: int) -> None:
        if core_id not in self._mcm_bits:
            raise RoutingError(f"core id {core_id} is not an mcm route")
        self._mcm_bits[core_id].append(int(bit) & 1)

    def request(self, core_id: int) -> tuple[int, int]:
        """Return (word, latency_cycles) for a parameter or mcm request."""
        if core_id >= MCM_CORE_BASE or core_id < 0:
            queue = self._mcm_bits.get(core_id)
            if queue is None:
                raise RoutingError(f"unknown core id {core_id}")
            if not queue:
                raise RoutingError(f"mcm route {core_id} has no measurement pending")
            return queue.pop(0), REQUEST_LATENCY_CYCLES
        pc = self.config.param_counts[core_id]
        if pc == 0 or self.pass_idx[core_id] >= self.config.shots:
            raise UnderflowError(core_id)
        word = self.memory.read_param(core_id, int(self.cursor[core_id]))
        self.served[core_id] += 1
        self.cursor[core_id] += 1
        limit = pc if self.pass_idx[core_id] == 0 else self.win_start[core_id] + self.win_count[core_id]
        if self.cursor[core_id] >= limit:
            self.pass_idx[core_id] += 1
            self.cursor[core_id] = self.win_start[core_id]
        return word, REQUEST_LATENCY_CYCLES


@dataclass(frozen=True)
class PulseEvent:
    time_ns: int
    channel: int
    kind: str
    frame_phase_word: int
    channel2: int | None = None


@dataclass(frozen=True)
class PulseTrace:
    """Timestamped pulse/phase event log; the bit-exact comparison object."""

    times: np.ndarray  # int64
    channels: np.ndarray  # int16
    channels2: np.ndarray  # int16, -1 when absent
    kinds: np.ndarray  # uint8
    phases: np.ndarray  # uint32
    n_qubits: int
    shots: int
    events_per_shot: int

    def __len__(self) -> int:
        return len(self.times)

    def event(self, i: int) -> PulseEvent:
        ch2 = int(self.channels2[i])
        return PulseEvent(
            int(self.times[i]),
            int(self.channels[i]),
            EVENT_KIND_NAMES[int(self.kinds[i])],
            int(self.phases[i]),
            None if ch2 < 0 else ch2,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, PulseTrace):
            return NotImplemented
        return (
            self.n_qubits == other.n_qubits
            and self.shots == other.shots
            and self.events_per_shot == other.events_per_shot
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.channels, other.channels)
            and np.array_equal(self.channels2, other.channels2)
            and np.array_equal(self.kinds, other.kinds)
            and np.array_equal(self.phases, other.phases)
        )

    def to_text(self) -> str:
        lines = []
        for i in range(len(self.times)):
            ch = int(self.channels[i])
            ch2 = int(self.channels2[i])
            chs = f"{ch}" if ch2 < 0 else f"{ch},{ch2}"
            lines.append(
                f"t={int(self.times[i])} ch={chs} "
                f"kind={EVENT_KIND_NAMES[int(self.kinds[i])]} phase=0x{int(self.phases[i]):08x}"
            )
        return "\n".join(lines) + ("\n" if lines else "")


@dataclass(frozen=True)
class ShotData:
    """Per-shot measured bits plus the aggregated bitstring histogram."""

    measured_qubits: tuple[int, ...]
    bits: np.ndarray  # uint8, shape (shots, len(measured_qubits))

    @property
    def shots(self) -> int:
        return int(self.bits.shape[0])

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for row in self.bits:
            key = "".join(str(int(b)) for b in row)
            out[key] = out.get(key, 0) + 1
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, ShotData):
            return NotImplemented
        return self.measured_qubits == other.measured_qubits and np.array_equal(
            self.bits, other.bits
        )

    def to_text(self) -> str:
        lines = [
            "measured " + " ".join(str(q) for q in self.measured_qubits),
            f"shots {self.shots}",
        ]
        lines += [f"{key} {n}" for key, n in sorted(self.counts().items())]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ExecResult:
    trace: PulseTrace
    data: ShotData
    cycle_count: int
    served: np.ndarray
    sim_time_ns: int  # modeled Start-Run duration: issue cycles + channel timeline


_STATUS_KIND = {
    kernels.STATUS_BAD_OPCODE: "unknown opcode",
    kernels.STATUS_BAD_CHANNEL: "channel out of range",
}


def _apply_1q_state(state: np.ndarray, m: np.ndarray, q: int, n: int) -> np.ndarray:
    T = state.reshape((2,) * n)
    T = np.tensordot(m, T, axes=([1], [q]))
    return np.moveaxis(T, 0, q).reshape(-1)


def _trace_shot_distribution(
    trace: PulseTrace, shot: int, n: int
) -> tuple[np.ndarray, tuple[int, ...]]:
    """Probabilities of the final state played by one shot's events."""
    k = trace.events_per_shot
    lo, hi = shot * k, (shot + 1) * k
    state = np.zeros(1 << n, dtype=complex)
    state[0] = 1.0
    measured: list[int] = []
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    for i in range(lo, hi):
        kind = int(trace.kinds[i])
        ch = int(trace.channels[i])
        if kind == kernels.EV_X90:
            phi = dequantize_words(trace.phases[i : i + 1])[0]
            e = np.exp(1j * phi)
            m = np.array([[1.0, -1j / e], [-1j * e, 1.0]], dtype=complex) * inv_sqrt2
            state = _apply_1q_state(state, m, ch, n)
        elif kind == kernels.EV_CZ:
            ch2 = int(trace.channels2[i])
            T = state.reshape((2,) * n)
            idx: list = [slice(None)] * n
            idx[ch] = 1
            idx[ch2] = 1
            T[tuple(idx)] *= -1.0
            state = T.reshape(-1)
        elif kind == kernels.EV_MEASURE:
            measured.append(ch)
    probs = np.abs(state) ** 2
    return probs, tuple(sorted(measured))


def _sample_bits(
    trace: PulseTrace, n_qubits: int, shots: int, seed: int, circuit_index: int
) -> ShotData:
    if trace.events_per_shot == 0 or not np.any(trace.kinds == kernels.EV_MEASURE):
        return ShotData((), np.zeros((shots, 0), dtype=np.uint8))
    if n_qubits > 4:
        # trace-only mode: report deterministic zeros
        k = trace.events_per_shot
        measured = tuple(
            sorted(
                int(c)
                for c in np.unique(trace.channels[:k][trace.kinds[:k] == kernels.EV_MEASURE])
            )
        )
        return ShotData(measured, np.zeros((shots, len(measured)), dtype=np.uint8))
    k = trace.events_per_shot
    base_phases = trace.phases[:k]
    probs0, measured = _trace_shot_distribution(trace, 0, n_qubits)
    cum0 = np.cumsum(probs0)
    bits = np.zeros((shots, len(measured)), dtype=np.uint8)
    for s in range(shots):
        if s == 0 or np.array_equal(trace.phases[s * k : (s + 1) * k], base_phases):
            cum = cum0
        else:
            probs, _ = _trace_shot_distribution(trace, s, n_qubits)
            cum = np.cumsum(probs)
        r = np.random.default_rng((seed, circuit_index, s)).random()
        idx = int(np.searchsorted(cum, r * cum[-1], side="right"))
        idx = min(idx, (1 << n_qubits) - 1)
        for j, q in enumerate(measured):
            bits[s, j] = (idx >> (n_qubits - 1 - q)) & 1
    return ShotData(measured, bits)


def execute(
    program: MachineProgram,
    stitch: StitchConfig | None = None,
    memory: ParameterMemory | None = None,
    shots: int | None = None,
    timing: TimingConfig = TimingConfig(),
    seed: int = 0,
    circuit_index: int = 0,
    sample_bits: bool = True,
) -> ExecResult:
    """Run a machine program for N shots against the parameter memory."""
    n_qubits = program.n_qubits
    shots = int(shots if shots is not None else program.shots)
    if shots <= 0:
        raise ValidationError("shots must be positive")
    banks = (memory.banks if memory is not None else np.zeros((N_BANKS, BANK_CAPACITY), np.uint32))
    if stitch is None:
        stitch = StitchConfig((0,) * N_BANKS, shots)
    win_start, win_count = stitch.window_arrays()
    param_count = np.asarray(stitch.param_counts, dtype=np.int64)
    words = np.ascontiguousarray(program.words, dtype=np.uint64)
    if n_qubits > N_BANKS:
        ops = (words >> np.uint64(56)).astype(np.int64)
        req_ch = (words[ops == kernels.OP_REQ_PARAM] >> np.uint64(48)) & np.uint64(0xFF)
        if req_ch.size and int(req_ch.max()) >= N_BANKS:
            raise ValidationError(
                f"parameter request on qubit {int(req_ch.max())}, only {N_BANKS} banks exist"
            )
    n_emit = kernels.count_emitting_ops(words)
    total = n_emit * shots
    ev_time = np.zeros(total, dtype=np.int64)
    ev_ch = np.zeros(total, dtype=np.int16)
    ev_ch2 = np.zeros(total, dtype=np.int16)
    ev_kind = np.zeros(total, dtype=np.uint8)
    ev_phase = np.zeros(total, dtype=np.uint32)
    served = np.zeros(N_BANKS, dtype=np.int64)
    status, err_shot, err_op, err_core, n_events, cycles, final_clock = kernels.run_program(
        words,
        n_qubits,
        shots,
        stitch.shots,
        banks,
        param_count,
        win_start,
        win_count,
        timing.x90_ns,
        timing.cz_ns,
        timing.measure_ns,
        timing.reset_ns,
        ev_time,
        ev_ch,
        ev_ch2,
        ev_kind,
        ev_phase,
        served,
    )
    if status == kernels.STATUS_UNDERFLOW:
        raise UnderflowError(int(err_core), int(err_shot), int(err_op))
    if status != kernels.STATUS_OK:
        raise ValidationError(
            f"{_STATUS_KIND.get(status, 'executor fault')} at op {int(err_op)} "
            f"(shot {int(err_shot)})"
        )
    assert n_events == total
    trace = PulseTrace(ev_time, ev_ch, ev_ch2, ev_kind, ev_phase, n_qubits, shots, n_emit)
    if sample_bits:
        data = _sample_bits(trace, n_qubits, shots, seed, circuit_index)
    else:
        data = ShotData((), np.zeros((shots, 0), dtype=np.uint8))
    sim_ns = int(cycles) * CYCLE_NS + int(final_clock)
    return ExecResult(trace, data, int(cycles), served, sim_ns)


class ControlSession:
    """Server-side state: memories, loaded program, stitch configuration, results.

    A session is single-threaded and externally synchronized; independent
    sessions share nothing.
    """

    def __init__(
        self,
        seed: int = 0,
        timing: TimingConfig = TimingConfig(),
        record=None,
        debug: bool = False,
    ):
        self.seed = int(seed)
        self.timing = timing
        self.record = record
        self.memory = ParameterMemory(debug=debug)
        self.command_buffer = np.zeros(COMMAND_BUFFER_WORDS, dtype=np.uint64)
        self.envelope_table = np.zeros(0, dtype=complex)
        self.freq_table = np.zeros(0, dtype=np.float64)
        self.program: MachineProgram | None = None
        self.current_index = -1
        self.param_counts: tuple[int, ...] = (0,) * N_BANKS
        self.params_loaded = False
        self.results: dict[int, ExecResult] = {}
        self._pending: ExecResult | None = None
        self._run_batch_open = False
        self.load_circuit_calls = 0
        self.load_params_calls = 0
        self.run_calls = 0
        self.total_served = 0

    def _scope(self, name: str):
        if self.record is None:
            import contextlib

            return contextlib.nullcontext()
        return self.record.scope(name)

    def handle_load_circuit(self, index: int, program: MachineProgram) -> None:
        if program.n_qubits > N_BANKS:
            raise ValidationError(f"{program.n_qubits} qubits exceed the {N_BANKS}-bank design")
        with self._scope("Load Batch"):
            with self._scope("Load circuit"):
                self.program = program
                n = min(len(program.words), COMMAND_BUFFER_WORDS)
                self.command_buffer[:] = 0
                self.command_buffer[:n] = program.words[:n]
                self.current_index = int(index)
                self.load_circuit_calls += 1

    def handle_load_params(self, index: int, words_per_bank: Sequence) -> None:
        if len(words_per_bank) > N_BANKS:
            raise ValidationError(f"{len(words_per_bank)} banks supplied, have {N_BANKS}")
        with self._scope("Load para"):
            counts = [0] * N_BANKS
            for bank, words in enumerate(words_per_bank):
                counts[bank] = self.memory.write_params(bank, words)
            self.param_counts = tuple(counts)
            self.params_loaded = True
            self.current_index = int(index)
            self.load_params_calls += 1

    def handle_load_defs(self, envelope, freq) -> None:
        env = np.asarray(envelope, dtype=complex)
        frq = np.asarray(freq, dtype=np.float64)
        if env.size > ENVELOPE_CAPACITY:
            raise CapacityError(0, int(env.size), ENVELOPE_CAPACITY)
        if frq.size > FREQ_CAPACITY:
            raise CapacityError(0, int(frq.size), FREQ_CAPACITY)
        with self._scope("Load Batch"):
            with self._scope("Load definition"):
                with self._scope("Load env."):
                    self.envelope_table = env.copy()
                with self._scope("Load freq."):
                    self.freq_table = frq.copy()
                with self._scope("Load zero"):
                    self.command_buffer[:] = 0

    def handle_run(self, shots: int) -> None:
        if self.program is None:
            raise SchedulingError("run requested before any circuit was loaded")
        stitch = StitchConfig(self.param_counts if self.params_loaded else (0,) * N_BANKS, shots)
        if self.record is not None:
            self.record.push("Run Batch")
            self._run_batch_open = True
        try:
            with self._scope("Start Run"):
                result = execute(
                    self.program,
                    stitch,
                    self.memory,
                    shots=shots,
                    timing=self.timing,
                    seed=self.seed,
                    circuit_index=self.current_index,
                )
        except UnderflowError as exc:
            if self._run_batch_open:
                self.record.pop("Run Batch")
                self._run_batch_open = False
            raise UnderflowError(
                exc.core_id, exc.shot, exc.op_index, where=f"circuit {self.current_index}"
            ) from None
        except Exception:
            if self._run_batch_open:
                self.record.pop("Run Batch")
                self._run_batch_open = False
            raise
        self._pending = result
        self.results[self.current_index] = result
        self.total_served += int(result.served.sum())
        self.run_calls += 1
        # parameters are consumed by the run; the next circuit must reload
        self.params_loaded = False

    def handle_get_data(self) -> ShotData:
        if self._pending is None:
            raise SchedulingError("no run pending before get-data")
        try:
            with self._scope("Get data"):
                data = self._pending.data
        finally:
            if self._run_batch_open:
                self.record.pop("Run Batch")
                self._run_batch_open = False
        self._pending = None
        return data

    # debug accessor used by verification tooling, not part of the RPC surface
    def trace_of(self, index: int) -> PulseTrace:
        return self.results[index].trace


def deft_run(
    order: Sequence[int],
    uniques: Mapping[int, MachineProgram],
    blob: bytes,
    client,
    shots: int | None = None,
) -> dict[int, ShotData]:
    """Schedule a batch: load a circuit only at each group's representative,
    load parameters for every circuit, run, and collect the data."""
    report, table = debinarize(blob)
    if tuple(order) != report.order:
        raise SchedulingError("supplied order disagrees with the parameter blob")
    if set(uniques) != set(report.unique_indices):
        missing = set(report.unique_indices) - set(uniques)
        extra = set(uniques) - set(report.unique_indices)
        raise SchedulingError(
            f"unique programs mismatch (missing {sorted(missing)}, unexpected {sorted(extra)})"
        )
    data: dict[int, ShotData] = {}
    run_shots = shots
    for idx in order:
        program = uniques.get(idx)
        if program is not None:
            client.load_circuit(idx, program)
            if shots is None:
                run_shots = program.shots
        client.load_params(idx, table.words_for(idx))
        client.run(run_shots)
        data[idx] = client.get_data()
    return data
