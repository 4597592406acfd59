"""Tests for the control-stack model: memory, stitch, executor, session, scheduler."""

import numpy as np
import pytest

from pce.asm import AsmOp, AssemblyProgram, Opcode, assemble, compile_circuit
from pce.circuits import Circuit, U3Params, circuit_unitary, cz, measure, u3_decompose, vz, x90
from pce.control import (
    BANK_CAPACITY,
    ControlSession,
    N_BANKS,
    ParameterMemory,
    StitchConfig,
    StitchUnit,
    TimingConfig,
    addr_map,
    deft_run,
    execute,
)
from pce.errors import (
    AddressError,
    CapacityError,
    PceError,
    RoutingError,
    SchedulingError,
    UnderflowError,
)
from pce.generators import BatchSpec, gen_rb
from pce.rip import binarize, modify, peel, rip
from pce.rpc import ControlServer, DeftClient, LoopbackChannel


def program_of(*ops, n_qubits=2, shots=3) -> AssemblyProgram:
    return AssemblyProgram(tuple(ops) + (AsmOp(Opcode.END),), n_qubits, shots)


class TestAddrMap:
    @pytest.mark.parametrize("axi, expected", [(0x0000, (0, 0)), (0x0800, (1, 0)), (0x3FFF, (7, 2047))])
    def test_bit_split(self, axi, expected):
        assert addr_map(axi) == expected

    def test_high_bits_rejected(self):
        with pytest.raises(AddressError):
            addr_map(0x4000)
        with pytest.raises(AddressError):
            addr_map(1 << 31)


class TestParameterMemory:
    def test_write_then_read(self):
        mem = ParameterMemory()
        words = np.arange(10, dtype=np.uint32)
        mem.write_params(3, words)
        assert [mem.read_param(3, i) for i in range(10)] == list(range(10))

    def test_bank_independence(self):
        mem = ParameterMemory()
        mem.write_params(3, np.full(5, 7, dtype=np.uint32))
        assert mem.read_param(4, 0) == 0

    def test_capacity_error_names_qubit_and_count(self):
        mem = ParameterMemory()
        with pytest.raises(CapacityError) as err:
            mem.write_params(2, np.zeros(BANK_CAPACITY + 1, dtype=np.uint32))
        assert err.value.qubit == 2
        assert err.value.count == BANK_CAPACITY + 1

    def test_exactly_full_bank_accepted(self):
        mem = ParameterMemory()
        assert mem.write_params(0, np.zeros(BANK_CAPACITY, dtype=np.uint32)) == BANK_CAPACITY

    def test_debug_paths_gated(self):
        mem = ParameterMemory()
        with pytest.raises(PceError):
            mem.debug_read_controller(0, 0)
        dbg = ParameterMemory(debug=True)
        dbg.debug_write_stitch(1, 4, 99)
        assert dbg.debug_read_controller(1, 4) == 99


def make_stitch(words_per_bank, shots, windows=None, mcm=frozenset()):
    mem = ParameterMemory()
    counts = []
    for bank, words in enumerate(words_per_bank):
        counts.append(mem.write_params(bank, np.asarray(words, dtype=np.uint32)))
    counts += [0] * (N_BANKS - len(counts))
    cfg = StitchConfig(tuple(counts), shots, windows=windows, mcm_core_ids=mcm)
    return StitchUnit(mem, cfg)


class TestStitchUnit:
    def test_serves_in_fifo_order_and_repeats_per_shot(self):
        words = [10, 20, 30]
        unit = make_stitch([words], shots=2)
        got = [unit.request(0)[0] for _ in range(6)]
        assert got == words + words

    def test_underflow_after_budget(self):
        unit = make_stitch([[1, 2]], shots=3)
        for _ in range(6):
            unit.request(0)
        with pytest.raises(UnderflowError):
            unit.request(0)

    def test_partial_window_stream(self):
        unit = make_stitch([[5, 6, 7]], shots=4, windows=((1, 2),))
        got = [unit.request(0)[0] for _ in range(3 + 3 * 2)]
        assert got == [5, 6, 7, 6, 7, 6, 7, 6, 7]

    def test_latency_constant(self):
        unit = make_stitch([[1]], shots=1)
        _, latency = unit.request(0)
        assert latency == 2

    def test_mcm_does_not_advance_cursor(self):
        unit = make_stitch([[1, 2, 3]], shots=1, mcm=frozenset({9}))
        unit.push_mcm(9, 1)
        a = unit.request(0)[0]
        bit = unit.request(9)[0]
        b = unit.request(0)[0]
        assert (a, bit, b) == (1, 1, 2)
        assert unit.served[0] == 2

    def test_unknown_core_id(self):
        unit = make_stitch([[1]], shots=1)
        with pytest.raises(RoutingError):
            unit.request(12)

    def test_mcm_empty_queue(self):
        unit = make_stitch([[1]], shots=1, mcm=frozenset({8}))
        with pytest.raises(RoutingError):
            unit.request(8)

    def test_empty_bank_underflows_immediately(self):
        unit = make_stitch([[]], shots=5)
        with pytest.raises(UnderflowError):
            unit.request(0)

    def test_window_validation(self):
        with pytest.raises(PceError):
            StitchConfig((3,), 2, windows=((2, 5),))


class TestExecute:
    def test_trace_ignores_memory_without_requests(self):
        prog = assemble(program_of(AsmOp(Opcode.PULSE_X90, 0), n_qubits=1, shots=2))
        mem = ParameterMemory()
        mem.write_params(0, np.full(8, 123, dtype=np.uint32))
        a = execute(prog, StitchConfig((8,), 2), mem, seed=1)
        b = execute(prog, None, None, shots=2, seed=1)
        assert a.trace == b.trace

    def test_shot_spacing_with_measure(self):
        c = Circuit((x90(0), measure(0)), n_qubits=1, shots=3)
        res = execute(assemble(compile_circuit(c)), seed=0)
        x90_times = res.trace.times[res.trace.kinds == 1]
        # X90 16 ns + measure 500 ns + passive reset 500 ns between shots
        assert list(x90_times) == [0, 1016, 2032]

    def test_shot_spacing_without_measure(self):
        prog = assemble(program_of(AsmOp(Opcode.PULSE_X90, 0), n_qubits=1, shots=3))
        res = execute(prog, seed=0)
        assert list(res.trace.times) == [0, 516, 1032]

    def test_cz_synchronizes_channels(self):
        gates = (x90(0), x90(0), x90(1), cz(0, 1), x90(0))
        prog = assemble(compile_circuit(Circuit(gates, n_qubits=2, shots=1)))
        res = execute(prog, seed=0)
        cz_idx = int(np.where(res.trace.kinds == 2)[0][0])
        assert res.trace.times[cz_idx] == 32  # later of the two channel clocks
        assert res.trace.times[cz_idx + 1] == 132  # resumes after the 100 ns gate

    def test_phase_accumulator_resets_each_shot(self):
        gates = (vz(0, 1.0), x90(0))
        prog = assemble(compile_circuit(Circuit(gates, n_qubits=1, shots=3)))
        res = execute(prog, seed=0)
        phases = set(int(p) for p in res.trace.phases)
        assert len(phases) == 1  # same frame word every shot

    def test_underflow_names_shot_and_op(self):
        prog = assemble(program_of(AsmOp(Opcode.REQ_PARAM, 0), n_qubits=1, shots=4))
        mem = ParameterMemory()
        mem.write_params(0, np.array([5], dtype=np.uint32))
        with pytest.raises(UnderflowError) as err:
            execute(prog, StitchConfig((1,), 2), mem, shots=4, seed=0)
        assert err.value.shot == 2
        assert err.value.op_index == 0

    def test_request_count_invariant(self):
        c = Circuit(tuple(u3_decompose(U3Params(0.1, 0.2, 0.3), 0)) + (measure(0),), 1, shots=5)
        words = peel(c)
        mem = ParameterMemory()
        mem.write_params(0, words[0])
        prog = assemble(compile_circuit(modify(c)))
        res = execute(prog, StitchConfig((len(words[0]),), 5), mem, shots=5, seed=0)
        assert int(res.served[0]) == len(words[0]) * 5

    def test_deterministic_given_seed(self):
        c = Circuit(tuple(u3_decompose(U3Params(1.0, 0.4, 0.2), 0)) + (measure(0),), 1, shots=20)
        prog = assemble(compile_circuit(c))
        a = execute(prog, seed=77, circuit_index=3)
        b = execute(prog, seed=77, circuit_index=3)
        assert a.trace == b.trace and a.data == b.data and a.cycle_count == b.cycle_count

    def test_sampled_distribution_matches_circuit_unitary(self):
        # distribution derived from the trace equals the circuit's own statistics
        from pce.control import _trace_shot_distribution

        rng = np.random.default_rng(40)
        for _ in range(10):
            gates = []
            for q in (0, 1):
                gates.extend(u3_decompose(U3Params(*rng.uniform(0, 6.28, 3)), q))
            gates.append(cz(0, 1))
            for q in (0, 1):
                gates.extend(u3_decompose(U3Params(*rng.uniform(0, 6.28, 3)), q))
            circuit = Circuit(tuple(gates) + (measure(0), measure(1)), 2, shots=1)
            res = execute(assemble(compile_circuit(circuit)), seed=0)
            probs, measured = _trace_shot_distribution(res.trace, 0, 2)
            stripped = Circuit(tuple(gates), 2, shots=1)
            expected = np.abs(circuit_unitary(stripped)[:, 0]) ** 2
            assert measured == (0, 1)
            assert np.allclose(probs, expected, atol=1e-6)

    def test_x_gate_measures_one_deterministically(self):
        c = Circuit((x90(0), x90(0), measure(0)), 1, shots=10)
        res = execute(assemble(compile_circuit(c)), seed=5)
        assert res.data.measured_qubits == (0,)
        assert res.data.counts() == {"1": 10}

    def test_wide_program_is_trace_only(self):
        gates = tuple(x90(q) for q in range(5)) + tuple(measure(q) for q in range(5))
        res = execute(assemble(compile_circuit(Circuit(gates, 5, shots=4))), seed=0)
        assert res.data.measured_qubits == (0, 1, 2, 3, 4)
        assert res.data.counts() == {"00000": 4}

    def test_counts_sum_to_shots(self):
        c = Circuit((x90(0), measure(0)), 1, shots=33)
        res = execute(assemble(compile_circuit(c)), seed=2)
        assert sum(res.data.counts().values()) == 33

    def test_reset_delay_configurable(self):
        prog = assemble(program_of(AsmOp(Opcode.PULSE_X90, 0), n_qubits=1, shots=2))
        res = execute(prog, seed=0, timing=TimingConfig(reset_ns=500_000))
        assert list(res.trace.times) == [0, 500_016]


class TestSessionAndDeft:
    def run_batch(self, spec_seed=6):
        spec = BatchSpec("RB", ((0,), (0, 1)), ((2, 3),), 3, shots=4, seed=spec_seed)
        return gen_rb(spec)

    def make_client(self, seed=9):
        session = ControlSession(seed=seed)
        return session, DeftClient(LoopbackChannel(ControlServer(session)))

    def test_deft_load_counts(self):
        batch = self.run_batch()
        result = rip(batch)
        blob = binarize(result.report, result.table)
        uniques = {
            g[0]: assemble(compile_circuit(result.uniques[gi]))
            for gi, g in enumerate(result.report.groups)
        }
        session, client = self.make_client()
        data = deft_run(result.report.order, uniques, blob, client)
        assert session.load_circuit_calls == len(result.report.groups)
        assert session.load_params_calls == len(batch)
        assert sorted(data) == list(range(len(batch)))

    def test_single_circuit_batch(self):
        from pce.generators import CircuitBatch, Label

        c = Circuit((x90(0), measure(0)), 1, shots=2)
        batch = CircuitBatch((c,), (Label((0,), 1, 0, "x"),))
        result = rip(batch)
        uniques = {0: assemble(compile_circuit(result.uniques[0]))}
        session, client = self.make_client()
        deft_run(result.report.order, uniques, binarize(result.report, result.table), client)
        assert session.load_circuit_calls == 1
        assert session.load_params_calls == 1

    def test_deft_results_match_baseline(self):
        batch = self.run_batch()
        result = rip(batch)
        blob = binarize(result.report, result.table)
        uniques = {
            g[0]: assemble(compile_circuit(result.uniques[gi]))
            for gi, g in enumerate(result.report.groups)
        }
        session, client = self.make_client(seed=4)
        data = deft_run(result.report.order, uniques, blob, client)
        for i, c in enumerate(batch.circuits):
            base = execute(assemble(compile_circuit(c)), seed=4, circuit_index=i)
            assert data[i] == base.data

    def test_order_mismatch_rejected(self):
        batch = self.run_batch()
        result = rip(batch)
        blob = binarize(result.report, result.table)
        uniques = {
            g[0]: assemble(compile_circuit(result.uniques[gi]))
            for gi, g in enumerate(result.report.groups)
        }
        _, client = self.make_client()
        wrong = tuple(reversed(result.report.order))
        with pytest.raises(SchedulingError):
            deft_run(wrong, uniques, blob, client)

    def test_uniques_mismatch_rejected(self):
        batch = self.run_batch()
        result = rip(batch)
        blob = binarize(result.report, result.table)
        _, client = self.make_client()
        with pytest.raises(SchedulingError):
            deft_run(result.report.order, {}, blob, client)

    def test_load_defs_round_trip_and_zero(self):
        session, client = self.make_client()
        env = np.exp(1j * np.linspace(0, 3, 32))
        freq = np.linspace(4e9, 5e9, 6)
        session.command_buffer[:4] = 7
        client.load_defs(env, freq)
        assert np.allclose(session.envelope_table, env)
        assert np.allclose(session.freq_table, freq)
        assert not session.command_buffer.any()

    def test_oversize_defs_rejected(self):
        from pce.rpc import RemoteError

        session, client = self.make_client()
        with pytest.raises(RemoteError):
            client.load_defs(np.zeros(100_000, dtype=complex), np.zeros(2))

    def test_get_data_without_run(self):
        from pce.rpc import RemoteError

        _, client = self.make_client()
        with pytest.raises(RemoteError):
            client.get_data()
