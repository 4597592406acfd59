"""Machine-program executor inner loop, compiled with numba when available.

This is the one genuinely hot numeric loop in the package: every op of every
shot updates integer phase accumulators, per-channel clocks, and stitch
cursors.  The same function body is used twice: ``run_program_py`` is the
plain interpreted fallback, ``run_program_jit`` the ``@njit`` compilation of
the identical code, so the two paths cannot drift apart semantically.

Selection: the jit path is used when numba imports and the environment
variable ``PCE_NO_NUMBA`` is unset/empty; setting ``PCE_NO_NUMBA=1`` forces
the fallback.  ``benchmarks/bench_kernels.py`` compares the two.

All arithmetic is integer: times are int64 nanoseconds, phase frames uint64
masked to 32 bits.  No floating point enters the kernel, which is what makes
stitched and baseline executions comparable bit-for-bit.
"""

from __future__ import annotations

import os

import numpy as np

# opcode byte values, mirrored from asm.Opcode (kept as plain ints for numba)
OP_PULSE_X90 = 0x01
OP_INC_PHASE = 0x02
OP_REQ_PARAM = 0x03
OP_TWO_QUBIT = 0x04
OP_MEASURE = 0x05
OP_DELAY = 0x06
OP_END = 0x07

# trace event kind codes
EV_X90 = 1
EV_CZ = 2
EV_MEASURE = 3
EV_DELAY = 4

# executor status codes
STATUS_OK = 0
STATUS_UNDERFLOW = 1
STATUS_BAD_OPCODE = 2
STATUS_BAD_CHANNEL = 3

CYCLES_PER_OP = 2  # every issued instruction costs 2 cycles at 500 MHz (4 ns)


def _run_program(
    words,  # uint64[n_ops]
    n_qubits,  # int
    shots,  # int
    budget_shots,  # int: stitch repeat budget, normally == shots
    banks,  # uint32[n_banks, 2048]
    param_count,  # int64[n_banks]
    win_start,  # int64[n_banks]
    win_count,  # int64[n_banks]
    x90_ns,
    cz_ns,
    meas_ns,
    reset_ns,
    ev_time,  # out: int64[n_emit * shots]
    ev_ch,  # out: int16[...]
    ev_ch2,  # out: int16[...]
    ev_kind,  # out: uint8[...]
    ev_phase,  # out: uint32[...]
    served,  # out: int64[n_banks]
):
    """Returns (status, err_shot, err_op, err_core, n_events, cycle_count, final_clock)."""
    n_ops = words.shape[0]
    clocks = np.zeros(n_qubits, np.int64)
    acc = np.zeros(n_qubits, np.uint64)
    cursor = np.zeros(banks.shape[0], np.int64)
    pass_idx = np.zeros(banks.shape[0], np.int64)
    mask32 = np.uint64(0xFFFFFFFF)
    pos = 0
    cycles = 0
    for shot in range(shots):
        for q in range(n_qubits):
            acc[q] = np.uint64(0)
        for i in range(n_ops):
            w = words[i]
            op = np.int64(w >> np.uint64(56))
            ch = np.int64((w >> np.uint64(48)) & np.uint64(0xFF))
            ch2 = np.int64((w >> np.uint64(40)) & np.uint64(0xFF))
            imm = w & mask32
            cycles += CYCLES_PER_OP
            if op == OP_END:
                break
            if ch >= n_qubits or (op == OP_TWO_QUBIT and ch2 >= n_qubits):
                return (STATUS_BAD_CHANNEL, shot, i, ch, pos, cycles, np.int64(0))
            if op == OP_INC_PHASE:
                acc[ch] = (acc[ch] + imm) & mask32
            elif op == OP_PULSE_X90:
                ev_time[pos] = clocks[ch]
                ev_ch[pos] = ch
                ev_ch2[pos] = -1
                ev_kind[pos] = EV_X90
                ev_phase[pos] = acc[ch]
                pos += 1
                clocks[ch] += x90_ns
            elif op == OP_REQ_PARAM:
                pc = param_count[ch]
                if pc == 0 or pass_idx[ch] >= budget_shots:
                    return (STATUS_UNDERFLOW, shot, i, ch, pos, cycles, np.int64(0))
                word = banks[ch, cursor[ch]]
                acc[ch] = (acc[ch] + np.uint64(word)) & mask32
                served[ch] += 1
                cursor[ch] += 1
                if pass_idx[ch] == 0:
                    limit = pc
                else:
                    limit = win_start[ch] + win_count[ch]
                if cursor[ch] >= limit:
                    pass_idx[ch] += 1
                    cursor[ch] = win_start[ch]
            elif op == OP_TWO_QUBIT:
                t = clocks[ch]
                if clocks[ch2] > t:
                    t = clocks[ch2]
                ev_time[pos] = t
                ev_ch[pos] = ch
                ev_ch2[pos] = ch2
                ev_kind[pos] = EV_CZ
                ev_phase[pos] = 0
                pos += 1
                clocks[ch] = t + cz_ns
                clocks[ch2] = t + cz_ns
            elif op == OP_MEASURE:
                ev_time[pos] = clocks[ch]
                ev_ch[pos] = ch
                ev_ch2[pos] = -1
                ev_kind[pos] = EV_MEASURE
                ev_phase[pos] = 0
                pos += 1
                clocks[ch] += meas_ns
            elif op == OP_DELAY:
                ev_time[pos] = clocks[ch]
                ev_ch[pos] = ch
                ev_ch2[pos] = -1
                ev_kind[pos] = EV_DELAY
                ev_phase[pos] = 0
                pos += 1
                clocks[ch] += np.int64(imm)
            else:
                return (STATUS_BAD_OPCODE, shot, i, np.int64(op), pos, cycles, np.int64(0))
        shot_end = np.int64(0)
        for q in range(n_qubits):
            if clocks[q] > shot_end:
                shot_end = clocks[q]
        for q in range(n_qubits):
            clocks[q] = shot_end + reset_ns
    return (STATUS_OK, -1, -1, -1, pos, cycles, clocks[0])


run_program_py = _run_program

_flag = os.environ.get("PCE_NO_NUMBA", "").strip().lower()
NUMBA_DISABLED = _flag in ("1", "true", "yes", "on")

try:
    if NUMBA_DISABLED:
        raise ImportError("numba disabled via PCE_NO_NUMBA")
    from numba import njit

    run_program_jit = njit(cache=True)(_run_program)
    USING_NUMBA = True
except ImportError:
    run_program_jit = None
    USING_NUMBA = False

run_program = run_program_jit if USING_NUMBA else run_program_py


def count_emitting_ops(words: np.ndarray) -> int:
    """Number of ops per shot that emit a trace event."""
    op = (np.asarray(words, dtype=np.uint64) >> np.uint64(56)).astype(np.int64)
    return int(
        np.isin(op, (OP_PULSE_X90, OP_TWO_QUBIT, OP_MEASURE, OP_DELAY)).sum()
    )
