#!/usr/bin/env python3
"""Benchmark the jit-compiled executor against the interpreted fallback.

Builds a deep parameterized program (the stitched hot path: every phase comes
from a REQ_PARAM), runs it through both kernel paths, and prints op-issue
throughput plus the speedup.  ``PCE_NO_NUMBA=1`` removes the jit path, in
which case only the fallback is reported.

Usage: python3 benchmarks/bench_kernels.py [--ops 20000] [--shots 50] [--repeat 3]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from pce import kernels
from pce.asm import AsmOp, AssemblyProgram, Opcode, assemble
from pce.control import BANK_CAPACITY, N_BANKS


def build_program(n_ops: int, n_qubits: int, shots: int):
    rng = np.random.default_rng(1)
    ops = []
    req_per_qubit = [0] * n_qubits
    while len(ops) < n_ops - 1:
        q = int(rng.integers(0, n_qubits))
        r = rng.random()
        if r < 0.45 and req_per_qubit[q] < BANK_CAPACITY:
            req_per_qubit[q] += 1
            ops.append(AsmOp(Opcode.REQ_PARAM, q))
        elif r < 0.85:
            ops.append(AsmOp(Opcode.PULSE_X90, q))
        elif r < 0.95 and n_qubits > 1:
            ops.append(AsmOp(Opcode.TWO_QUBIT, q, channel2=(q + 1) % n_qubits))
        else:
            ops.append(AsmOp(Opcode.DELAY, q, imm=40))
    ops.append(AsmOp(Opcode.END))
    program = AssemblyProgram(tuple(ops), n_qubits, shots)
    machine = assemble(program)
    counts = list(machine.param_counts) + [0] * (N_BANKS - n_qubits)
    banks = rng.integers(0, 1 << 32, size=(N_BANKS, BANK_CAPACITY)).astype(np.uint32)
    return machine, np.asarray(counts, dtype=np.int64), banks


def run_once(fn, machine, counts, banks, shots):
    words = np.ascontiguousarray(machine.words, dtype=np.uint64)
    n_emit = kernels.count_emitting_ops(words)
    total = n_emit * shots
    args = (
        words,
        machine.n_qubits,
        shots,
        shots,
        banks,
        counts,
        np.zeros(N_BANKS, np.int64),
        counts.copy(),
        16,
        100,
        500,
        500,
        np.zeros(total, np.int64),
        np.zeros(total, np.int16),
        np.zeros(total, np.int16),
        np.zeros(total, np.uint8),
        np.zeros(total, np.uint32),
        np.zeros(N_BANKS, np.int64),
    )
    t0 = time.perf_counter()
    status = fn(*args)[0]
    dt = time.perf_counter() - t0
    assert status == kernels.STATUS_OK
    return dt


def bench(fn, name, machine, counts, banks, shots, repeat):
    run_once(fn, machine, counts, banks, shots)  # warm-up (jit compilation)
    best = min(run_once(fn, machine, counts, banks, shots) for _ in range(repeat))
    issued = len(machine.words) * shots
    print(f"{name:<22} {best * 1e3:10.2f} ms   {issued / best / 1e6:8.2f} Mops/s")
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--ops", type=int, default=20_000)
    parser.add_argument("--qubits", type=int, default=4)
    parser.add_argument("--shots", type=int, default=50)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    machine, counts, banks = build_program(args.ops, args.qubits, args.shots)
    print(
        f"program: {len(machine.words)} ops x {args.shots} shots "
        f"({sum(machine.param_counts)} stitched params/shot)"
    )
    t_py = bench(kernels.run_program_py, "python fallback", machine, counts, banks,
                 args.shots, args.repeat)
    if kernels.USING_NUMBA:
        t_jit = bench(kernels.run_program_jit, "numba kernel", machine, counts, banks,
                      args.shots, args.repeat)
        print(f"{'speedup':<22} {t_py / t_jit:10.1f} x")
    else:
        print("numba kernel           unavailable (PCE_NO_NUMBA set or numba missing)")


if __name__ == "__main__":
    main()
