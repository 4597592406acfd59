"""Tests for frame encoding, both channel transports, and server dispatch."""

import socket
import struct
import threading

import numpy as np
import pytest

from pce.asm import AsmOp, AssemblyProgram, Opcode, assemble
from pce.control import ControlSession, ShotData
from pce.errors import DecodeError
from pce.rpc import (
    ControlServer,
    Data,
    DeftClient,
    ErrorMsg,
    GetData,
    LoadCircuit,
    LoadDefs,
    LoadParams,
    LoopbackChannel,
    RemoteError,
    Run,
    SocketChannel,
    rpc_decode,
    rpc_encode,
)


def small_program(n_qubits=2, shots=3):
    return assemble(
        AssemblyProgram(
            (AsmOp(Opcode.PULSE_X90, 0), AsmOp(Opcode.MEASURE, 0), AsmOp(Opcode.END)),
            n_qubits,
            shots,
        )
    )


def random_message(rng):
    k = rng.integers(0, 7)
    if k == 0:
        return LoadCircuit(int(rng.integers(0, 1000)), small_program())
    if k == 1:
        words = tuple(
            rng.integers(0, 1 << 32, size=int(rng.integers(0, 6))).astype(np.uint32)
            for _ in range(int(rng.integers(0, 4)))
        )
        return LoadParams(int(rng.integers(0, 1000)), words)
    if k == 2:
        n = int(rng.integers(0, 8))
        return LoadDefs(
            rng.normal(size=n) + 1j * rng.normal(size=n), rng.normal(size=int(rng.integers(0, 5)))
        )
    if k == 3:
        return Run(int(rng.integers(1, 500)))
    if k == 4:
        return GetData()
    if k == 5:
        m = int(rng.integers(0, 4))
        shots = int(rng.integers(1, 6))
        qubits = tuple(sorted(rng.choice(8, size=m, replace=False).tolist()))
        bits = rng.integers(0, 2, size=(shots, m)).astype(np.uint8)
        return Data(ShotData(qubits, bits))
    return ErrorMsg(int(rng.integers(0, 10)), "boom " * int(rng.integers(0, 4)))


class TestFraming:
    def test_get_data_is_six_bytes(self):
        frame = rpc_encode(GetData())
        assert len(frame) == 6
        length, mtype = struct.unpack("<IH", frame)
        assert length == 2

    def test_round_trip_all_types(self):
        rng = np.random.default_rng(31)
        for _ in range(300):
            msg = random_message(rng)
            frame = rpc_encode(msg)
            decoded, consumed = rpc_decode(frame)
            assert decoded == msg
            assert consumed == len(frame)

    def test_truncated_frame(self):
        frame = rpc_encode(Run(7))
        for cut in (1, 3, 5, len(frame) - 1):
            with pytest.raises(DecodeError):
                rpc_decode(frame[:cut])

    def test_length_exceeding_buffer(self):
        frame = bytearray(rpc_encode(Run(7)))
        frame[0:4] = struct.pack("<I", 1000)
        with pytest.raises(DecodeError):
            rpc_decode(bytes(frame))

    def test_unknown_type(self):
        frame = struct.pack("<IH", 2, 999)
        with pytest.raises(DecodeError):
            rpc_decode(frame)

    def test_absurd_length_rejected(self):
        frame = struct.pack("<IH", 1 << 30, 4)
        with pytest.raises(DecodeError):
            rpc_decode(frame)


class TestServerDispatch:
    def test_load_run_get_data_flow(self):
        session = ControlSession(seed=1)
        client = DeftClient(LoopbackChannel(ControlServer(session)))
        client.load_circuit(0, small_program())
        client.run(3)
        data = client.get_data()
        assert data.shots == 3
        assert session.run_calls == 1

    def test_error_frame_raises_remote_error(self):
        session = ControlSession()
        client = DeftClient(LoopbackChannel(ControlServer(session)))
        with pytest.raises(RemoteError):
            client.run(5)  # no circuit loaded

    def test_malformed_frame_gets_error_reply(self):
        server = ControlServer(ControlSession())
        resp = server.handle_frame(struct.pack("<IH", 2, 999))
        msg, _ = rpc_decode(resp)
        assert isinstance(msg, ErrorMsg)


class TestSocketTransport:
    def test_socketpair_round_trip(self):
        session = ControlSession(seed=2)
        server = ControlServer(session)
        left, right = socket.socketpair()
        thread = threading.Thread(target=server.serve_socket, args=(right,), daemon=True)
        thread.start()
        channel = SocketChannel(left)
        client = DeftClient(channel)
        client.load_circuit(0, small_program())
        client.run(2)
        data = client.get_data()
        assert data.shots == 2
        assert channel.frames == 3
        assert channel.bytes_sent > 0 and channel.bytes_received > 0
        channel.close()
        right.close()
        thread.join(timeout=5)

    def test_loopback_and_socket_give_identical_bytes(self):
        msgs = [LoadCircuit(4, small_program()), Run(2), GetData()]
        session_a = ControlSession(seed=3)
        session_b = ControlSession(seed=3)
        loop = LoopbackChannel(ControlServer(session_a))
        left, right = socket.socketpair()
        thread = threading.Thread(
            target=ControlServer(session_b).serve_socket, args=(right,), daemon=True
        )
        thread.start()
        sock = SocketChannel(left)
        for msg in msgs:
            frame = rpc_encode(msg)
            assert loop.call(frame) == sock.call(frame)
        sock.close()
        right.close()
        thread.join(timeout=5)
