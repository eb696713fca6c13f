import socket
import struct
import threading

import numpy as np
import pytest

from distpab import protocol
from distpab.exceptions import (
    BadMagicError,
    BadVersionError,
    OversizeFrameError,
    ProtocolStateError,
    RemoteError,
    SessionAborted,
    TruncatedFrameError,
    UnknownMessageTypeError,
)
from distpab.perturb import PerturbConfig, coordinate, node_perturb
from distpab.protocol import MsgType, WireMessage, decode, encode
from distpab.stats import summarize

from conftest import correlated_data

CFG = PerturbConfig(seed=11, expansion_mode="off", shuffle=False)


def test_done_frame_is_ten_bytes():
    frame = encode(WireMessage(MsgType.DONE))
    assert frame == b"DPAB\x01\x04\x00\x00\x00\x00"
    assert decode(frame) == WireMessage(MsgType.DONE, b"")


@pytest.mark.parametrize("msg_type", list(MsgType))
def test_roundtrip_byte_exact(msg_type):
    msg = WireMessage(msg_type, bytes(range(256)) * 3)
    frame = encode(msg)
    assert decode(frame) == msg
    assert encode(decode(frame)) == frame


def test_header_layout():
    frame = encode(WireMessage(MsgType.ERROR, b"abc"))
    assert struct.unpack("<4sBBI", frame[:10]) == (b"DPAB", 1, 5, 3)


def test_decode_rejections():
    good = encode(WireMessage(MsgType.HELLO, b"\x01\x00\x00\x00"))
    with pytest.raises(BadMagicError):
        decode(b"XXXX" + good[4:])
    with pytest.raises(BadVersionError):
        decode(good[:4] + b"\x02" + good[5:])
    with pytest.raises(TruncatedFrameError):
        decode(good[:-1])
    with pytest.raises(TruncatedFrameError):
        decode(good[:6])
    with pytest.raises(UnknownMessageTypeError):
        decode(good[:5] + b"\x09" + good[6:])
    with pytest.raises(OversizeFrameError):
        decode(struct.pack("<4sBBI", b"DPAB", 1, 2, protocol.MAX_PAYLOAD + 1))


def test_summary_roundtrip():
    X = np.array([[0.0, 1.0], [2.0, 5.0], [3.0, -1.0], [7.0, 2.0]])
    s = summarize(X)
    node_id, back = protocol.decode_summary(decode(encode(protocol.encode_summary(7, s))))
    assert node_id == 7
    assert back.row_count == 4 and back.attr_count == 2
    assert back.cov.tobytes() == s.cov.tobytes() and back.mean.tobytes() == s.mean.tobytes()


def test_params_roundtrip():
    X = correlated_data(30, 3, seed=0)
    params = coordinate([summarize(X)], CFG)
    back = protocol.decode_params(decode(encode(protocol.encode_params(params))))
    for name in ("rotation", "translation", "reflection", "stdvec", "meanvec"):
        assert getattr(back, name).tobytes() == getattr(params, name).tobytes()
    assert back.sigma == params.sigma
    assert back.digest() == params.digest()


def test_params_rejects_non_orthonormal_rotation():
    X = correlated_data(30, 3, seed=0)
    params = coordinate([summarize(X)], CFG)
    params.rotation = params.rotation * 1.01
    with pytest.raises(protocol.ProtocolError):
        protocol.decode_params(protocol.encode_params(params))


def test_payload_sizes_independent_of_rows():
    for n in (2, 5):
        small = summarize(correlated_data(100, n, seed=1))
        big = summarize(correlated_data(10000, n, seed=1))
        assert len(encode(protocol.encode_summary(0, small))) == len(encode(protocol.encode_summary(0, big)))


def test_worker_state_machine_rejects_early_params():
    X = correlated_data(20, 2, seed=0)
    params_msg = protocol.encode_params(coordinate([summarize(X)], CFG))
    worker = protocol.WorkerSession(0, X, CFG)
    with pytest.raises(ProtocolStateError):
        worker.receive(params_msg)
    worker.hello()
    with pytest.raises(ProtocolStateError):
        worker.receive(params_msg)
    with pytest.raises(ProtocolStateError):
        worker.hello()


def test_worker_relays_error():
    worker = protocol.WorkerSession(0, correlated_data(20, 2, seed=0), CFG)
    worker.hello()
    worker.summary()
    with pytest.raises(RemoteError, match="boom"):
        worker.receive(protocol.error("boom"))
    assert worker.output is None


def test_simulated_session_matches_direct():
    X = correlated_data(90, 4, seed=3)
    parts = np.array_split(X, 3)
    params, outs, report = protocol.run_simulated(parts, CFG)
    direct = coordinate([summarize(p) for p in parts], CFG)
    assert params.digest() == direct.digest()
    for i, p in enumerate(parts):
        np.testing.assert_array_equal(outs[i].data, node_perturb(p, direct, CFG, node_id=i).data)
    assert report.status == "completed"
    assert report.phi == direct.phi
    sizes = {v["total"] for v in report.node_bytes.values()}
    assert sizes == {protocol.phase_bytes(4)}


def test_no_raw_rows_in_traffic():
    X = correlated_data(40, 3, seed=5)
    _, _, report = protocol.run_simulated(np.array_split(X, 2), CFG, record=True)
    traffic = b"".join(report.traffic)
    for value in X.ravel():
        assert np.float64(value).tobytes() not in traffic


def _start_coordinator(k, cfg=CFG, timeout=10.0):
    coord = protocol.Coordinator(("127.0.0.1", 0), k, cfg, timeout=timeout)
    result = {}

    def _run():
        try:
            result["value"] = coord.serve()
        except Exception as exc:  # surfaced to the test below
            result["error"] = exc

    t = threading.Thread(target=_run, daemon=True)
    t.start()
    return coord, t, result


def test_loopback_single_worker():
    X = correlated_data(60, 3, seed=9)
    coord, t, result = _start_coordinator(1)
    out = protocol.run_worker(coord.address, X, CFG, node_id=0, timeout=10)
    t.join(10)
    params, report = result["value"]
    expected = coordinate([summarize(X)], CFG)
    assert report.phi == expected.phi
    np.testing.assert_array_equal(out.data, node_perturb(X, expected, CFG).data)


def _run_workers(address, parts, cfg=CFG, ids=None):
    outs, errors = {}, {}
    ids = ids if ids is not None else list(range(len(parts)))

    def _go(i, node_id, part):
        try:
            outs[i] = protocol.run_worker(address, part, cfg, node_id=node_id, timeout=10)
        except Exception as exc:
            errors[i] = exc

    threads = [threading.Thread(target=_go, args=(i, nid, p)) for i, (nid, p) in enumerate(zip(ids, parts))]
    for th in threads:
        th.start()
    for th in threads:
        th.join(15)
    return outs, errors


def test_loopback_two_workers_equal_simulated():
    X = correlated_data(100, 4, seed=1)
    parts = np.array_split(X, 2)
    coord, t, result = _start_coordinator(2)
    outs, errors = _run_workers(coord.address, parts)
    t.join(10)
    assert not errors
    _, sim_outs, sim_report = protocol.run_simulated(parts, CFG)
    for i in range(2):
        np.testing.assert_array_equal(outs[i].data, sim_outs[i].data)
    params, report = result["value"]
    assert report.node_bytes == sim_report.node_bytes


def test_inconsistent_attribute_count_aborts():
    coord, t, result = _start_coordinator(2)
    outs, errors = _run_workers(coord.address, [correlated_data(20, 2, seed=0), correlated_data(20, 3, seed=0)])
    t.join(10)
    assert isinstance(result["error"], SessionAborted)
    assert "inconsistent" in result["error"].reason
    assert result["error"].report.status == "aborted"
    assert len(errors) == 2 and all(isinstance(e, RemoteError) for e in errors.values())


def test_duplicate_node_id_rejected():
    coord, t, result = _start_coordinator(2, timeout=2.0)
    X = correlated_data(20, 2, seed=0)
    outs, errors = _run_workers(coord.address, [X, X], ids=[3, 3])
    t.join(10)
    assert any(isinstance(e, RemoteError) and "duplicate" in str(e) for e in errors.values())


def test_timeout_aborts_with_partial_report():
    coord, t, result = _start_coordinator(2, timeout=0.5)
    _, errors = _run_workers(coord.address, [correlated_data(20, 2, seed=0)])
    t.join(10)
    assert isinstance(result["error"], SessionAborted)
    assert result["error"].report.status == "aborted"
    assert isinstance(errors[0], RemoteError)


def test_connection_refused():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    with pytest.raises(ConnectionRefusedError):
        protocol.run_worker(f"127.0.0.1:{port}", correlated_data(10, 2, seed=0), CFG, node_id=0, timeout=2)


def test_parse_endpoint():
    assert protocol.parse_endpoint("localhost:8080") == ("localhost", 8080)
    assert protocol.parse_endpoint(":9000") == ("127.0.0.1", 9000)
    with pytest.raises(ValueError):
        protocol.parse_endpoint("nope")
