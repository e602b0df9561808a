"""Transport contract: ordered, reliable, frame-preserving."""

import threading

import numpy as np
import pytest

from halp.framing import Frame
from halp.transport import (
    TransportTimeout,
    connect,
    inproc_pair,
    listen_one,
)


def frame_of(layer, value):
    data = np.full((1, 4, 2), value, dtype="<f4")
    return Frame.from_rows(layer, 0, 0, data)


def test_inproc_order_preserved():
    a, b = inproc_pair()
    for i in range(20):
        a.send(frame_of(i, float(i)))
    got = [b.receive(timeout=1).layer for _ in range(20)]
    assert got == list(range(20))


def test_inproc_bidirectional():
    a, b = inproc_pair()
    a.send(frame_of(1, 1.0))
    b.send(frame_of(2, 2.0))
    assert b.receive(timeout=1).layer == 1
    assert a.receive(timeout=1).layer == 2


def test_inproc_timeout():
    a, _ = inproc_pair()
    with pytest.raises(TransportTimeout):
        a.receive(timeout=0.05)


def test_socket_roundtrip():
    results = {}

    def server():
        t = listen_one("127.0.0.1:7531", timeout=5)
        results["got"] = t.receive(timeout=5)
        t.send(frame_of(9, 9.0))
        t.close()

    th = threading.Thread(target=server)
    th.start()
    client = connect("127.0.0.1:7531", timeout=5)
    sent = frame_of(3, 1.25)
    client.send(sent)
    reply = client.receive(timeout=5)
    th.join(timeout=5)
    client.close()
    assert results["got"] == sent
    assert reply.layer == 9


def test_socket_many_frames_in_order():
    def server():
        t = listen_one("127.0.0.1:7532", timeout=5)
        for i in range(50):
            t.send(frame_of(i, float(i)))
        t.close()

    th = threading.Thread(target=server)
    th.start()
    client = connect("127.0.0.1:7532", timeout=5)
    layers = [client.receive(timeout=5).layer for _ in range(50)]
    th.join(timeout=5)
    client.close()
    assert layers == list(range(50))
