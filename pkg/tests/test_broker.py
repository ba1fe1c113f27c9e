"""Embedded broker behavior: sessions, routing, liveness."""

import socket
import time

import pytest

from streamgate import mqtt
from streamgate.broker import Broker, SubscriptionTable
from streamgate.client import MqttConnection


@pytest.fixture
def broker():
    with Broker("127.0.0.1", 0) as handle:
        yield handle


def connect(broker, client_id, **kwargs) -> MqttConnection:
    conn = MqttConnection("127.0.0.1", broker.port, client_id, **kwargs)
    conn.connect()
    return conn


def wait_until(predicate, timeout=3.0, what="condition"):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return
        time.sleep(0.01)
    raise AssertionError(f"timed out waiting for {what}")


# -- connection establishment -------------------------------------------------


def test_connect_gets_connack_zero(broker):
    conn = connect(broker, "c1")
    assert conn.connected
    conn.disconnect()


def test_first_packet_must_be_connect(broker):
    sock = socket.create_connection(("127.0.0.1", broker.port), timeout=2.0)
    sock.sendall(mqtt.encode_packet(mqtt.Publish(topic="t", payload=b"x")))
    sock.settimeout(2.0)
    assert sock.recv(64) == b""  # server closed without a reply
    sock.close()


def test_malformed_bytes_close_connection(broker):
    sock = socket.create_connection(("127.0.0.1", broker.port), timeout=2.0)
    sock.sendall(b"\x00\x00\x00\x00")
    sock.settimeout(2.0)
    assert sock.recv(64) == b""
    sock.close()


def test_empty_client_id_rejected(broker):
    sock = socket.create_connection(("127.0.0.1", broker.port), timeout=2.0)
    sock.sendall(mqtt.encode_packet(mqtt.Connect(client_id="")))
    sock.settimeout(2.0)
    assert sock.recv(64) == b""
    sock.close()


def test_duplicate_client_id_supersedes_first(broker):
    first = connect(broker, "dup")
    second = connect(broker, "dup")
    # The first session is terminated by the broker.
    assert first.recv_packet(timeout=2.0) is None
    # The second stays usable.
    second.subscribe("t")
    second.disconnect()


# -- subscribing and routing ----------------------------------------------------


def test_single_subscriber_receives_publish(broker):
    sub = connect(broker, "sub")
    sub.subscribe("camera/stream")
    pub = connect(broker, "pub")
    pub.publish("camera/stream", b"payload-1")
    packet = sub.recv_packet(timeout=2.0)
    assert isinstance(packet, mqtt.Publish)
    assert packet.topic == "camera/stream"
    assert packet.payload == b"payload-1"
    pub.disconnect()
    sub.disconnect()


def test_overlapping_filters_deliver_once(broker):
    sub = connect(broker, "sub")
    sub.subscribe("camera/+", packet_id=1)
    sub.subscribe("#", packet_id=2)
    pub = connect(broker, "pub")
    pub.publish("camera/stream", b"only-once")
    first = sub.recv_packet(timeout=2.0)
    assert first.payload == b"only-once"
    with pytest.raises(TimeoutError):
        sub.recv_packet(timeout=0.4)
    pub.disconnect()
    sub.disconnect()


def test_publisher_not_echoed_unless_subscribed(broker):
    pub = connect(broker, "pub")
    pub.publish("camera/stream", b"self")
    with pytest.raises(TimeoutError):
        pub.recv_packet(timeout=0.4)
    # Once subscribed, the publisher is a subscriber like any other.
    pub.subscribe("camera/stream")
    pub.publish("camera/stream", b"echo")
    packet = pub.recv_packet(timeout=2.0)
    assert packet.payload == b"echo"
    pub.disconnect()


def test_no_subscribers_drops_silently(broker):
    pub = connect(broker, "pub")
    pub.publish("nobody/home", b"void")
    pub.publish("nobody/home", b"void")
    pub.disconnect()
    wait_until(
        lambda: broker.stats.publishes_received == 2, what="publish counter"
    )
    assert broker.stats.messages_delivered == 0


def test_retain_flag_not_propagated(broker):
    sub = connect(broker, "sub")
    sub.subscribe("t")
    pub = connect(broker, "pub")
    pub.publish("t", b"x", retain=True)
    packet = sub.recv_packet(timeout=2.0)
    assert packet.retain is False
    pub.disconnect()
    sub.disconnect()


def raw_subscribe(packet_id, filters) -> bytes:
    # Hand-assembled so invalid filters can reach the broker; the
    # encoder would (correctly) refuse to emit them.
    body = packet_id.to_bytes(2, "big")
    for filter_, qos in filters:
        raw = filter_.encode()
        body += len(raw).to_bytes(2, "big") + raw + bytes([qos])
    return bytes([0x82]) + mqtt.encode_remaining_length(len(body)) + body


def recv_packets(sock, count, timeout=2.0):
    sock.settimeout(timeout)
    buffer = bytearray()
    packets = []
    while len(packets) < count:
        try:
            packet, consumed = mqtt.decode_packet(buffer)
            del buffer[:consumed]
            packets.append(packet)
            continue
        except mqtt.NeedMoreDataError:
            pass
        chunk = sock.recv(4096)
        if not chunk:
            break
        buffer += chunk
    return packets


def test_invalid_filter_gets_failure_code(broker):
    sock = socket.create_connection(("127.0.0.1", broker.port), timeout=2.0)
    sock.sendall(mqtt.encode_packet(mqtt.Connect(client_id="strict")))
    sock.sendall(raw_subscribe(9, [("bad/#/filter", 0)]))
    connack, ack = recv_packets(sock, 2)
    assert isinstance(ack, mqtt.Suback)
    assert ack.granted == (0x80,)
    sock.close()


def test_mixed_filters_granted_individually(broker):
    sock = socket.create_connection(("127.0.0.1", broker.port), timeout=2.0)
    sock.sendall(mqtt.encode_packet(mqtt.Connect(client_id="mixed")))
    sock.sendall(raw_subscribe(3, [("ok/+", 0), ("#bad", 0)]))
    connack, ack = recv_packets(sock, 2)
    assert ack.granted == (0x00, 0x80)
    sock.close()


def test_per_connection_fifo_order(broker):
    sub = connect(broker, "sub")
    sub.subscribe("seq")
    pub = connect(broker, "pub")
    count = 1000
    for i in range(count):
        pub.publish("seq", i.to_bytes(4, "big"))
    received = []
    while len(received) < count:
        packet = sub.recv_packet(timeout=5.0)
        assert packet is not None, "broker closed early"
        if isinstance(packet, mqtt.Publish):
            received.append(int.from_bytes(packet.payload, "big"))
    assert received == list(range(count))
    pub.disconnect()
    sub.disconnect()


def test_at_most_once_per_publish(broker):
    sub = connect(broker, "sub")
    sub.subscribe("a/+")
    sub.subscribe("a/b")
    sub.subscribe("#")
    pub = connect(broker, "pub")
    for i in range(20):
        pub.publish("a/b", bytes([i]))
    got = []
    while len(got) < 20:
        packet = sub.recv_packet(timeout=3.0)
        if isinstance(packet, mqtt.Publish):
            got.append(packet.payload[0])
    assert got == list(range(20))
    with pytest.raises(TimeoutError):
        sub.recv_packet(timeout=0.4)
    pub.disconnect()
    sub.disconnect()


# -- liveness -------------------------------------------------------------------


def test_pingreq_answered(broker):
    conn = connect(broker, "pinger")
    conn.ping()
    assert isinstance(conn.recv_packet(timeout=2.0), mqtt.Pingresp)
    conn.disconnect()


def test_idle_session_closed_past_keep_alive_grace(broker):
    conn = connect(broker, "sleepy", keep_alive_s=1)
    start = time.monotonic()
    # 1.5x keep-alive is 1.5 s; the broker must close us around there.
    assert conn.recv_packet(timeout=5.0) is None
    elapsed = time.monotonic() - start
    assert 1.0 <= elapsed <= 4.0


def test_zero_keep_alive_never_expires(broker):
    conn = connect(broker, "immortal", keep_alive_s=0)
    with pytest.raises(TimeoutError):
        conn.recv_packet(timeout=2.2)
    conn.disconnect()


# -- slow subscribers --------------------------------------------------------------


def test_slow_subscriber_messages_dropped():
    with Broker("127.0.0.1", 0, max_session_buffer=4096) as broker:
        # Subscribe but never read: the session buffer fills up.
        sock = socket.create_connection(("127.0.0.1", broker.port), timeout=2.0)
        sock.sendall(mqtt.encode_packet(mqtt.Connect(client_id="lazy")))
        sock.sendall(
            mqtt.encode_packet(mqtt.Subscribe(packet_id=1, filters=(("t", 0),)))
        )
        wait_until(lambda: broker.table.filter_count() == 1, what="subscription")

        pub = MqttConnection("127.0.0.1", broker.port, "pub")
        pub.connect()
        for i in range(64):
            pub.publish("t", bytes(1024))
        wait_until(
            lambda: broker.stats.publishes_received == 64, what="publishes"
        )
        assert broker.stats.messages_dropped > 0
        assert broker.stats.messages_delivered < 64
        pub.disconnect()
        sock.close()


# -- subscription table --------------------------------------------------------------


class FakeSession:
    def __init__(self, name):
        self.name = name


def test_table_dedups_across_filters():
    table = SubscriptionTable()
    s1, s2 = FakeSession("s1"), FakeSession("s2")
    table.add("camera/+", s1)
    table.add("#", s1)
    table.add("camera/stream", s2)
    assert table.sessions_for("camera/stream") == {s1, s2}
    assert table.sessions_for("other") == {s1}


def test_table_discard_leaves_no_dangling_refs():
    table = SubscriptionTable()
    s1, s2 = FakeSession("s1"), FakeSession("s2")
    table.add("a", s1)
    table.add("a", s2)
    table.add("b/+", s1)
    table.discard_session(s1)
    assert table.session_refs() == {s2}
    table.discard_session(s2)
    assert table.session_refs() == set()
    assert table.filter_count() == 0


def test_broker_drops_session_refs_on_disconnect(broker):
    conn = connect(broker, "leaver")
    conn.subscribe("x/y")
    wait_until(lambda: broker.table.filter_count() == 1, what="subscription")
    conn.disconnect()
    wait_until(lambda: broker.table.filter_count() == 0, what="table cleanup")
    assert broker.table.session_refs() == set()


# -- lifecycle ---------------------------------------------------------------------


def test_serve_returns_running_handle():
    from streamgate.broker import serve

    handle = serve("127.0.0.1", 0)
    try:
        conn = MqttConnection("127.0.0.1", handle.port, "hello")
        conn.connect()  # implies Connack return code 0
        conn.disconnect()
    finally:
        handle.stop()


def test_stop_is_idempotent():
    broker = Broker("127.0.0.1", 0).start()
    broker.stop()
    broker.stop()


def test_port_zero_assigns_ephemeral():
    with Broker("127.0.0.1", 0) as broker:
        assert broker.port > 0


def test_bind_conflict_raises():
    with Broker("127.0.0.1", 0) as broker:
        with pytest.raises(OSError):
            Broker("127.0.0.1", broker.port).start()


def test_external_interface_defaults():
    broker = Broker()
    assert broker.host == "127.0.0.1"
    assert broker._requested_port == 1883
