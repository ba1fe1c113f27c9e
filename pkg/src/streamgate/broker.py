"""Embedded QoS-0 MQTT broker for self-contained gateway deployments.

Accepts client sessions over TCP, keeps a subscription table, and
routes each Publish to every matching session exactly once. It is a
deliberately small broker: no retained messages, no QoS 1/2, no
persistence. The gateway also runs against external standards-compliant
brokers; this one exists so a single process can host the whole
publisher/broker/subscriber loop.

Delivery policy for slow subscribers: each session has a bounded
outbound buffer (8 MiB by default). When it is full, new messages for
that session are dropped rather than queued, because a live video
stream wants freshness, not completeness.

Log lines carry client ids, topics, and byte counts only, never
payload content.
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from collections import deque
from typing import Deque, Dict, Iterable, Optional, Set

from . import mqtt

__all__ = ["Broker", "BrokerStats", "SubscriptionTable", "serve"]

log = logging.getLogger(__name__)

DEFAULT_PORT = 1883
DEFAULT_SESSION_BUFFER = 8 * 1024 * 1024
KEEP_ALIVE_GRACE = 1.5
_POLL_S = 0.2
_RECV_CHUNK = 65536


class BrokerStats:
    """Thread-safe counters, mostly for tests and shutdown reports."""

    def __init__(self):
        self._lock = threading.Lock()
        self.connections_accepted = 0
        self.publishes_received = 0
        self.messages_delivered = 0
        self.messages_dropped = 0

    def bump(self, name: str, amount: int = 1) -> None:
        with self._lock:
            setattr(self, name, getattr(self, name) + amount)

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "connections_accepted": self.connections_accepted,
                "publishes_received": self.publishes_received,
                "messages_delivered": self.messages_delivered,
                "messages_dropped": self.messages_dropped,
            }


class SubscriptionTable:
    """Mapping from topic filter to the sessions subscribed through it.

    Reads take a snapshot under the lock; mutations are serialized.
    Removing a session strips it from every filter so no dangling
    references survive a disconnect.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._filters: Dict[str, Set["_Session"]] = {}

    def add(self, topic_filter: str, session: "_Session") -> None:
        with self._lock:
            self._filters.setdefault(topic_filter, set()).add(session)

    def discard_session(self, session: "_Session") -> None:
        with self._lock:
            empty = []
            for topic_filter, sessions in self._filters.items():
                sessions.discard(session)
                if not sessions:
                    empty.append(topic_filter)
            for topic_filter in empty:
                del self._filters[topic_filter]

    def sessions_for(self, topic: str) -> Set["_Session"]:
        """All sessions with at least one matching filter, deduplicated."""
        with self._lock:
            items = list(self._filters.items())
        matched: Set["_Session"] = set()
        for topic_filter, sessions in items:
            if mqtt.topic_matches(topic_filter, topic):
                matched.update(sessions)
        return matched

    def filter_count(self) -> int:
        with self._lock:
            return len(self._filters)

    def session_refs(self) -> Set["_Session"]:
        with self._lock:
            refs: Set["_Session"] = set()
            for sessions in self._filters.values():
                refs.update(sessions)
            return refs


class _Session:
    """One client connection: reader loop plus a buffered sender thread."""

    def __init__(self, broker: "Broker", sock: socket.socket, address):
        self.broker = broker
        self.sock = sock
        self.address = address
        self.client_id: Optional[str] = None
        self.keep_alive_s = 0
        self.last_activity = time.monotonic()
        self.filters: Set[str] = set()
        self._send_lock = threading.Lock()
        self._send_cond = threading.Condition(self._send_lock)
        self._send_queue: Deque[bytes] = deque()
        self._send_bytes = 0
        self._closing = False
        self._reader = threading.Thread(
            target=self._reader_loop, name=f"mqtt-reader-{address}", daemon=True
        )
        self._sender = threading.Thread(
            target=self._sender_loop, name=f"mqtt-sender-{address}", daemon=True
        )

    def start(self) -> None:
        self._reader.start()
        self._sender.start()

    # -- outbound -----------------------------------------------------------

    def enqueue(self, data: bytes) -> bool:
        """Queue raw bytes for this session; False means dropped (full)."""
        with self._send_cond:
            if self._closing:
                return False
            if self._send_bytes + len(data) > self.broker.max_session_buffer:
                return False
            self._send_queue.append(data)
            self._send_bytes += len(data)
            self._send_cond.notify()
            return True

    def enqueue_packet(self, packet) -> bool:
        return self.enqueue(mqtt.encode_packet(packet))

    def _sender_loop(self) -> None:
        while True:
            with self._send_cond:
                while not self._send_queue and not self._closing:
                    self._send_cond.wait(timeout=_POLL_S)
                if self._closing and not self._send_queue:
                    return
                if not self._send_queue:
                    continue
                data = self._send_queue.popleft()
                self._send_bytes -= len(data)
            try:
                self.sock.sendall(data)
            except OSError:
                self.close("send failed")
                return

    # -- inbound ------------------------------------------------------------

    def _reader_loop(self) -> None:
        self.sock.settimeout(_POLL_S)
        buffer = bytearray()
        connected = False
        while not self._closing:
            try:
                chunk = self.sock.recv(_RECV_CHUNK)
            except socket.timeout:
                if self._keep_alive_expired():
                    self.close("keep-alive expired")
                    return
                continue
            except OSError:
                self.close("socket error")
                return
            if not chunk:
                self.close("peer closed")
                return
            buffer += chunk
            self.last_activity = time.monotonic()
            while True:
                try:
                    packet, consumed = mqtt.decode_packet(buffer)
                except mqtt.NeedMoreDataError:
                    break
                except mqtt.MalformedPacketError as exc:
                    log.warning("session %s: malformed packet: %s", self._name(), exc)
                    self.close("malformed packet")
                    return
                del buffer[:consumed]
                if not connected:
                    if not isinstance(packet, mqtt.Connect):
                        log.warning(
                            "session %s: first packet was %s, closing",
                            self._name(),
                            type(packet).__name__,
                        )
                        self.close("connect expected first")
                        return
                    if not self.broker._register(self, packet):
                        self.close("connect rejected")
                        return
                    connected = True
                    continue
                if not self._handle(packet):
                    return

    def _handle(self, packet) -> bool:
        if isinstance(packet, mqtt.Publish):
            self.broker.stats.bump("publishes_received")
            self.broker.route(packet)
            return True
        if isinstance(packet, mqtt.Subscribe):
            granted = []
            for topic_filter, _requested_qos in packet.filters:
                try:
                    mqtt.validate_filter(topic_filter)
                except mqtt.FilterError:
                    granted.append(0x80)
                    continue
                self.filters.add(topic_filter)
                self.broker.table.add(topic_filter, self)
                granted.append(0x00)
            self.enqueue_packet(mqtt.Suback(packet_id=packet.packet_id, granted=tuple(granted)))
            return True
        if isinstance(packet, mqtt.Pingreq):
            self.enqueue_packet(mqtt.Pingresp())
            return True
        if isinstance(packet, mqtt.Disconnect):
            self.close("client disconnect")
            return False
        if isinstance(packet, mqtt.Connect):
            # [MQTT-3.1.0-2] a second connect on a live session is an error
            self.close("duplicate connect")
            return False
        log.warning("session %s: unexpected %s", self._name(), type(packet).__name__)
        self.close("unexpected packet")
        return False

    # -- lifecycle ----------------------------------------------------------

    def _keep_alive_expired(self) -> bool:
        if self.keep_alive_s <= 0:
            return False
        idle = time.monotonic() - self.last_activity
        return idle > KEEP_ALIVE_GRACE * self.keep_alive_s

    def _name(self) -> str:
        return self.client_id if self.client_id else f"{self.address}"

    def close(self, reason: str = "") -> None:
        with self._send_cond:
            if self._closing:
                return
            self._closing = True
            self._send_cond.notify_all()
        log.info("session %s closed%s", self._name(), f": {reason}" if reason else "")
        self.broker._unregister(self)
        try:
            self.sock.close()
        except OSError:
            pass


class Broker:
    """Embedded broker: bind, accept, route. Start with :meth:`start`.

    ``port=0`` binds an ephemeral port; read :attr:`port` after start.
    """

    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = DEFAULT_PORT,
        *,
        max_session_buffer: int = DEFAULT_SESSION_BUFFER,
    ):
        self.host = host
        self._requested_port = port
        self._port: Optional[int] = None
        self.max_session_buffer = max_session_buffer
        self.table = SubscriptionTable()
        self.stats = BrokerStats()
        self._sessions: Dict[str, _Session] = {}
        self._all_sessions: Set[_Session] = set()
        self._lock = threading.Lock()
        self._listener: Optional[socket.socket] = None
        self._accept_thread: Optional[threading.Thread] = None
        self._running = False

    def __enter__(self) -> "Broker":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.stop()

    @property
    def port(self) -> int:
        if self._port is None:
            raise RuntimeError("broker not started")
        return self._port

    def start(self) -> "Broker":
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            listener.bind((self.host, self._requested_port))
        except OSError as exc:
            listener.close()
            raise OSError(
                f"cannot bind broker to {self.host}:{self._requested_port}: {exc}"
            ) from exc
        listener.listen(64)
        listener.settimeout(_POLL_S)
        self._listener = listener
        self._port = listener.getsockname()[1]
        self._running = True
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name="mqtt-broker-accept", daemon=True
        )
        self._accept_thread.start()
        log.info("broker listening on %s:%d", self.host, self._port)
        return self

    def stop(self) -> None:
        self._running = False
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
            self._listener = None
        with self._lock:
            sessions = list(self._all_sessions)
        for session in sessions:
            session.close("broker shutdown")
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2.0)
            self._accept_thread = None
        log.info("broker stopped: %s", self.stats.snapshot())

    def _accept_loop(self) -> None:
        while self._running and self._listener is not None:
            try:
                sock, address = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            self.stats.bump("connections_accepted")
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            session = _Session(self, sock, address)
            with self._lock:
                self._all_sessions.add(session)
            session.start()

    # -- session registry ---------------------------------------------------

    def _register(self, session: _Session, packet: mqtt.Connect) -> bool:
        if not packet.client_id:
            log.warning("rejecting connect with empty client id from %s", session.address)
            return False
        session.client_id = packet.client_id
        session.keep_alive_s = packet.keep_alive_s
        superseded = None
        with self._lock:
            superseded = self._sessions.get(packet.client_id)
            self._sessions[packet.client_id] = session
        if superseded is not None:
            log.info("client id %r reconnected, superseding old session", packet.client_id)
            superseded.close("superseded by new connect")
        session.enqueue_packet(mqtt.Connack(return_code=0))
        log.info("session %s connected (keep-alive %ds)", packet.client_id, packet.keep_alive_s)
        return True

    def _unregister(self, session: _Session) -> None:
        self.table.discard_session(session)
        with self._lock:
            self._all_sessions.discard(session)
            if session.client_id and self._sessions.get(session.client_id) is session:
                del self._sessions[session.client_id]

    # -- routing ------------------------------------------------------------

    def route(self, publish: mqtt.Publish) -> Set[_Session]:
        """Deliver a publish once to every matching session.

        Returns the set of sessions the payload was queued for. QoS 0:
        sessions whose buffer is full just miss this message.
        """
        matched = self.table.sessions_for(publish.topic)
        if not matched:
            return set()
        # Forwarded publishes never carry the retain flag (nothing is stored).
        data = mqtt.encode_packet(
            mqtt.Publish(topic=publish.topic, payload=publish.payload, retain=False)
        )
        delivered: Set[_Session] = set()
        for session in matched:
            if session.enqueue(data):
                delivered.add(session)
                self.stats.bump("messages_delivered")
            else:
                self.stats.bump("messages_dropped")
                log.info(
                    "dropped %d-byte message for slow session %s",
                    len(data),
                    session._name(),
                )
        return delivered

    def live_client_ids(self) -> Iterable[str]:
        with self._lock:
            return sorted(self._sessions)


def serve(host: str = "127.0.0.1", port: int = DEFAULT_PORT, **kwargs) -> Broker:
    """Bind and start a broker; returns the running handle."""
    return Broker(host, port, **kwargs).start()
