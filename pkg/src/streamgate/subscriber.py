"""Headless stream consumer.

Subscribes to the frame topic, base64-decodes each payload, and
optionally writes the decoded frames to disk, one numbered file per
frame. This replaces a visual dashboard with something auditable:
content hashes and on-disk artifacts.

A payload that fails base64 decoding is counted and skipped; one bad
message must not take the stream down. Disk writes go through a
bounded queue (64 frames) so a slow disk lags receipt instead of
stalling it; overflow is counted as a write drop in the report.
"""

from __future__ import annotations

import hashlib
import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

from . import mqtt, pipeline
from .client import MqttConnection

__all__ = ["DeliveryReport", "subscribe_and_collect"]

log = logging.getLogger(__name__)

WRITE_QUEUE_FRAMES = 64


@dataclass
class DeliveryReport:
    """What arrived, in what order, and how fast."""

    frames_received: int = 0
    first_timestamp: Optional[float] = None
    last_timestamp: Optional[float] = None
    measured_fps: Optional[float] = None
    out_of_order_count: int = 0
    decode_failure_count: int = 0
    write_drop_count: int = 0
    content_hashes: List[str] = field(default_factory=list)
    frame_indices: List[Optional[int]] = field(default_factory=list)


def _frame_index(data: bytes) -> Optional[int]:
    if len(data) < pipeline.INDEX_HEADER_BYTES:
        return None
    return int.from_bytes(data[: pipeline.INDEX_HEADER_BYTES], "big")


class _SinkWriter:
    """Writes frames to numbered files off the receive path."""

    def __init__(self, directory: Path):
        self.directory = directory
        self.directory.mkdir(parents=True, exist_ok=True)
        self._queue: "queue.Queue" = queue.Queue(maxsize=WRITE_QUEUE_FRAMES)
        self._thread = threading.Thread(target=self._loop, name="frame-sink", daemon=True)
        self._thread.start()

    def offer(self, name_index: int, data: bytes) -> bool:
        try:
            self._queue.put_nowait((name_index, data))
            return True
        except queue.Full:
            return False

    def _loop(self) -> None:
        while True:
            item = self._queue.get()
            if item is None:
                return
            name_index, data = item
            path = self.directory / f"frame_{name_index:06d}.bin"
            try:
                path.write_bytes(data)
            except OSError as exc:
                log.warning("sink write failed for %s: %s", path, exc)

    def finish(self) -> None:
        self._queue.put(None)
        self._thread.join(timeout=5.0)


def subscribe_and_collect(
    host: str,
    port: int,
    topic_filter: str,
    *,
    max_frames: Optional[int] = None,
    duration_s: Optional[float] = None,
    sink_dir: Optional[Union[str, Path]] = None,
    client_id: str = "stream-subscriber",
) -> DeliveryReport:
    """Receive frames until a bound is hit; returns the delivery report.

    The broker closing the connection ends collection cleanly with a
    partial report. Out-of-order detection uses the sequence index
    embedded in the first 8 bytes of each decoded frame; frames too
    short to carry one are skipped by that check.
    """
    if max_frames is None and duration_s is None:
        raise ValueError("need a frame-count or duration bound")
    report = DeliveryReport()
    timestamps: List[float] = []
    sink = _SinkWriter(Path(sink_dir)) if sink_dir is not None else None
    last_index: Optional[int] = None
    fallback_name = 0

    conn = MqttConnection(host, port, client_id, keep_alive_s=0)
    conn.connect()
    try:
        conn.subscribe(topic_filter)
        deadline = None if duration_s is None else time.monotonic() + duration_s
        while True:
            if max_frames is not None and report.frames_received >= max_frames:
                break
            if deadline is not None:
                wait = deadline - time.monotonic()
                if wait <= 0:
                    break
            else:
                wait = 1.0
            try:
                packet = conn.recv_packet(timeout=min(wait, 1.0))
            except TimeoutError:
                continue
            if packet is None:
                log.info("broker closed the connection, ending collection")
                break
            if not isinstance(packet, mqtt.Publish):
                continue
            now = time.monotonic()
            try:
                data = pipeline.decode_payload(packet.payload)
            except (ValueError, UnicodeDecodeError):
                report.decode_failure_count += 1
                log.warning("payload %d failed base64 decode, skipping", fallback_name)
                continue

            report.frames_received += 1
            timestamps.append(now)
            if report.first_timestamp is None:
                report.first_timestamp = now
            report.last_timestamp = now
            report.content_hashes.append(hashlib.sha256(data).hexdigest())

            index = _frame_index(data)
            report.frame_indices.append(index)
            if index is not None:
                if last_index is not None and index <= last_index:
                    report.out_of_order_count += 1
                last_index = index

            if sink is not None:
                name = index if index is not None else fallback_name
                if not sink.offer(name, data):
                    report.write_drop_count += 1
            fallback_name += 1
    except KeyboardInterrupt:
        log.info("collection interrupted after %d frames", report.frames_received)
    finally:
        conn.disconnect()
        if sink is not None:
            sink.finish()

    if len(timestamps) >= 2:
        try:
            report.measured_fps = pipeline.measure_fps(timestamps)
        except pipeline.MeasurementError:
            report.measured_fps = None
    log.info(
        "collection done: %d frames, %d decode failures, %d out of order",
        report.frames_received,
        report.decode_failure_count,
        report.out_of_order_count,
    )
    return report
