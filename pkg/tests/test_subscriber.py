"""Delivery collection, fault isolation, and disk sink behavior."""

import hashlib
import threading
import time

import pytest

from streamgate.broker import Broker
from streamgate.client import MqttConnection
from streamgate.pipeline import SyntheticFrameSource, encode_payload
from streamgate.subscriber import subscribe_and_collect

TOPIC = "camera/stream"


def collect_in_thread(broker, box, **kwargs):
    def _run():
        box["report"] = subscribe_and_collect(
            "127.0.0.1", broker.port, TOPIC, **kwargs
        )

    thread = threading.Thread(target=_run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 3.0
    while broker.table.filter_count() == 0 and time.monotonic() < deadline:
        time.sleep(0.01)
    assert broker.table.filter_count() == 1, "subscriber never registered"
    return thread


def publish_frames(broker, frames, client_id="feeder"):
    pub = MqttConnection("127.0.0.1", broker.port, client_id)
    pub.connect()
    for frame in frames:
        pub.publish(TOPIC, encode_payload(frame).encode("ascii"))
    pub.disconnect()


def test_collects_published_frames_with_hashes():
    source = SyntheticFrameSource(64, 64, frame_bytes=64)
    frames = [source.next_frame() for _ in range(10)]
    with Broker("127.0.0.1", 0) as broker:
        box = {}
        thread = collect_in_thread(broker, box, max_frames=10, duration_s=8.0)
        publish_frames(broker, frames)
        thread.join(timeout=8.0)
    report = box["report"]
    assert report.frames_received == 10
    assert report.decode_failure_count == 0
    assert report.out_of_order_count == 0
    assert report.content_hashes == [
        hashlib.sha256(f.bytes).hexdigest() for f in frames
    ]
    assert report.frame_indices == list(range(10))


def test_received_hashes_subset_of_published():
    source = SyntheticFrameSource(32, 32, frame_bytes=32)
    frames = [source.next_frame() for _ in range(25)]
    published = {hashlib.sha256(f.bytes).hexdigest() for f in frames}
    with Broker("127.0.0.1", 0) as broker:
        box = {}
        thread = collect_in_thread(broker, box, max_frames=25, duration_s=8.0)
        publish_frames(broker, frames)
        thread.join(timeout=8.0)
    assert set(box["report"].content_hashes) <= published


def test_bad_payload_counted_not_fatal():
    source = SyntheticFrameSource(64, 64, frame_bytes=64)
    with Broker("127.0.0.1", 0) as broker:
        box = {}
        thread = collect_in_thread(broker, box, max_frames=2, duration_s=8.0)
        pub = MqttConnection("127.0.0.1", broker.port, "feeder")
        pub.connect()
        pub.publish(TOPIC, encode_payload(source.frame_at(0)).encode("ascii"))
        pub.publish(TOPIC, b"!this is not base64!")
        pub.publish(TOPIC, encode_payload(source.frame_at(1)).encode("ascii"))
        pub.disconnect()
        thread.join(timeout=8.0)
    report = box["report"]
    assert report.frames_received == 2
    assert report.decode_failure_count == 1


def test_empty_topic_times_out_cleanly():
    with Broker("127.0.0.1", 0) as broker:
        start = time.monotonic()
        report = subscribe_and_collect(
            "127.0.0.1", broker.port, "nothing/here", duration_s=1.0
        )
        elapsed = time.monotonic() - start
    assert report.frames_received == 0
    assert report.measured_fps is None
    assert 0.9 <= elapsed <= 3.0


def test_broker_shutdown_ends_collection_cleanly():
    broker = Broker("127.0.0.1", 0).start()
    box = {}
    thread = collect_in_thread(broker, box, duration_s=10.0)
    time.sleep(0.2)
    broker.stop()
    thread.join(timeout=5.0)
    assert box["report"].frames_received == 0


def test_out_of_order_detection():
    source = SyntheticFrameSource(64, 64, frame_bytes=64)
    shuffled = [source.frame_at(i) for i in (0, 2, 1)]
    with Broker("127.0.0.1", 0) as broker:
        box = {}
        thread = collect_in_thread(broker, box, max_frames=3, duration_s=8.0)
        publish_frames(broker, shuffled)
        thread.join(timeout=8.0)
    report = box["report"]
    assert report.frames_received == 3
    assert report.out_of_order_count == 1
    assert report.frame_indices == [0, 2, 1]


def test_sink_writes_numbered_files(tmp_path):
    source = SyntheticFrameSource(64, 64, frame_bytes=64)
    frames = [source.frame_at(i) for i in range(4)]
    sink = tmp_path / "frames"
    with Broker("127.0.0.1", 0) as broker:
        box = {}
        thread = collect_in_thread(
            broker, box, max_frames=4, duration_s=8.0, sink_dir=sink
        )
        publish_frames(broker, frames)
        thread.join(timeout=8.0)
    names = sorted(p.name for p in sink.iterdir())
    assert names == [f"frame_{i:06d}.bin" for i in range(4)]
    for i, frame in enumerate(frames):
        assert (sink / f"frame_{i:06d}.bin").read_bytes() == frame.bytes
    assert box["report"].write_drop_count == 0


def test_measured_fps_from_arrival_times():
    source = SyntheticFrameSource(64, 64, frame_bytes=64)
    with Broker("127.0.0.1", 0) as broker:
        box = {}
        thread = collect_in_thread(broker, box, max_frames=8, duration_s=8.0)
        pub = MqttConnection("127.0.0.1", broker.port, "feeder")
        pub.connect()
        for i in range(8):
            pub.publish(TOPIC, encode_payload(source.frame_at(i)).encode("ascii"))
            time.sleep(0.05)  # ~20 fps
        pub.disconnect()
        thread.join(timeout=8.0)
    fps = box["report"].measured_fps
    assert fps is not None
    assert 12.0 <= fps <= 28.0


def test_requires_a_bound():
    with pytest.raises(ValueError):
        subscribe_and_collect("127.0.0.1", 1883, TOPIC)


def test_non_publish_packets_ignored():
    # A stray pingresp in the stream must not disturb collection.
    source = SyntheticFrameSource(64, 64, frame_bytes=64)
    with Broker("127.0.0.1", 0) as broker:
        box = {}
        thread = collect_in_thread(broker, box, max_frames=1, duration_s=8.0)
        pub = MqttConnection("127.0.0.1", broker.port, "feeder")
        pub.connect()
        pub.publish(TOPIC, encode_payload(source.frame_at(0)).encode("ascii"))
        pub.disconnect()
        thread.join(timeout=8.0)
    assert box["report"].frames_received == 1
