"""Command-line entry points.

    streamgate auth      --config g.cfg --provision secret.hex
    streamgate stream    --config g.cfg --provision secret.hex --frames 70
    streamgate subscribe --topic camera/stream --frames 70 --sink out/
    streamgate broker    --host 127.0.0.1 --port 1883
    streamgate bench     --seed 0 --report bench.txt

Exit codes: 0 success / authorized, 1 authorization refused, 2 bad
input (config, credentials, provisioning, unreachable files). Long
running commands shut down cleanly on Ctrl-C and flush their stats.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Optional

from . import bench as bench_mod
from . import broker as broker_mod
from . import driver, keystore, pipeline, subscriber
from .client import ClientError
from .enclave import AuthEnclave, LatencyModel, ProvisioningError
from .keystore import ConfigError, CredentialsError, GatewayConfig

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_REFUSED = 1
EXIT_BAD_INPUT = 2


def _load_config(path: Optional[str]) -> GatewayConfig:
    if path is None:
        return GatewayConfig()
    return keystore.parse_config(Path(path).read_text())


def _load_enclave(args, config: GatewayConfig) -> AuthEnclave:
    image = keystore.parse_provisioning(Path(args.provision).read_text())
    pipelined = config.enclave_pipelined if args.pipelined is None else args.pipelined
    model = LatencyModel.pipelined() if pipelined else LatencyModel.unpipelined()
    return AuthEnclave(image, model)


def _load_candidate(args, config: GatewayConfig) -> keystore.CandidateKey:
    path = args.credentials if args.credentials else config.credentials_path
    return keystore.parse_credentials(Path(path).read_text())


def _apply_overrides(args, config: GatewayConfig) -> GatewayConfig:
    if getattr(args, "host", None):
        config.mqtt_host = args.host
    if getattr(args, "port", None):
        config.mqtt_port = args.port
    if getattr(args, "topic", None):
        config.mqtt_topic = args.topic
    if getattr(args, "fps", None):
        config.camera_fps = args.fps
    return config


def cmd_auth(args) -> int:
    config = _load_config(args.config)
    enclave = _load_enclave(args, config)
    candidate = _load_candidate(args, config)
    verdict = driver.authenticate(enclave, candidate)
    status = "authorized" if verdict.authorized else "refused"
    print(
        f"{status}: cycles={verdict.cycles} elapsed_ns={verdict.elapsed_ns} "
        f"words_written={verdict.words_written}"
    )
    return EXIT_OK if verdict.authorized else EXIT_REFUSED


def cmd_stream(args) -> int:
    config = _apply_overrides(args, _load_config(args.config))
    enclave = _load_enclave(args, config)
    candidate = _load_candidate(args, config)
    frames = args.frames
    duration = args.duration
    if frames is None and duration is None:
        duration = 5.0
    try:
        result = pipeline.publish_stream(
            config, enclave, candidate, max_frames=frames, duration_s=duration
        )
    except KeyboardInterrupt:
        print("stream interrupted", file=sys.stderr)
        return EXIT_OK
    except pipeline.StreamAborted as exc:
        print(f"stream aborted: {exc}", file=sys.stderr)
        _print_stats(exc.stats)
        return EXIT_BAD_INPUT
    except ClientError as exc:
        print(f"broker connection failed: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    if not result.authorized:
        print("refused: candidate key rejected, nothing published", file=sys.stderr)
        return EXIT_REFUSED
    assert result.stats is not None
    _print_stats(result.stats)
    return EXIT_OK


def _print_stats(stats: pipeline.ThrottleStats) -> None:
    print(
        f"frames_sent: {stats.frames_sent}\n"
        f"window_duration: {stats.window_duration:.3f}\n"
        f"measured_fps: {stats.measured_fps:.3f}\n"
        f"target_fps: {stats.target_fps:g}"
    )


def cmd_subscribe(args) -> int:
    frames = args.frames
    duration = args.duration
    if frames is None and duration is None:
        duration = 5.0
    try:
        report = subscriber.subscribe_and_collect(
            args.host,
            args.port,
            args.topic,
            max_frames=frames,
            duration_s=duration,
            sink_dir=args.sink,
        )
    except ClientError as exc:
        print(f"broker connection failed: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except KeyboardInterrupt:
        print("subscribe interrupted", file=sys.stderr)
        return EXIT_OK
    fps = "n/a" if report.measured_fps is None else f"{report.measured_fps:.3f}"
    print(
        f"frames_received: {report.frames_received}\n"
        f"measured_fps: {fps}\n"
        f"out_of_order: {report.out_of_order_count}\n"
        f"decode_failures: {report.decode_failure_count}\n"
        f"write_drops: {report.write_drop_count}"
    )
    return EXIT_OK


def cmd_broker(args) -> int:
    handle = broker_mod.serve(args.host, args.port)
    print(f"broker listening on {args.host}:{handle.port}", file=sys.stderr)
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        pass
    finally:
        handle.stop()
        for key, value in handle.stats.snapshot().items():
            print(f"{key}: {value}")
    return EXIT_OK


def cmd_bench(args) -> int:
    report = bench_mod.run_bench(
        seed=args.seed,
        frames_per_target=args.frames,
    )
    text = report.to_text()
    if args.report:
        Path(args.report).write_text(text)
        print(f"report written to {args.report}", file=sys.stderr)
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamgate",
        description="Authenticated MQTT frame streaming behind an emulated key enclave",
    )
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, provision: bool):
        p.add_argument("--config", help="gateway config file")
        p.add_argument("--credentials", help="credentials file (default: from config)")
        if provision:
            p.add_argument(
                "--provision", required=True, help="provisioning image file (64 hex digits)"
            )
        group = p.add_mutually_exclusive_group()
        group.add_argument(
            "--pipelined", dest="pipelined", action="store_true", default=None
        )
        group.add_argument("--no-pipelined", dest="pipelined", action="store_false")

    p_auth = sub.add_parser("auth", help="run one authentication and print the verdict")
    add_common(p_auth, provision=True)
    p_auth.set_defaults(func=cmd_auth)

    p_stream = sub.add_parser("stream", help="publish an authenticated frame stream")
    add_common(p_stream, provision=True)
    p_stream.add_argument("--host")
    p_stream.add_argument("--port", type=int)
    p_stream.add_argument("--topic")
    p_stream.add_argument("--fps", type=float)
    p_stream.add_argument("--frames", type=int)
    p_stream.add_argument("--duration", type=float)
    p_stream.set_defaults(func=cmd_stream)

    p_sub = sub.add_parser("subscribe", help="collect frames from a topic")
    p_sub.add_argument("--host", default="localhost")
    p_sub.add_argument("--port", type=int, default=broker_mod.DEFAULT_PORT)
    p_sub.add_argument("--topic", default="camera/stream")
    p_sub.add_argument("--frames", type=int)
    p_sub.add_argument("--duration", type=float)
    p_sub.add_argument("--sink", help="directory for received frames")
    p_sub.set_defaults(func=cmd_subscribe)

    p_broker = sub.add_parser("broker", help="run the embedded broker")
    p_broker.add_argument("--host", default="127.0.0.1")
    p_broker.add_argument("--port", type=int, default=broker_mod.DEFAULT_PORT)
    p_broker.set_defaults(func=cmd_broker)

    p_bench = sub.add_parser("bench", help="run the benchmark suite")
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument(
        "--frames", type=int, help="frames per fps run (default: 5 seconds worth)"
    )
    p_bench.add_argument("--report", help="also write the report to this path")
    p_bench.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (ConfigError, CredentialsError, ProvisioningError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
