"""Gateway configuration and on-device credential files.

Two small line-oriented formats live here, both documented in the
README so they can be written by hand on a device:

* the gateway config: ``key = value`` pairs, one per line, ``#`` starts
  a comment line, unknown keys are hard errors (a misspelled
  security-relevant key must not be silently ignored);
* the credentials file: the first non-blank, non-comment line is the
  key as hex text. 64 hex digits is a full 256-bit key, a shorter
  even-length string is an incomplete key, an empty file is an empty
  key. Hex was chosen over a binary blob because it is auditable in
  any editor and has no byte-order ambiguity.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

from .enclave import KEY_BYTES

__all__ = [
    "CandidateKey",
    "ConfigError",
    "CredentialsError",
    "GatewayConfig",
    "parse_config",
    "parse_credentials",
    "parse_provisioning",
    "serialize_config",
]


class ConfigError(ValueError):
    """Config text rejected; message names the offending line."""


class CredentialsError(ValueError):
    """Credentials text rejected."""


@dataclass(frozen=True)
class CandidateKey:
    """Key material read from a credentials file, possibly incomplete.

    ``source_label`` records how the key looked at parse time (full
    keys cannot be judged correct or wrong without the enclave, so they
    come out ``unlabeled``).
    """

    bytes: bytes
    source_label: str = "unlabeled"

    def __post_init__(self):
        if len(self.bytes) > KEY_BYTES:
            raise CredentialsError(
                f"candidate key longer than {KEY_BYTES} bytes: {len(self.bytes)}"
            )
        if self.source_label not in (
            "correct",
            "invalid",
            "incomplete",
            "empty",
            "wrong",
            "unlabeled",
        ):
            raise CredentialsError(f"unknown source label: {self.source_label!r}")


@dataclass
class GatewayConfig:
    """Gateway settings: camera shape, MQTT endpoint, credential path.

    Field defaults are the documented fallbacks for keys missing from
    the config file.
    """

    camera_source: str = "synthetic"
    camera_width: int = 1920
    camera_height: int = 1080
    camera_fps: float = 14.0
    mqtt_host: str = "localhost"
    mqtt_port: int = 1883
    mqtt_topic: str = "camera/stream"
    mqtt_client_id: str = "edge-gateway"
    credentials_path: str = "credentials.txt"
    enclave_pipelined: bool = True


# Dotted config key -> GatewayConfig attribute.
_CONFIG_KEYS = {
    "camera.source": "camera_source",
    "camera.width": "camera_width",
    "camera.height": "camera_height",
    "camera.fps": "camera_fps",
    "mqtt.host": "mqtt_host",
    "mqtt.port": "mqtt_port",
    "mqtt.topic": "mqtt_topic",
    "mqtt.client_id": "mqtt_client_id",
    "credentials.path": "credentials_path",
    "enclave.pipelined": "enclave_pipelined",
}
_ATTR_TO_KEY = {attr: key for key, attr in _CONFIG_KEYS.items()}


def _parse_int(raw: str, lineno: int, key: str, lo: int, hi: int) -> int:
    try:
        value = int(raw, 10)
    except ValueError:
        raise ConfigError(f"line {lineno}: {key} must be an integer, got {raw!r}") from None
    if not lo <= value <= hi:
        raise ConfigError(f"line {lineno}: {key} must be in [{lo}, {hi}], got {value}")
    return value


def _parse_fps(raw: str, lineno: int) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"line {lineno}: camera.fps must be a number, got {raw!r}") from None
    if not value > 0:
        raise ConfigError(f"line {lineno}: camera.fps must be positive, got {value}")
    return value


def _parse_bool(raw: str, lineno: int, key: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    raise ConfigError(f"line {lineno}: {key} must be true or false, got {raw!r}")


def _check_topic(topic: str, lineno: int) -> str:
    if not topic:
        raise ConfigError(f"line {lineno}: mqtt.topic must not be empty")
    if "+" in topic or "#" in topic:
        raise ConfigError(
            f"line {lineno}: mqtt.topic must not contain wildcards, got {topic!r}"
        )
    return topic


def parse_config(text: str) -> GatewayConfig:
    """Parse gateway config text; missing keys fall back to defaults."""
    config = GatewayConfig()
    seen = set()
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw_line!r}")
        key, _, raw_value = line.partition("=")
        key = key.strip()
        value = raw_value.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)

        if key == "camera.width":
            config.camera_width = _parse_int(value, lineno, key, 1, 1 << 16)
        elif key == "camera.height":
            config.camera_height = _parse_int(value, lineno, key, 1, 1 << 16)
        elif key == "camera.fps":
            config.camera_fps = _parse_fps(value, lineno)
        elif key == "mqtt.port":
            config.mqtt_port = _parse_int(value, lineno, key, 1, 65535)
        elif key == "mqtt.topic":
            config.mqtt_topic = _check_topic(value, lineno)
        elif key == "enclave.pipelined":
            config.enclave_pipelined = _parse_bool(value, lineno, key)
        elif key == "mqtt.client_id":
            if not value:
                raise ConfigError(f"line {lineno}: mqtt.client_id must not be empty")
            config.mqtt_client_id = value
        elif key == "camera.source":
            if not value:
                raise ConfigError(f"line {lineno}: camera.source must not be empty")
            config.camera_source = value
        elif key == "mqtt.host":
            if not value:
                raise ConfigError(f"line {lineno}: mqtt.host must not be empty")
            config.mqtt_host = value
        elif key == "credentials.path":
            if not value:
                raise ConfigError(f"line {lineno}: credentials.path must not be empty")
            config.credentials_path = value
    return config


def serialize_config(config: GatewayConfig) -> str:
    """Render a config back to file text; parse(serialize(c)) == c."""
    lines = []
    for f in fields(GatewayConfig):
        value = getattr(config, f.name)
        if isinstance(value, bool):
            rendered = "true" if value else "false"
        else:
            rendered = str(value)
        lines.append(f"{_ATTR_TO_KEY[f.name]} = {rendered}")
    return "\n".join(lines) + "\n"


def _first_payload_line(text: str) -> tuple[Optional[str], int]:
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if line and not line.startswith("#"):
            return line, lineno
    return None, 0


def _decode_hex_key(line: str, lineno: int) -> bytes:
    if len(line) % 2 != 0:
        raise CredentialsError(f"line {lineno}: odd-length hex key ({len(line)} digits)")
    if len(line) > 2 * KEY_BYTES:
        raise CredentialsError(
            f"line {lineno}: key longer than {KEY_BYTES} bytes ({len(line) // 2})"
        )
    try:
        return bytes.fromhex(line)
    except ValueError:
        raise CredentialsError(f"line {lineno}: non-hex character in key") from None


def parse_credentials(text: str) -> CandidateKey:
    """Parse a credentials file into a candidate key.

    Empty file (or comments only) yields the empty key; fewer than 64
    hex digits yields an incomplete key.
    """
    line, lineno = _first_payload_line(text)
    if line is None:
        return CandidateKey(b"", "empty")
    key = _decode_hex_key(line, lineno)
    label = "unlabeled" if len(key) == KEY_BYTES else "incomplete"
    return CandidateKey(key, label)


def parse_provisioning(text: str) -> bytes:
    """Parse a provisioning image file: exactly 64 hex digits.

    This is the secret that gets sealed into the enclave, so unlike a
    candidate credential it must be full length.
    """
    line, lineno = _first_payload_line(text)
    if line is None:
        raise CredentialsError("provisioning file has no key line")
    image = _decode_hex_key(line, lineno)
    if len(image) != KEY_BYTES:
        raise CredentialsError(
            f"line {lineno}: provisioning image must be exactly "
            f"{KEY_BYTES} bytes, got {len(image)}"
        )
    return image
