"""Flat ``key = value`` configuration, shared by files and CLI flags.

Every server option has one canonical key. The same key works in a
config file line and as a ``--key value`` CLI flag, and resolution is
always defaults, then file, then flags. All three layers are plain
strings until the final typed parse, so precedence cannot depend on the
source.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .session import RejectPolicy
from .store import TtlPolicy


class ConfigError(ValueError):
    """Bad configuration text, key, or value."""


def parse_flat(
    text: str, allow_sections: bool = False
) -> tuple[dict[str, str], dict[str, dict[str, str]]]:
    """Parse ``key = value`` lines, ``#`` comment lines, blank lines.

    With allow_sections, ``[name]`` lines open named sections (used by
    simulator scenarios); keys before any section are global. Duplicate
    keys and duplicate section names are errors, as is anything else.
    """
    globals_: dict[str, str] = {}
    sections: dict[str, dict[str, str]] = {}
    current = globals_
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            if not allow_sections:
                raise ConfigError(f"line {lineno}: sections are not allowed in this file")
            name = line[1:-1].strip()
            if not name:
                raise ConfigError(f"line {lineno}: empty section name")
            if name in sections:
                raise ConfigError(f"line {lineno}: duplicate section [{name}]")
            current = {}
            sections[name] = current
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in current:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        current[key] = value
    return globals_, sections


def parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {value!r}")


def parse_int(value: str, minimum: int | None = None) -> int:
    try:
        n = int(value, 10)
    except ValueError:
        raise ConfigError(f"expected an integer, got {value!r}") from None
    if minimum is not None and n < minimum:
        raise ConfigError(f"expected an integer >= {minimum}, got {n}")
    return n


def parse_float(value: str, minimum: float | None = None) -> float:
    try:
        x = float(value)
    except ValueError:
        raise ConfigError(f"expected a number, got {value!r}") from None
    if x != x:
        raise ConfigError("NaN is not a valid value")
    if minimum is not None and x < minimum:
        raise ConfigError(f"expected a number >= {minimum}, got {value!r}")
    return x


def parse_fraction(value: str) -> Fraction:
    """Exact decimal parse: "1.5" means exactly 3/2."""
    try:
        return Fraction(value.strip())
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"expected a decimal number, got {value!r}") from None


def parse_keywords(value: str) -> tuple[tuple[str, float], ...]:
    """"word:weight,word:weight" pairs; empty string means no keywords."""
    value = value.strip()
    if not value:
        return ()
    out = []
    for piece in value.split(","):
        word, sep, weight_text = piece.strip().partition(":")
        word = word.strip()
        if not sep or not word:
            raise ConfigError(f"expected word:weight, got {piece.strip()!r}")
        if any(c in word for c in ":,") or not word.isprintable():
            raise ConfigError(f"bad keyword {word!r}")
        out.append((word, parse_float(weight_text.strip(), minimum=0.0)))
    return tuple(out)


def parse_address(value: str) -> tuple[str, int]:
    """"host:port" with optional [brackets] for IPv6 hosts."""
    text = value.strip()
    host, sep, port_text = text.rpartition(":")
    if not sep or not host:
        raise ConfigError(f"expected host:port, got {value!r}")
    if host.startswith("[") and host.endswith("]"):
        host = host[1:-1]
    port = parse_int(port_text, minimum=0)
    if port > 65535:
        raise ConfigError(f"port {port} out of range")
    return host, port


@dataclass(frozen=True)
class ServerConfig:
    listen_address: str = "127.0.0.1:2525"
    admin_listen_address: str = "127.0.0.1:2526"
    greeting_domain: str = "mail.example"
    policy: RejectPolicy = RejectPolicy()
    ttl_policy: TtlPolicy = TtlPolicy()
    classifier_keywords: tuple[tuple[str, float], ...] = ()
    classifier_threshold: float = 1.0
    classifier_hook: str = ""
    classifier_hook_timeout_ms: int = 10000
    max_message_octets: int = 10 * 1024 * 1024
    command_timeout_s: float = 300.0
    max_concurrent_sessions: int = 1024
    snapshot_path: str = ""
    snapshot_interval_s: float = 60.0
    abl_enabled: bool = True
    reject_triggering_message: bool = False
    max_entries: int = 1_000_000

    @property
    def listen_host_port(self) -> tuple[str, int]:
        return parse_address(self.listen_address)

    @property
    def admin_host_port(self) -> tuple[str, int]:
        return parse_address(self.admin_listen_address)


#: Canonical string form of every key's default; also the authoritative
#: list of which keys exist.
DEFAULTS: dict[str, str] = {
    "listen_address": "127.0.0.1:2525",
    "admin_listen_address": "127.0.0.1:2526",
    "greeting_domain": "mail.example",
    "policy": "reject_early_554",
    "tarpit_delay_ms": "10000",
    "ttl_base_s": "3600",
    "ttl_growth": "2",
    "ttl_max_s": "86400",
    "classifier_keywords": "",
    "classifier_threshold": "1.0",
    "classifier_hook": "",
    "classifier_hook_timeout_ms": "10000",
    "max_message_octets": "10485760",
    "command_timeout_s": "300",
    "max_concurrent_sessions": "1024",
    "snapshot_path": "",
    "snapshot_interval_s": "60",
    "abl_enabled": "true",
    "reject_triggering_message": "false",
    "max_entries": "1000000",
}

CONFIG_KEYS = tuple(DEFAULTS)


def _check_known(kv: dict[str, str], source: str) -> None:
    unknown = sorted(set(kv) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown {source} key(s): {', '.join(unknown)}")


def resolve_server_config(
    file_text: str | None = None,
    overrides: dict[str, str] | None = None,
) -> ServerConfig:
    """Merge defaults, config-file text, and flag overrides, in that order."""
    merged = dict(DEFAULTS)
    if file_text is not None:
        file_kv, sections = parse_flat(file_text, allow_sections=False)
        _check_known(file_kv, "config file")
        merged.update(file_kv)
    if overrides:
        _check_known(overrides, "flag")
        merged.update(overrides)
    try:
        ttl_policy = TtlPolicy(
            base_ttl_s=parse_int(merged["ttl_base_s"], minimum=1),
            growth=parse_fraction(merged["ttl_growth"]),
            max_ttl_s=parse_int(merged["ttl_max_s"], minimum=1),
        )
    except ValueError as exc:
        raise ConfigError(f"bad TTL policy: {exc}") from None
    try:
        policy = RejectPolicy.parse(
            merged["policy"], parse_int(merged["tarpit_delay_ms"], minimum=0)
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    # Addresses are validated here but stored as text.
    parse_address(merged["listen_address"])
    parse_address(merged["admin_listen_address"])
    return ServerConfig(
        listen_address=merged["listen_address"],
        admin_listen_address=merged["admin_listen_address"],
        greeting_domain=merged["greeting_domain"],
        policy=policy,
        ttl_policy=ttl_policy,
        classifier_keywords=parse_keywords(merged["classifier_keywords"]),
        classifier_threshold=parse_float(merged["classifier_threshold"]),
        classifier_hook=merged["classifier_hook"],
        classifier_hook_timeout_ms=parse_int(merged["classifier_hook_timeout_ms"], minimum=1),
        max_message_octets=parse_int(merged["max_message_octets"], minimum=1),
        command_timeout_s=parse_float(merged["command_timeout_s"], minimum=0.01),
        max_concurrent_sessions=parse_int(merged["max_concurrent_sessions"], minimum=1),
        snapshot_path=merged["snapshot_path"],
        snapshot_interval_s=parse_float(merged["snapshot_interval_s"], minimum=0.01),
        abl_enabled=parse_bool(merged["abl_enabled"]),
        reject_triggering_message=parse_bool(merged["reject_triggering_message"]),
        max_entries=parse_int(merged["max_entries"], minimum=1),
    )
