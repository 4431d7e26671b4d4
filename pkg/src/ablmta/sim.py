"""Deterministic traffic simulator: real clients against a real server.

Each simulated sender is an actual SMTP client over loopback TCP with
its own source IP (bound from 127.0.0.0/8), so the server's view of
client identity is genuine. A scenario runs once with the blacklist
enabled and once without, against a fresh in-process server each time,
and the report quantifies the bandwidth the blacklist saved.

Everything is deterministic for a given scenario: payloads derive from
the seed and the (sender, message) index, senders take turns in a fixed
round-robin order, and wall time never enters the report.
"""
from __future__ import annotations

import asyncio
import math
import random
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import IO

from .classifier import KeywordClassifier
from .config import (
    ConfigError,
    ServerConfig,
    parse_bool,
    parse_flat,
    parse_float,
    parse_fraction,
    parse_int,
    parse_keywords,
)
from .kernels import count_ci
from .protocol import Reply, parse_reply
from .server import MtaServer
from .session import RejectPolicy
from .store import TtlPolicy

CSV_HEADER = "run,connections,attempted,accepted,blocked_connect,blocked_mail,data_octets,bytes_in,bytes_out"

_FILLER_ALPHABET = b"abcdefghijklmnopqrstuvwxyz"
_RECIPIENT = "inbox@sink.example"
_CLIENT_TIMEOUT = 60.0


class ScenarioError(ConfigError):
    """A scenario file that cannot be used."""


class SimProtocolError(Exception):
    """A simulated client saw something no correct dialogue produces."""

    def __init__(self, message: str, transcript_excerpt: str) -> None:
        super().__init__(f"{message}\ntranscript tail:\n{transcript_excerpt}")


@dataclass(frozen=True)
class SenderProfile:
    name: str
    kind: str  # "spammer" or "legit"
    count: int = 1
    messages_per_sender: int = 1
    payload_octets: int = 512
    retry_on_reject: bool = True
    inter_message_delay_ms: int = 0
    address_rotation: str = "fixed"  # or "per-message"

    def __post_init__(self) -> None:
        if self.kind not in ("spammer", "legit"):
            raise ScenarioError(f"sender kind must be spammer or legit, got {self.kind!r}")
        if self.count < 1 or self.messages_per_sender < 1:
            raise ScenarioError("count and messages_per_sender must be >= 1")
        if self.payload_octets < 2:
            raise ScenarioError("payload_octets must be >= 2 (a body ends with CRLF)")
        if self.address_rotation not in ("fixed", "per-message"):
            raise ScenarioError(
                f"address_rotation must be fixed or per-message, got {self.address_rotation!r}"
            )


@dataclass(frozen=True)
class ScenarioConfig:
    profiles: tuple[SenderProfile, ...]
    rng_seed: int = 0
    runs: tuple[str, ...] = ("abl_on", "abl_off")
    policy: RejectPolicy = RejectPolicy()
    ttl_policy: TtlPolicy = TtlPolicy()
    keywords: tuple[tuple[str, float], ...] = (("xanadu", 100.0),)
    threshold: float = 100.0
    trigger_keyword: str = ""
    reject_triggering_message: bool = False

    def trigger_line(self) -> bytes:
        """The line that makes a payload spam, chosen so detection is certain."""
        trigger = self.trigger_keyword or (self.keywords[0][0] if self.keywords else "")
        weights = dict(self.keywords)
        if not trigger or trigger not in weights:
            raise ScenarioError("trigger_keyword must be one of classifier_keywords")
        weight = weights[trigger]
        if weight <= 0:
            raise ScenarioError("the trigger keyword needs a positive weight")
        if self.threshold <= 0:
            raise ScenarioError("classifier_threshold must be positive in scenarios")
        reps = max(1, math.ceil(self.threshold / weight))
        probe = KeywordClassifier(self.keywords, self.threshold)
        for _ in range(16):
            line = (" ".join([trigger] * reps) + "\r\n").encode("utf-8")
            if probe.classify(None, line).is_spam:
                return line
            reps += 1  # float dust pushed the score a hair under the threshold
        raise ScenarioError("could not construct a detectable trigger line")


def load_scenario(text: str) -> ScenarioConfig:
    """Parse a scenario file: global keys plus [sender.<name>] sections."""
    globals_, sections = parse_flat(text, allow_sections=True)
    known = {
        "rng_seed",
        "runs",
        "policy",
        "tarpit_delay_ms",
        "ttl_base_s",
        "ttl_growth",
        "ttl_max_s",
        "classifier_keywords",
        "classifier_threshold",
        "trigger_keyword",
        "reject_triggering_message",
    }
    unknown = sorted(set(globals_) - known)
    if unknown:
        raise ScenarioError(f"unknown scenario key(s): {', '.join(unknown)}")
    runs_text = globals_.get("runs", "both").strip().lower()
    if runs_text == "both":
        runs: tuple[str, ...] = ("abl_on", "abl_off")
    elif runs_text in ("abl_on", "abl_off"):
        runs = (runs_text,)
    else:
        raise ScenarioError(f"runs must be abl_on, abl_off, or both; got {runs_text!r}")
    try:
        policy = RejectPolicy.parse(
            globals_.get("policy", "reject_early_554"),
            parse_int(globals_.get("tarpit_delay_ms", "10000"), minimum=0),
        )
        ttl_policy = TtlPolicy(
            base_ttl_s=parse_int(globals_.get("ttl_base_s", "3600"), minimum=1),
            growth=parse_fraction(globals_.get("ttl_growth", "2")),
            max_ttl_s=parse_int(globals_.get("ttl_max_s", "86400"), minimum=1),
        )
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    keywords = parse_keywords(globals_.get("classifier_keywords", "xanadu:100"))
    if not keywords:
        raise ScenarioError("scenarios need at least one classifier keyword")
    profiles = []
    for section, kv in sections.items():
        prefix, _, name = section.partition(".")
        if prefix != "sender" or not name:
            raise ScenarioError(f"unexpected section [{section}], expected [sender.<name>]")
        profile_known = {
            "kind",
            "count",
            "messages_per_sender",
            "payload_octets",
            "retry_on_reject",
            "inter_message_delay_ms",
            "address_rotation",
        }
        bad = sorted(set(kv) - profile_known)
        if bad:
            raise ScenarioError(f"unknown key(s) in [{section}]: {', '.join(bad)}")
        if "kind" not in kv:
            raise ScenarioError(f"[{section}] needs kind = spammer|legit")
        profiles.append(
            SenderProfile(
                name=name,
                kind=kv["kind"].strip().lower(),
                count=parse_int(kv.get("count", "1"), minimum=1),
                messages_per_sender=parse_int(kv.get("messages_per_sender", "1"), minimum=1),
                payload_octets=parse_int(kv.get("payload_octets", "512"), minimum=2),
                retry_on_reject=parse_bool(kv.get("retry_on_reject", "true")),
                inter_message_delay_ms=parse_int(kv.get("inter_message_delay_ms", "0"), minimum=0),
                address_rotation=kv.get("address_rotation", "fixed").strip().lower(),
            )
        )
    if not profiles:
        raise ScenarioError("a scenario needs at least one [sender.<name>] section")
    scenario = ScenarioConfig(
        profiles=tuple(profiles),
        rng_seed=parse_int(globals_.get("rng_seed", "0")),
        runs=runs,
        policy=policy,
        ttl_policy=ttl_policy,
        keywords=keywords,
        threshold=parse_float(globals_.get("classifier_threshold", "100")),
        trigger_keyword=globals_.get("trigger_keyword", "").strip(),
        reject_triggering_message=parse_bool(globals_.get("reject_triggering_message", "false")),
    )
    scenario.trigger_line()  # validate eagerly, before any server starts
    return scenario


def build_payload(
    seed_key: str,
    octets: int,
    trigger_line: bytes,
    keywords: tuple[str, ...],
) -> bytes:
    """Exactly ``octets`` octets, CRLF-terminated lines, nothing dot-stuffed.

    The trigger line (may be empty) comes first; filler lines are random
    lowercase letters re-rolled until no classifier keyword appears in
    them, so legitimate payloads can never classify as spam by accident.
    """
    if octets < len(trigger_line) + 2 and octets != len(trigger_line):
        raise ScenarioError(
            f"payload_octets={octets} cannot hold the {len(trigger_line)}-octet trigger line"
        )
    rng = random.Random(seed_key)
    lowered = [kw.encode("utf-8") for kw in keywords]
    for _ in range(1000):
        body = bytearray(trigger_line)
        while len(body) < octets:
            remaining = octets - len(body)
            content = remaining - 2 if remaining <= 74 else 70
            body += bytes(rng.choice(_FILLER_ALPHABET) for _ in range(content))
            body += b"\r\n"
        filler = bytes(body[len(trigger_line) :])
        if not any(count_ci(filler, kw) for kw in lowered):
            return bytes(body)
    raise ScenarioError("could not generate keyword-free filler (keywords too short?)")


@dataclass
class _Sender:
    name: str
    ip: str
    profile: SenderProfile
    stopped: bool = False
    attempted: int = 0
    accepted: int = 0
    blocked_connect: int = 0
    blocked_mail: int = 0
    rejected_after_data: int = 0
    payload_octets_sent: int = 0
    transcript: bytearray = field(default_factory=bytearray)

    def address(self, message_index: int) -> str:
        if self.profile.address_rotation == "per-message":
            return f"{self.name}.m{message_index}@senders.sim.example"
        return f"{self.name}@senders.sim.example"


@dataclass(frozen=True)
class RunStats:
    """One run's numbers; server-side counters plus the client-side view."""

    run: str
    connections: int
    attempted: int
    accepted: int
    blocked_connect: int
    blocked_mail: int
    data_octets: int
    bytes_in: int
    bytes_out: int
    wall_time_s: float
    client_accepted: int
    client_blocked_connect: int
    client_blocked_mail: int
    client_payload_octets: int
    transcripts: dict[str, bytes]
    server_stats: dict[str, int]

    def csv_row(self) -> str:
        return ",".join(
            str(v)
            for v in (
                self.run,
                self.connections,
                self.attempted,
                self.accepted,
                self.blocked_connect,
                self.blocked_mail,
                self.data_octets,
                self.bytes_in,
                self.bytes_out,
            )
        )


@dataclass(frozen=True)
class SimReport:
    runs: tuple[RunStats, ...]
    #: 1 - data_abl_on / data_abl_off, exact; None unless both runs happened.
    reduction: Fraction | None

    def by_run(self, name: str) -> RunStats:
        for stats in self.runs:
            if stats.run == name:
                return stats
        raise KeyError(name)


def report_lines(report: SimReport) -> list[str]:
    lines = [CSV_HEADER]
    lines.extend(stats.csv_row() for stats in report.runs)
    if report.reduction is not None:
        lines.append(f"reduction,{float(report.reduction):.6f}")
    return lines


def write_report(report: SimReport, out: IO[str]) -> None:
    out.write("\n".join(report_lines(report)) + "\n")


def run_scenario(scenario: ScenarioConfig) -> SimReport:
    """Run every configured run of the scenario; blocking convenience wrapper."""
    return asyncio.run(_run_scenario(scenario))


async def _run_scenario(scenario: ScenarioConfig) -> SimReport:
    trigger_line = scenario.trigger_line()
    keyword_words = tuple(word for word, _ in scenario.keywords)
    payloads = _prebuild_payloads(scenario, trigger_line, keyword_words)
    runs = []
    for run_name in scenario.runs:
        runs.append(await _one_run(scenario, run_name, payloads))
    reduction: Fraction | None = None
    if len(runs) == 2:
        baseline = next(r for r in runs if r.run == "abl_off")
        treated = next(r for r in runs if r.run == "abl_on")
        if baseline.data_octets:
            reduction = 1 - Fraction(treated.data_octets, baseline.data_octets)
        else:
            reduction = Fraction(0)
    return SimReport(runs=tuple(runs), reduction=reduction)


def _prebuild_payloads(
    scenario: ScenarioConfig, trigger_line: bytes, keywords: tuple[str, ...]
) -> dict[tuple[str, int], bytes]:
    """Payloads keyed by (sender name, message index); shared by both runs."""
    payloads: dict[tuple[str, int], bytes] = {}
    for sender in _expand_senders(scenario):
        lead = trigger_line if sender.profile.kind == "spammer" else b""
        for k in range(sender.profile.messages_per_sender):
            seed_key = f"{scenario.rng_seed}:{sender.name}:{k}"
            payloads[(sender.name, k)] = build_payload(
                seed_key, sender.profile.payload_octets, lead, keywords
            )
    return payloads


def _expand_senders(scenario: ScenarioConfig) -> list[_Sender]:
    senders = []
    index = 0
    for profile in scenario.profiles:
        for j in range(profile.count):
            ip = f"127.1.{1 + index // 200}.{1 + index % 200}"
            senders.append(_Sender(name=f"{profile.name}-{j}", ip=ip, profile=profile))
            index += 1
    if index > 200 * 200:
        raise ScenarioError("too many senders to give each a distinct loopback IP")
    return senders


def _server_config(scenario: ScenarioConfig, abl_enabled: bool) -> ServerConfig:
    return ServerConfig(
        listen_address="127.0.0.1:0",
        admin_listen_address="127.0.0.1:0",
        greeting_domain="sim.target.example",
        policy=scenario.policy,
        ttl_policy=scenario.ttl_policy,
        classifier_keywords=scenario.keywords,
        classifier_threshold=scenario.threshold,
        command_timeout_s=30.0,
        abl_enabled=abl_enabled,
        reject_triggering_message=scenario.reject_triggering_message,
    )


async def _one_run(
    scenario: ScenarioConfig,
    run_name: str,
    payloads: dict[tuple[str, int], bytes],
) -> RunStats:
    server = MtaServer(_server_config(scenario, abl_enabled=run_name == "abl_on"))
    await server.start()
    started = time.monotonic()
    senders = _expand_senders(scenario)
    host, port = server.smtp_address
    try:
        max_rounds = max(s.profile.messages_per_sender for s in senders)
        for k in range(max_rounds):
            for sender in senders:
                if sender.stopped or k >= sender.profile.messages_per_sender:
                    continue
                if k > 0 and sender.profile.inter_message_delay_ms:
                    await asyncio.sleep(sender.profile.inter_message_delay_ms / 1000.0)
                outcome = await _attempt(sender, k, host, port, payloads[(sender.name, k)])
                if outcome != "accepted" and not sender.profile.retry_on_reject:
                    sender.stopped = True
        stats = await _fetch_stats(server.admin_address)
    finally:
        await server.stop()
    wall = time.monotonic() - started
    return RunStats(
        run=run_name,
        connections=stats["connections_total"],
        attempted=sum(s.attempted for s in senders),
        accepted=stats["messages_accepted"],
        blocked_connect=stats["sessions_blocked_at_connect"],
        blocked_mail=stats["sessions_blocked_at_mail"],
        data_octets=stats["data_octets_received"],
        bytes_in=stats["bytes_in"],
        bytes_out=stats["bytes_out"],
        wall_time_s=wall,
        client_accepted=sum(s.accepted for s in senders),
        client_blocked_connect=sum(s.blocked_connect for s in senders),
        client_blocked_mail=sum(s.blocked_mail for s in senders),
        client_payload_octets=sum(s.payload_octets_sent for s in senders),
        transcripts={s.name: bytes(s.transcript) for s in senders},
        server_stats=stats,
    )


async def _attempt(sender: _Sender, k: int, host: str, port: int, payload: bytes) -> str:
    """One complete client dialogue; returns the attempt outcome."""
    sender.attempted += 1
    reader, writer = await asyncio.open_connection(host, port, local_addr=(sender.ip, 0))
    try:
        banner = await _read_reply(sender, reader)
        if banner.code != 220:
            if banner.code not in (554, 451):
                raise _protocol_error(sender, f"unexpected banner code {banner.code}")
            sender.blocked_connect += 1
            return "blocked_connect"
        await _command(sender, writer, f"EHLO {sender.name}.sim.example")
        _expect(sender, await _read_reply(sender, reader), 250)
        await _command(sender, writer, f"MAIL FROM:<{sender.address(k)}>")
        reply = await _read_reply(sender, reader)
        if reply.code in (554, 451):
            sender.blocked_mail += 1
            await _quit(sender, reader, writer)
            return "blocked_mail"
        _expect(sender, reply, 250)
        await _command(sender, writer, f"RCPT TO:<{_RECIPIENT}>")
        _expect(sender, await _read_reply(sender, reader), 250)
        await _command(sender, writer, "DATA")
        _expect(sender, await _read_reply(sender, reader), 354)
        await _write(sender, writer, payload + b".\r\n")
        sender.payload_octets_sent += len(payload)
        final = await _read_reply(sender, reader)
        if final.code == 250:
            sender.accepted += 1
            outcome = "accepted"
        elif final.code in (554, 552):
            sender.rejected_after_data += 1
            outcome = "rejected_after_data"
        else:
            raise _protocol_error(sender, f"unexpected post-data code {final.code}")
        await _quit(sender, reader, writer)
        return outcome
    finally:
        writer.close()
        try:
            await writer.wait_closed()
        except (ConnectionError, OSError):
            pass


async def _quit(sender: _Sender, reader: asyncio.StreamReader, writer) -> None:
    await _command(sender, writer, "QUIT")
    try:
        _expect(sender, await _read_reply(sender, reader), 221)
    except SimProtocolError:
        raise
    except (ConnectionError, OSError):
        pass  # server may already be tearing the connection down


async def _command(sender: _Sender, writer, text: str) -> None:
    await _write(sender, writer, f"{text}\r\n".encode("utf-8"))


async def _write(sender: _Sender, writer, data: bytes) -> None:
    writer.write(data)
    await writer.drain()
    sender.transcript += b"C " + data + b"\n"


async def _read_reply(sender: _Sender, reader: asyncio.StreamReader) -> Reply:
    raw = bytearray()
    while True:
        line = await asyncio.wait_for(reader.readline(), _CLIENT_TIMEOUT)
        if not line.endswith(b"\n"):
            raise _protocol_error(sender, "connection closed mid-reply")
        raw += line
        if len(line) >= 4 and line[:3].isdigit():
            if line[3:4] == b" ":
                break
            if line[3:4] == b"-":
                continue
        raise _protocol_error(sender, f"malformed reply line {bytes(line)!r}")
    sender.transcript += b"S " + raw + b"\n"
    return parse_reply(bytes(raw))


def _expect(sender: _Sender, reply: Reply, code: int) -> None:
    if reply.code != code:
        raise _protocol_error(sender, f"expected {code}, got {reply.code} {reply.lines!r}")


def _protocol_error(sender: _Sender, message: str) -> SimProtocolError:
    tail = bytes(sender.transcript[-600:])
    return SimProtocolError(f"sender {sender.name} ({sender.ip}): {message}", tail.decode("latin-1"))


async def _fetch_stats(address: tuple[str, int]) -> dict[str, int]:
    reader, writer = await asyncio.open_connection(*address)
    try:
        writer.write(b"STATS\n")
        await writer.drain()
        stats: dict[str, int] = {}
        while True:
            line = (await asyncio.wait_for(reader.readline(), _CLIENT_TIMEOUT)).decode("utf-8")
            if not line:
                raise ConnectionError("admin connection closed before OK")
            text = line.strip()
            if text == "OK":
                return stats
            if text.startswith("ERR"):
                raise ConnectionError(f"admin STATS failed: {text}")
            key, _, value = text.partition("=")
            stats[key] = int(value)
    finally:
        writer.close()
        try:
            await writer.wait_closed()
        except (ConnectionError, OSError):
            pass
