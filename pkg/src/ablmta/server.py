"""The asyncio MTA: one task per connection, plus the admin listener.

The server owns transport, time, the blacklist store, and metrics; the
dialogue itself lives in session.py. Wall-clock reads go through an
injectable clock so tests can warp time.
"""
from __future__ import annotations

import asyncio
import ipaddress
import logging
import os
import time
from dataclasses import dataclass, fields

from .classifier import HookClassifier, KeywordClassifier, SpamVerdict
from .config import ServerConfig
from .protocol import MailFrom, ParseError, Quit, parse_command, render_reply
from .session import (
    BLOCK_GRACE_S,
    BYE,
    COMMAND_TIMEOUT,
    DataEnd,
    OK,
    Phase,
    Reply,
    SPAM_REJECTED,
    SessionState,
    TOO_LARGE,
    TOO_MANY_SESSIONS,
    reply_for_parse_error,
)
from .store import (
    CLEAN,
    BlacklistStore,
    NoLiveEntry,
    SenderIdentity,
    format_entry,
)

log = logging.getLogger("ablmta.server")

_READ_CHUNK = 65536
_MAX_LINE_BUFFER = 1 << 20


class _ClientVanished(Exception):
    """The peer disappeared at a point that leaves the session broken."""


@dataclass
class Metrics:
    """Monotonic counters; exposed verbatim through the admin STATS command."""

    connections_total: int = 0
    sessions_blocked_at_connect: int = 0
    sessions_blocked_at_mail: int = 0
    messages_accepted: int = 0
    messages_classified_spam: int = 0
    bytes_in: int = 0
    bytes_out: int = 0
    data_octets_received: int = 0
    blocked_attempts_refreshed: int = 0

    def as_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class MtaServer:
    """SMTP listener, admin listener, store, metrics, snapshots."""

    def __init__(self, config: ServerConfig, clock=time.time) -> None:
        self.config = config
        self.clock = clock
        self.metrics = Metrics()
        if config.classifier_hook:
            self.classifier: KeywordClassifier | HookClassifier = (
                HookClassifier.from_command_line(
                    config.classifier_hook,
                    config.classifier_threshold,
                    config.classifier_hook_timeout_ms,
                )
            )
        else:
            self.classifier = KeywordClassifier(
                config.classifier_keywords, config.classifier_threshold
            )
        self.store = self._initial_store()
        self.active_sessions = 0
        self.peak_sessions = 0
        self._smtp_server: asyncio.base_events.Server | None = None
        self._admin_server: asyncio.base_events.Server | None = None
        self._snapshot_task: asyncio.Task | None = None
        self._session_tasks: set[asyncio.Task] = set()
        self._admin_tasks: set[asyncio.Task] = set()

    def _initial_store(self) -> BlacklistStore:
        path = self.config.snapshot_path
        if path and os.path.exists(path):
            with open(path, "rb") as f:
                data = f.read()
            store = BlacklistStore.from_snapshot(
                data,
                self.now(),
                ttl_policy=self.config.ttl_policy,
                max_entries=self.config.max_entries,
            )
            log.info("loaded %d live blacklist entries from %s", len(store), path)
            return store
        return BlacklistStore(
            ttl_policy=self.config.ttl_policy, max_entries=self.config.max_entries
        )

    def now(self) -> int:
        return int(self.clock())

    async def start(self) -> None:
        host, port = self.config.listen_host_port
        self._smtp_server = await asyncio.start_server(self._on_smtp, host, port)
        admin_host, admin_port = self.config.admin_host_port
        self._admin_server = await asyncio.start_server(self._on_admin, admin_host, admin_port)
        if self.config.snapshot_path:
            self._snapshot_task = asyncio.create_task(self._snapshot_loop())
        log.info(
            "listening smtp=%s:%d admin=%s:%d abl_enabled=%s",
            *self.smtp_address,
            *self.admin_address,
            self.config.abl_enabled,
        )

    @property
    def smtp_address(self) -> tuple[str, int]:
        assert self._smtp_server is not None and self._smtp_server.sockets
        return self._smtp_server.sockets[0].getsockname()[:2]

    @property
    def admin_address(self) -> tuple[str, int]:
        assert self._admin_server is not None and self._admin_server.sockets
        return self._admin_server.sockets[0].getsockname()[:2]

    async def stop(self, drain_timeout: float = 10.0) -> None:
        """Graceful shutdown: stop accepting, drain, final snapshot."""
        for srv in (self._smtp_server, self._admin_server):
            if srv is not None:
                srv.close()
                await srv.wait_closed()
        if self._snapshot_task is not None:
            self._snapshot_task.cancel()
            try:
                await self._snapshot_task
            except asyncio.CancelledError:
                pass
        if self._session_tasks:
            _, pending = await asyncio.wait(self._session_tasks, timeout=drain_timeout)
            for task in pending:
                task.cancel()
            if pending:
                await asyncio.gather(*pending, return_exceptions=True)
        for task in list(self._admin_tasks):
            task.cancel()
        if self._admin_tasks:
            await asyncio.gather(*self._admin_tasks, return_exceptions=True)
        if self.config.snapshot_path:
            try:
                self.write_snapshot()
            except OSError as exc:
                log.error("final snapshot failed: %s", exc)

    def write_snapshot(self) -> str:
        """Atomic write: temp file in the same directory, then rename."""
        path = self.config.snapshot_path
        if not path:
            raise ValueError("snapshot path not configured")
        data = self.store.persist()
        tmp = f"{path}.tmp.{os.getpid()}"
        with open(tmp, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
        return path

    async def _snapshot_loop(self) -> None:
        while True:
            await asyncio.sleep(self.config.snapshot_interval_s)
            try:
                self.write_snapshot()
            except OSError as exc:
                log.error("periodic snapshot failed: %s", exc)

    async def classify(self, envelope, body: bytes) -> SpamVerdict:
        if isinstance(self.classifier, HookClassifier):
            loop = asyncio.get_running_loop()
            return await loop.run_in_executor(None, self.classifier.classify, envelope, body)
        return self.classifier.classify(envelope, body)

    async def _on_smtp(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        task = asyncio.current_task()
        assert task is not None
        self._session_tasks.add(task)
        try:
            await _SmtpConnection(self, reader, writer).run()
        except asyncio.CancelledError:
            raise
        except Exception:
            log.exception("smtp connection handler crashed")
        finally:
            self._session_tasks.discard(task)

    async def _on_admin(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        task = asyncio.current_task()
        assert task is not None
        self._admin_tasks.add(task)
        try:
            await self._admin_session(reader, writer)
        except asyncio.CancelledError:
            raise
        except Exception:
            log.exception("admin connection handler crashed")
        finally:
            self._admin_tasks.discard(task)
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionError, OSError):
                pass

    async def _admin_session(
        self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter
    ) -> None:
        while True:
            try:
                raw = await reader.readline()
            except (ValueError, ConnectionError, OSError):
                return
            if not raw:
                return
            response, close = self._admin_dispatch(raw.decode("utf-8", "replace").strip())
            try:
                writer.write(response)
                await writer.drain()
            except (ConnectionError, OSError):
                return
            if close:
                return

    def _admin_dispatch(self, line: str) -> tuple[bytes, bool]:
        """One admin command in, (response bytes, close?) out.

        Responses are zero or more data lines followed by exactly one
        "OK" or "ERR <message>" line, all LF-terminated.
        """
        parts = line.split()
        verb = parts[0].upper() if parts else ""
        try:
            if verb == "STATS" and len(parts) == 1:
                stats = [f"{k}={v}" for k, v in self.metrics.as_dict().items()]
                return _ok_block(stats), False
            if verb == "BL" and len(parts) >= 2:
                sub = parts[1].upper()
                if sub == "LIST" and len(parts) == 2:
                    return _ok_block([format_entry(e) for e in self.store.entries()]), False
                if sub == "ADD" and len(parts) >= 4:
                    identity = _admin_identity(parts[2], parts[3])
                    reason = " ".join(parts[4:]) or "manual"
                    self.store.record_spam(identity, reason, self.now())
                    return b"OK\n", False
                if sub == "DEL" and len(parts) == 4:
                    if self.store.remove(_admin_identity(parts[2], parts[3])):
                        return b"OK\n", False
                    return b"ERR no such entry\n", False
            if verb == "EXPIRE" and len(parts) == 1:
                removed = self.store.expire(self.now())
                return _ok_block([f"removed={removed}"]), False
            if verb == "SNAPSHOT" and len(parts) == 1:
                self.write_snapshot()
                return b"OK\n", False
            if verb == "QUIT" and len(parts) == 1:
                return b"OK\n", True
            return b"ERR unknown or malformed command\n", False
        except (ValueError, OSError) as exc:
            return f"ERR {exc}\n".encode("utf-8"), False


def _admin_identity(ip: str, sender: str) -> SenderIdentity:
    return SenderIdentity.normalized(ip, None if sender == "-" else sender)


def _ok_block(lines: list[str]) -> bytes:
    return "".join(f"{ln}\n" for ln in [*lines, "OK"]).encode("utf-8")


class _SmtpConnection:
    """State for one client connection: buffers, counters, outcome."""

    def __init__(
        self,
        server: MtaServer,
        reader: asyncio.StreamReader,
        writer: asyncio.StreamWriter,
    ) -> None:
        self.server = server
        self.reader = reader
        self.writer = writer
        self.buf = bytearray()
        self.bytes_in = 0
        self.bytes_out = 0
        self.outcome = "accepted"
        self._bucket_counted = False
        peer = writer.get_extra_info("peername") or ("?", 0)
        self.peer_host = str(peer[0])
        self.peer_port = int(peer[1]) if len(peer) > 1 else 0
        try:
            self.client_ip = str(ipaddress.ip_address(self.peer_host.split("%", 1)[0]))
        except ValueError:
            self.client_ip = self.peer_host

    async def run(self) -> None:
        server = self.server
        server.metrics.connections_total += 1
        if server.active_sessions >= server.config.max_concurrent_sessions:
            self.outcome = "error"
            try:
                await self._send(TOO_MANY_SESSIONS)
            except (ConnectionError, OSError):
                pass
            await self._finish()
            return
        server.active_sessions += 1
        server.peak_sessions = max(server.peak_sessions, server.active_sessions)
        try:
            await self._dialogue()
        except asyncio.TimeoutError:
            self.outcome = "error"
            try:
                await self._send(COMMAND_TIMEOUT)
            except (ConnectionError, OSError):
                pass
        except (_ClientVanished, ConnectionError, OSError):
            self.outcome = "error"
        finally:
            server.active_sessions -= 1
            await self._finish()

    async def _dialogue(self) -> None:
        cfg = self.server.config
        session = SessionState(self.client_ip, cfg.greeting_domain, cfg.max_message_octets)
        verdict = CLEAN
        if cfg.abl_enabled:
            verdict = self.server.store.check(
                SenderIdentity.normalized(self.client_ip), self.server.now()
            )
        if verdict.blacklisted:
            self._note_block("blocked_connect", SenderIdentity.normalized(self.client_ip))
            if cfg.policy.delay_ms:
                await asyncio.sleep(cfg.policy.delay_ms / 1000.0)
        await self._send(session.greet(verdict, cfg.policy))
        if session.phase is Phase.CLOSED:
            await self._grace_close()
            return
        while session.phase is not Phase.CLOSED:
            line = await self._read_line(cfg.command_timeout_s)
            if line is None:
                return
            try:
                cmd = parse_command(line)
            except ParseError as exc:
                await self._send(reply_for_parse_error(exc))
                continue
            verdict = CLEAN
            identity: SenderIdentity | None = None
            if (
                cfg.abl_enabled
                and isinstance(cmd, MailFrom)
                and session.phase is Phase.GREETED
            ):
                identity = SenderIdentity.normalized(self.client_ip, cmd.reverse_path)
                verdict = self.server.store.check(identity, self.server.now())
            reply = session.step(cmd, verdict, cfg.policy)
            blocked_now = verdict.blacklisted
            if blocked_now and identity is not None:
                self._note_block("blocked_mail", identity)
                if cfg.policy.delay_ms:
                    await asyncio.sleep(cfg.policy.delay_ms / 1000.0)
            await self._send(reply)
            if session.phase is Phase.RECEIVING_DATA:
                end = await self._receive_data(session, cfg.command_timeout_s)
                await self._deliver(end)
            elif session.phase is Phase.CLOSED and blocked_now:
                await self._grace_close()
                return

    async def _deliver(self, end: DataEnd) -> None:
        cfg = self.server.config
        metrics = self.server.metrics
        metrics.data_octets_received += end.data_octets
        if end.oversized:
            await self._send(TOO_LARGE)
            return
        verdict = await self.server.classify(end.envelope, end.body)
        if verdict.is_spam:
            metrics.messages_classified_spam += 1
            if cfg.abl_enabled:
                sender = end.envelope.reverse_path or ""
                full = SenderIdentity.normalized(self.client_ip, sender)
                now = self.server.now()
                self.server.store.record_spam(full, verdict.reason, now)
                self.server.store.record_spam(full.ip_only(), verdict.reason, now)
            if cfg.reject_triggering_message:
                await self._send(SPAM_REJECTED)
                return
        await self._send(OK)
        metrics.messages_accepted += 1

    async def _receive_data(self, session: SessionState, timeout: float) -> DataEnd:
        while True:
            if self.buf:
                consumed, end = session.feed_data(self.buf)
                del self.buf[:consumed]
                if end is not None:
                    return end
            if not await self._fill(timeout):
                raise _ClientVanished("connection lost inside DATA")

    def _note_block(self, bucket: str, identity: SenderIdentity) -> None:
        metrics = self.server.metrics
        if not self._bucket_counted:
            self._bucket_counted = True
            self.outcome = bucket
            if bucket == "blocked_connect":
                metrics.sessions_blocked_at_connect += 1
            else:
                metrics.sessions_blocked_at_mail += 1
        try:
            self.server.store.record_blocked_attempt(identity, self.server.now())
            metrics.blocked_attempts_refreshed += 1
        except NoLiveEntry:
            pass

    async def _grace_close(self) -> None:
        """Post-block courtesy window: answer a QUIT, then hang up."""
        try:
            line = await self._read_line(BLOCK_GRACE_S)
        except (asyncio.TimeoutError, _ClientVanished):
            return
        if line is None:
            return
        try:
            if isinstance(parse_command(line), Quit):
                await self._send(BYE)
        except ParseError:
            pass

    async def _read_line(self, timeout: float) -> bytes | None:
        while True:
            idx = self.buf.find(b"\n")
            if idx >= 0:
                line = bytes(self.buf[: idx + 1])
                del self.buf[: idx + 1]
                return line
            if len(self.buf) > _MAX_LINE_BUFFER:
                raise _ClientVanished("unterminated command line overflowed the buffer")
            if not await self._fill(timeout):
                return None

    async def _fill(self, timeout: float) -> bool:
        chunk = await asyncio.wait_for(self.reader.read(_READ_CHUNK), timeout)
        if not chunk:
            return False
        self.bytes_in += len(chunk)
        self.server.metrics.bytes_in += len(chunk)
        self.buf += chunk
        return True

    async def _send(self, reply: Reply) -> None:
        data = render_reply(reply)
        self.writer.write(data)
        await self.writer.drain()
        self.bytes_out += len(data)
        self.server.metrics.bytes_out += len(data)

    async def _finish(self) -> None:
        try:
            self.writer.close()
            await self.writer.wait_closed()
        except (ConnectionError, OSError):
            pass
        log.info(
            "session peer=%s:%d outcome=%s bytes_in=%d bytes_out=%d",
            self.peer_host,
            self.peer_port,
            self.outcome,
            self.bytes_in,
            self.bytes_out,
        )


async def run_server(config: ServerConfig) -> None:
    """Start, serve until SIGTERM/SIGINT, then shut down gracefully."""
    import signal

    server = MtaServer(config)
    await server.start()
    stop = asyncio.Event()
    loop = asyncio.get_running_loop()
    for sig in (signal.SIGTERM, signal.SIGINT):
        loop.add_signal_handler(sig, stop.set)
    try:
        await stop.wait()
    finally:
        for sig in (signal.SIGTERM, signal.SIGINT):
            loop.remove_signal_handler(sig)
        await server.stop()
