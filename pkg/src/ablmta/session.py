"""The blacklist-aware SMTP dialogue, transport-free.

A session consumes parsed commands plus the blacklist verdict for the
identity known at that point, and returns the reply to send. The
blacklist is consulted at exactly two checkpoints:

  * connection time (greet), where only the client IP is known, and
  * MAIL FROM (step), where the full (ip, sender) identity exists.

Everything else is conventional SMTP. The server owns sockets, timing,
and the store; this module owns what gets said.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from . import kernels
from .protocol import (
    Command,
    Data,
    Ehlo,
    Helo,
    MailFrom,
    Noop,
    ParseError,
    ParseErrorKind,
    Quit,
    RcptTo,
    Reply,
    Rset,
    Unknown,
    UNIMPLEMENTED_VERBS,
)
from .store import Verdict

DEFAULT_MAX_MESSAGE_OCTETS = 10 * 1024 * 1024

#: After a session-closing policy reply, how long the server waits for
#: the client's QUIT before dropping the connection.
BLOCK_GRACE_S = 5.0


class Phase(Enum):
    CONNECTED = "connected"
    GREETED = "greeted"
    MAIL_ACCEPTED = "mail_accepted"
    RCPT_ACCEPTED = "rcpt_accepted"
    RECEIVING_DATA = "receiving_data"
    CLOSED = "closed"


class PolicyMode(Enum):
    REJECT_EARLY_554 = "reject_early_554"
    TEMP_FAIL_451 = "temp_fail_451"
    TARPIT = "tarpit"


@dataclass(frozen=True)
class RejectPolicy:
    """How a blacklisted identity is answered at a checkpoint.

    reject_early_554 refuses permanently and ends the session;
    temp_fail_451 defers and leaves the connection open; tarpit defers
    too, but only after the configured delay (enforced by the server,
    which owns time).
    """

    mode: PolicyMode = PolicyMode.REJECT_EARLY_554
    tarpit_delay_ms: int = 10000

    @classmethod
    def parse(cls, mode_text: str, tarpit_delay_ms: int = 10000) -> RejectPolicy:
        try:
            mode = PolicyMode(mode_text.strip().lower())
        except ValueError:
            choices = ", ".join(m.value for m in PolicyMode)
            raise ValueError(f"unknown policy {mode_text!r}, expected one of: {choices}") from None
        return cls(mode, tarpit_delay_ms)

    @property
    def closes_session(self) -> bool:
        return self.mode is PolicyMode.REJECT_EARLY_554

    @property
    def delay_ms(self) -> int:
        return self.tarpit_delay_ms if self.mode is PolicyMode.TARPIT else 0

    def reply(self) -> Reply:
        if self.mode is PolicyMode.REJECT_EARLY_554:
            return Reply(554, "5.7.1", ("Sender blacklisted",))
        return Reply(451, "4.7.1", ("Temporarily deferred, try again later",))


@dataclass
class Envelope:
    """Per-message state accumulated across the dialogue."""

    client_ip: str
    helo_domain: str = ""
    #: None before MAIL FROM; "" is the null sender <>.
    reverse_path: str | None = None
    forward_paths: list[str] = field(default_factory=list)
    data_octets: int = 0


@dataclass(frozen=True)
class DataEnd:
    """Produced when the end-of-data terminator has been consumed."""

    body: bytes
    data_octets: int
    oversized: bool
    #: Snapshot of the envelope the message was received under.
    envelope: Envelope


def banner(domain: str) -> Reply:
    return Reply(220, None, (f"{domain} ESMTP",))


def helo_reply(domain: str) -> Reply:
    return Reply(250, None, (domain,))


def ehlo_reply(domain: str, max_message_octets: int) -> Reply:
    return Reply(250, None, (domain, "PIPELINING", f"SIZE {max_message_octets}"))


OK = Reply(250, None, ("OK",))
START_DATA = Reply(354, None, ("End data with <CRLF>.<CRLF>",))
BYE = Reply(221, None, ("Bye",))
BAD_SEQUENCE = Reply(503, None, ("Bad sequence of commands",))
UNRECOGNIZED = Reply(500, None, ("Unrecognized command",))
NOT_IMPLEMENTED = Reply(502, None, ("Command not implemented",))
REPLY_LINE_TOO_LONG = Reply(500, None, ("Line too long",))
REPLY_MISSING_CRLF = Reply(500, None, ("Line must end with CRLF",))
SYNTAX_ERROR = Reply(501, None, ("Syntax error in parameters or arguments",))
TOO_LARGE = Reply(552, "5.3.4", ("Message exceeds maximum size",))
SPAM_REJECTED = Reply(554, "5.7.1", ("Message rejected as spam",))
TOO_MANY_SESSIONS = Reply(421, None, ("Too many concurrent sessions, try again later",))
COMMAND_TIMEOUT = Reply(421, None, ("Command timeout, closing connection",))


def reply_for_parse_error(err: ParseError) -> Reply:
    if err.kind is ParseErrorKind.LINE_TOO_LONG:
        return REPLY_LINE_TOO_LONG
    if err.kind is ParseErrorKind.MISSING_CRLF:
        return REPLY_MISSING_CRLF
    return SYNTAX_ERROR


class DataScanner:
    """Incremental dot-stuffed body receiver, kernel-backed.

    Oversized bodies keep being scanned (the terminator must still be
    found to resync the dialogue) but storage stops at the limit.
    """

    def __init__(self, max_octets: int) -> None:
        self._state = kernels.LINE_START
        self._body = bytearray()
        self._max = max_octets
        self.total = 0
        self.done = False

    def feed(self, chunk) -> tuple[int, bytes | None, int]:
        """Returns (consumed, body or None, total octets so far)."""
        if self.done:
            raise RuntimeError("feed() after the terminator")
        before = len(self._body)
        self._state, consumed, done = kernels.scan_chunk(self._state, chunk, self._body)
        self.total += len(self._body) - before
        if len(self._body) > self._max:
            del self._body[self._max :]
        if not done:
            return consumed, None, self.total
        self.done = True
        return consumed, bytes(self._body), self.total


class SessionState:
    """One SMTP session's dialogue state.

    Sessions share nothing, so any number may run concurrently. The
    ``blocked`` flag records that the blacklist fired at some checkpoint;
    under a closing policy the phase also moves to CLOSED.
    """

    def __init__(
        self,
        client_ip: str,
        greeting_domain: str,
        max_message_octets: int = DEFAULT_MAX_MESSAGE_OCTETS,
    ) -> None:
        self.phase = Phase.CONNECTED
        self.envelope = Envelope(client_ip=client_ip)
        self.blocked = False
        self.greeting_domain = greeting_domain
        self.max_message_octets = max_message_octets
        self._scanner: DataScanner | None = None

    def greet(self, verdict: Verdict, policy: RejectPolicy) -> Reply:
        """Connection-time checkpoint: banner for clean peers, else the policy reply."""
        if self.phase is not Phase.CONNECTED:
            raise RuntimeError("greet() on a session past CONNECTED")
        if verdict.blacklisted:
            return self._block(policy)
        return banner(self.greeting_domain)

    def step(self, cmd: Command, verdict: Verdict, policy: RejectPolicy) -> Reply:
        """Consume one command; returns the reply, mutating phase and envelope.

        ``verdict`` is the blacklist's answer for the identity visible in
        this command; it only matters for MAIL FROM, the second
        checkpoint. Out-of-order commands get 503 and change nothing.
        """
        if self.phase is Phase.CLOSED:
            raise RuntimeError("step() on a closed session")
        if self.phase is Phase.RECEIVING_DATA:
            # Defensive only: during DATA the transport feeds feed_data().
            return BAD_SEQUENCE
        if isinstance(cmd, Unknown):
            if cmd.verb.upper() in UNIMPLEMENTED_VERBS:
                return NOT_IMPLEMENTED
            return UNRECOGNIZED
        if isinstance(cmd, Noop):
            return OK
        if isinstance(cmd, Quit):
            self.phase = Phase.CLOSED
            return BYE
        if isinstance(cmd, Rset):
            self._reset_mail()
            if self.phase is not Phase.CONNECTED:
                self.phase = Phase.GREETED
            return OK
        if isinstance(cmd, (Helo, Ehlo)):
            if self.phase not in (Phase.CONNECTED, Phase.GREETED):
                return BAD_SEQUENCE
            self.envelope.helo_domain = cmd.domain
            self._reset_mail()
            self.phase = Phase.GREETED
            if isinstance(cmd, Ehlo):
                return ehlo_reply(self.greeting_domain, self.max_message_octets)
            return helo_reply(self.greeting_domain)
        if isinstance(cmd, MailFrom):
            if self.phase is not Phase.GREETED:
                return BAD_SEQUENCE
            if verdict.blacklisted:
                return self._block(policy)
            self._reset_mail()
            self.envelope.reverse_path = cmd.reverse_path
            self.phase = Phase.MAIL_ACCEPTED
            return OK
        if isinstance(cmd, RcptTo):
            if self.phase not in (Phase.MAIL_ACCEPTED, Phase.RCPT_ACCEPTED):
                return BAD_SEQUENCE
            self.envelope.forward_paths.append(cmd.forward_path)
            self.phase = Phase.RCPT_ACCEPTED
            return OK
        if isinstance(cmd, Data):
            if self.phase is not Phase.RCPT_ACCEPTED:
                return BAD_SEQUENCE
            self.phase = Phase.RECEIVING_DATA
            self._scanner = DataScanner(self.max_message_octets)
            return START_DATA
        raise TypeError(f"unhandled command {cmd!r}")

    def feed_data(self, chunk) -> tuple[int, DataEnd | None]:
        """Feed DATA-phase octets.

        Returns (consumed, DataEnd or None). On the terminator, consumed
        may be less than len(chunk); the rest is pipelined input for the
        command loop. The session is back in GREETED with the envelope
        cleared, ready for the next transaction; the DataEnd carries a
        snapshot of the envelope the message arrived under.
        """
        if self.phase is not Phase.RECEIVING_DATA or self._scanner is None:
            raise RuntimeError("feed_data() outside the DATA phase")
        consumed, body, total = self._scanner.feed(chunk)
        self.envelope.data_octets = total
        if body is None:
            return consumed, None
        snapshot = Envelope(
            client_ip=self.envelope.client_ip,
            helo_domain=self.envelope.helo_domain,
            reverse_path=self.envelope.reverse_path,
            forward_paths=list(self.envelope.forward_paths),
            data_octets=total,
        )
        end = DataEnd(
            body=body,
            data_octets=total,
            oversized=total > self.max_message_octets,
            envelope=snapshot,
        )
        self._scanner = None
        self.phase = Phase.GREETED
        self.envelope.reverse_path = None
        self.envelope.forward_paths = []
        return consumed, end

    def _block(self, policy: RejectPolicy) -> Reply:
        self.blocked = True
        if policy.closes_session:
            self.phase = Phase.CLOSED
        return policy.reply()

    def _reset_mail(self) -> None:
        self.envelope.reverse_path = None
        self.envelope.forward_paths = []
        self.envelope.data_octets = 0
