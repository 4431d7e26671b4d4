"""SMTP wire grammar: command parsing and reply rendering.

Everything in this module is a pure function over octets or a frozen
value type. The dialogue rules live in session.py; the transport in
server.py.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

CRLF = b"\r\n"

#: Maximum command line length in octets, CRLF included.
MAX_COMMAND_LINE = 512

#: Verbs that are recognized but deliberately not implemented (502),
#: as opposed to verbs this server has never heard of (500).
UNIMPLEMENTED_VERBS = frozenset({"VRFY", "EXPN", "AUTH", "STARTTLS"})

_KNOWN_VERBS = frozenset({"HELO", "EHLO", "MAIL", "RCPT", "DATA", "RSET", "NOOP", "QUIT"})

_MAILBOX_RE = re.compile(r"^[^\s<>@]+@[^\s<>@]+$")
_PATH_RE = re.compile(r"^(FROM|TO)\s*:\s*<([^<>]*)>\s*(.*)$", re.IGNORECASE | re.DOTALL)
_REPLY_LINE_RE = re.compile(r"^(\d{3})([ -])(.*)$", re.DOTALL)
_ENHANCED_RE = re.compile(r"^[245]\.\d{1,3}\.\d{1,3}$")


class ParseErrorKind(Enum):
    LINE_TOO_LONG = "line_too_long"
    BAD_SYNTAX = "bad_syntax"
    MISSING_CRLF = "missing_crlf"


class ParseError(ValueError):
    """A command or reply line that does not fit the grammar."""

    def __init__(self, kind: ParseErrorKind, message: str) -> None:
        super().__init__(message)
        self.kind = kind


class Command:
    """Base class for parsed commands."""

    __slots__ = ()


@dataclass(frozen=True)
class Helo(Command):
    domain: str


@dataclass(frozen=True)
class Ehlo(Command):
    domain: str


@dataclass(frozen=True)
class MailFrom(Command):
    #: Normalized reverse path; "" is the null sender <>.
    reverse_path: str
    #: Octet length of the original command line, for traffic accounting.
    raw_line_length: int = field(default=0, compare=False)


@dataclass(frozen=True)
class RcptTo(Command):
    forward_path: str


@dataclass(frozen=True)
class Data(Command):
    pass


@dataclass(frozen=True)
class Rset(Command):
    pass


@dataclass(frozen=True)
class Noop(Command):
    pass


@dataclass(frozen=True)
class Quit(Command):
    pass


@dataclass(frozen=True)
class Unknown(Command):
    #: The verb exactly as the client sent it.
    verb: str


def normalize_mailbox(text: str) -> str:
    """Canonical mailbox form: brackets and spaces stripped, domain lowercased.

    Idempotent; the local part keeps its case. The empty string (the null
    sender) normalizes to itself.
    """
    s = text.strip()
    while len(s) >= 2 and s.startswith("<") and s.endswith(">"):
        s = s[1:-1].strip()
    if not s:
        return ""
    local, sep, domain = s.rpartition("@")
    if sep:
        s = local + "@" + domain.lower()
    return s


def _parse_path(rest: str, keyword: str, line: str) -> str:
    m = _PATH_RE.match(rest)
    if m is None or m.group(1).upper() != keyword:
        raise ParseError(
            ParseErrorKind.BAD_SYNTAX,
            f"expected {keyword}:<address>, got {rest!r}",
        )
    # Anything after the closing bracket is an extension parameter list;
    # accepted and ignored.
    return m.group(2).strip()


def _require_mailbox(path: str) -> str:
    if not _MAILBOX_RE.match(path):
        raise ParseError(ParseErrorKind.BAD_SYNTAX, f"malformed mailbox {path!r}")
    return normalize_mailbox(path)


def parse_command(line: bytes) -> Command:
    """Parse one CRLF-terminated command line.

    Raises ParseError for oversized lines, missing CRLF, or malformed
    arguments. Unrecognized verbs are not an error; they parse to
    Unknown so the session can answer 500/502.
    """
    if len(line) > MAX_COMMAND_LINE:
        raise ParseError(
            ParseErrorKind.LINE_TOO_LONG,
            f"command line of {len(line)} octets exceeds {MAX_COMMAND_LINE}",
        )
    if not line.endswith(CRLF):
        raise ParseError(ParseErrorKind.MISSING_CRLF, "command line must end with CRLF")
    text = line[:-2].decode("latin-1").strip()
    if not text:
        return Unknown("")
    parts = text.split(None, 1)
    verb = parts[0]
    rest = parts[1] if len(parts) == 2 else ""
    upper = verb.upper()
    if upper not in _KNOWN_VERBS:
        return Unknown(verb)
    if upper in ("HELO", "EHLO"):
        domain = rest.strip()
        if not domain or len(domain.split()) != 1:
            raise ParseError(ParseErrorKind.BAD_SYNTAX, f"{upper} requires one domain argument")
        return Helo(domain) if upper == "HELO" else Ehlo(domain)
    if upper == "MAIL":
        path = _parse_path(rest, "FROM", text)
        if path == "":
            return MailFrom("", raw_line_length=len(line))
        return MailFrom(_require_mailbox(path), raw_line_length=len(line))
    if upper == "RCPT":
        path = _parse_path(rest, "TO", text)
        if path == "":
            raise ParseError(ParseErrorKind.BAD_SYNTAX, "RCPT TO requires a non-empty address")
        return RcptTo(_require_mailbox(path))
    if rest.strip() and upper in ("DATA", "RSET", "QUIT"):
        raise ParseError(ParseErrorKind.BAD_SYNTAX, f"{upper} takes no arguments")
    return {"DATA": Data, "RSET": Rset, "NOOP": Noop, "QUIT": Quit}[upper]()


@dataclass(frozen=True)
class Reply:
    """A server reply: code, optional enhanced status code, text lines.

    Multi-line replies render with the usual hyphen continuation; the
    enhanced status, when present, is inserted after the code on every
    line and must agree with the code's class digit.
    """

    code: int
    enhanced_status: str | None
    lines: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "lines", tuple(self.lines))
        if not 200 <= self.code <= 599:
            raise ValueError(f"reply code {self.code} out of range")
        if not self.lines:
            raise ValueError("reply needs at least one text line")
        if self.enhanced_status is not None:
            if not _ENHANCED_RE.match(self.enhanced_status):
                raise ValueError(f"malformed enhanced status {self.enhanced_status!r}")
            if self.enhanced_status[0] != str(self.code)[0]:
                raise ValueError("enhanced status class must match the reply code")


def render_reply(reply: Reply) -> bytes:
    prefix = f"{reply.enhanced_status} " if reply.enhanced_status else ""
    last = len(reply.lines) - 1
    rendered = []
    for idx, text in enumerate(reply.lines):
        sep = " " if idx == last else "-"
        rendered.append(f"{reply.code}{sep}{prefix}{text}\r\n")
    return "".join(rendered).encode("latin-1")


def parse_reply(data: bytes) -> Reply:
    """Inverse of render_reply; used by simulator clients and test oracles."""
    if not data.endswith(CRLF):
        raise ParseError(ParseErrorKind.MISSING_CRLF, "reply must end with CRLF")
    raw_lines = data[:-2].split(CRLF)
    code: int | None = None
    texts: list[str] = []
    for idx, raw in enumerate(raw_lines):
        m = _REPLY_LINE_RE.match(raw.decode("latin-1"))
        if m is None:
            raise ParseError(ParseErrorKind.BAD_SYNTAX, f"malformed reply line {raw!r}")
        line_code = int(m.group(1))
        if code is None:
            code = line_code
        elif line_code != code:
            raise ParseError(ParseErrorKind.BAD_SYNTAX, "reply codes differ between lines")
        is_last = idx == len(raw_lines) - 1
        if (m.group(2) == " ") != is_last:
            raise ParseError(ParseErrorKind.BAD_SYNTAX, "continuation marker in the wrong place")
        texts.append(m.group(3))
    assert code is not None
    enhanced = _extract_enhanced(code, texts)
    if enhanced is not None:
        texts = [t[len(enhanced) + 1 :] for t in texts]
    return Reply(code, enhanced, tuple(texts))


def _extract_enhanced(code: int, texts: list[str]) -> str | None:
    head = texts[0].split(" ", 1)[0]
    if not _ENHANCED_RE.match(head) or head[0] != str(code)[0]:
        return None
    if all(t.startswith(head + " ") for t in texts):
        return head
    return None
