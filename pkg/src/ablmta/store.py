"""The active blacklist: spammer identities with growing, refreshed TTLs.

Identities are an IP address plus an optional normalized sender mailbox.
An entry recorded for the bare IP also blocks every sender behind that
IP (the IP projection); a full-identity entry matches only that exact
pair. Every blocked attempt refreshes the matched entry, so a spammer
that keeps knocking keeps itself blacklisted.

The snapshot format is line-oriented and versioned:

    ABLv1
    ip<TAB>sender-or--<TAB>first_seen<TAB>last_hit<TAB>hit_count<TAB>expiry<TAB>reason

with integer epoch seconds and "-" standing for an absent sender.
"""
from __future__ import annotations

import ipaddress
import math
import threading
from dataclasses import dataclass, replace
from fractions import Fraction

from .protocol import normalize_mailbox

_Key = tuple[str, "str | None"]


class FormatError(ValueError):
    """A snapshot that cannot be parsed; carries the offending line number."""

    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnsupportedVersion(FormatError):
    """A snapshot whose header names a version this code does not speak."""


class NoLiveEntry(LookupError):
    """record_blocked_attempt() found nothing live to refresh."""


@dataclass(frozen=True)
class SenderIdentity:
    """Who is being judged: client IP, optionally plus envelope sender.

    ``sender=None`` is the IP projection; ``sender=""`` is the null
    sender <>, a distinct, real identity.
    """

    ip: str
    sender: str | None = None

    @classmethod
    def normalized(cls, ip: str, sender: str | None = None) -> SenderIdentity:
        canonical_ip = str(ipaddress.ip_address(ip.split("%", 1)[0]))
        if sender is None:
            return cls(canonical_ip, None)
        return cls(canonical_ip, normalize_mailbox(sender))

    def ip_only(self) -> SenderIdentity:
        return SenderIdentity(self.ip, None)

    @property
    def key(self) -> _Key:
        return (self.ip, self.sender)


@dataclass(frozen=True)
class TtlPolicy:
    """Geometric TTL growth: min(floor(base * growth**(hits-1)), max).

    ``growth`` is kept as an exact Fraction so entries near the cap land
    on exactly the right second regardless of how many hits piled up.
    """

    base_ttl_s: int = 3600
    growth: Fraction = Fraction(2)
    max_ttl_s: int = 86400

    def __post_init__(self) -> None:
        if not isinstance(self.growth, Fraction):
            object.__setattr__(self, "growth", Fraction(str(self.growth)))
        if self.base_ttl_s < 1:
            raise ValueError("base_ttl_s must be >= 1")
        if self.growth < 1:
            raise ValueError("growth must be >= 1")
        if self.max_ttl_s < self.base_ttl_s:
            raise ValueError("max_ttl_s must be >= base_ttl_s")

    def ttl(self, hits: int) -> int:
        """Lifetime in whole seconds after the given hit count (hits >= 1)."""
        if hits < 1:
            raise ValueError("hits must be >= 1")
        if hits == 1 or self.growth == 1:
            return min(self.base_ttl_s, self.max_ttl_s)
        # Cheap logarithm screen so a million hits never computes a
        # million-digit power; exact arithmetic decides anything close.
        bound = (hits - 1) * math.log(float(self.growth))
        if bound > math.log(4 * self.max_ttl_s / self.base_ttl_s) + 2:
            return self.max_ttl_s
        exact = self.base_ttl_s * self.growth ** (hits - 1)
        return min(int(exact // 1), self.max_ttl_s)


@dataclass(frozen=True)
class AblEntry:
    identity: SenderIdentity
    first_seen: int
    last_hit: int
    hit_count: int
    expiry: int
    reason: str


@dataclass(frozen=True)
class Verdict:
    """Outcome of a blacklist check; CLEAN is the shared no-match value."""

    entry: AblEntry | None = None

    @property
    def blacklisted(self) -> bool:
        return self.entry is not None


CLEAN = Verdict()

DEFAULT_MAX_ENTRIES = 1_000_000


def _sanitize_reason(reason: str) -> str:
    return reason.replace("\t", " ").replace("\r", " ").replace("\n", " ")


def format_entry(entry: AblEntry) -> str:
    """One snapshot/listing line, without the newline."""
    sender = "-" if entry.identity.sender is None else entry.identity.sender
    return "\t".join(
        (
            entry.identity.ip,
            sender,
            str(entry.first_seen),
            str(entry.last_hit),
            str(entry.hit_count),
            str(entry.expiry),
            entry.reason,
        )
    )


def _entry_order(entry: AblEntry) -> tuple[str, bool, str]:
    # IP-projection rows sort ahead of sender rows for the same IP.
    return (entry.identity.ip, entry.identity.sender is not None, entry.identity.sender or "")


class BlacklistStore:
    """In-memory blacklist with snapshot persistence.

    All mutating operations take ``now`` (integer epoch seconds) from the
    caller, which keeps every TTL decision testable. Methods are
    lock-protected; entries are immutable and replaced wholesale, so a
    reader never observes a half-refreshed entry.
    """

    def __init__(
        self,
        ttl_policy: TtlPolicy | None = None,
        max_entries: int = DEFAULT_MAX_ENTRIES,
    ) -> None:
        if max_entries < 1:
            raise ValueError("max_entries must be >= 1")
        self.ttl_policy = ttl_policy or TtlPolicy()
        self.max_entries = max_entries
        self._entries: dict[_Key, AblEntry] = {}
        self._lock = threading.RLock()

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def check(self, identity: SenderIdentity, now: int) -> Verdict:
        """Full-identity match first, then the IP projection; else CLEAN.

        An entry is live strictly before its expiry instant: a check at
        ``now == expiry`` is already clean.
        """
        with self._lock:
            entry = self._match_live(identity, now)
        return Verdict(entry) if entry is not None else CLEAN

    def _match_live(self, identity: SenderIdentity, now: int) -> AblEntry | None:
        entry = self._entries.get(identity.key)
        if entry is not None and entry.expiry > now:
            return entry
        if identity.sender is not None:
            entry = self._entries.get((identity.ip, None))
            if entry is not None and entry.expiry > now:
                return entry
        return None

    def record_spam(self, identity: SenderIdentity, reason: str, now: int) -> AblEntry:
        """Insert or refresh the entry for exactly this identity."""
        with self._lock:
            existing = self._entries.get(identity.key)
            if existing is not None and existing.expiry > now:
                return self._refresh(existing, now)
            if existing is None and len(self._entries) >= self.max_entries:
                self._evict_one()
            entry = AblEntry(
                identity=identity,
                first_seen=now,
                last_hit=now,
                hit_count=1,
                expiry=now + self.ttl_policy.ttl(1),
                reason=_sanitize_reason(reason),
            )
            self._entries[identity.key] = entry
            return entry

    def record_blocked_attempt(self, identity: SenderIdentity, now: int) -> AblEntry:
        """Refresh whichever live entry just blocked this identity.

        Raises NoLiveEntry when nothing matches (the entry expired between
        check and refresh, or the caller never checked).
        """
        with self._lock:
            entry = self._match_live(identity, now)
            if entry is None:
                raise NoLiveEntry(identity)
            return self._refresh(entry, now)

    def _refresh(self, entry: AblEntry, now: int) -> AblEntry:
        hits = entry.hit_count + 1
        refreshed = replace(
            entry,
            hit_count=hits,
            last_hit=now,
            expiry=now + self.ttl_policy.ttl(hits),
        )
        self._entries[refreshed.identity.key] = refreshed
        return refreshed

    def _evict_one(self) -> None:
        victim = min(self._entries.values(), key=lambda e: (e.expiry, _entry_order(e)))
        del self._entries[victim.identity.key]

    def remove(self, identity: SenderIdentity) -> bool:
        """Drop the entry for exactly this identity; True if one existed."""
        with self._lock:
            return self._entries.pop(identity.key, None) is not None

    def expire(self, now: int) -> int:
        """Sweep entries whose expiry has passed; returns how many left."""
        with self._lock:
            dead = [k for k, e in self._entries.items() if e.expiry <= now]
            for k in dead:
                del self._entries[k]
            return len(dead)

    def entries(self) -> list[AblEntry]:
        """A consistent, deterministically ordered view."""
        with self._lock:
            return sorted(self._entries.values(), key=_entry_order)

    def persist(self) -> bytes:
        lines = ["ABLv1"]
        lines.extend(format_entry(e) for e in self.entries())
        return ("\n".join(lines) + "\n").encode("utf-8")

    @classmethod
    def from_snapshot(
        cls,
        data: bytes,
        now: int,
        ttl_policy: TtlPolicy | None = None,
        max_entries: int = DEFAULT_MAX_ENTRIES,
    ) -> BlacklistStore:
        """Load a snapshot, dropping entries that are already expired.

        Raises UnsupportedVersion for an unknown header and FormatError
        (with a line number) for anything structurally wrong.
        """
        store = cls(ttl_policy=ttl_policy, max_entries=max_entries)
        raw_lines = data.split(b"\n")
        if not raw_lines or raw_lines[0] != b"ABLv1":
            head = raw_lines[0][:40] if raw_lines else b""
            raise UnsupportedVersion(1, f"unsupported snapshot header {head!r}")
        for lineno, raw in enumerate(raw_lines[1:], start=2):
            if raw == b"":
                # Only the trailing newline may produce an empty piece.
                if lineno != len(raw_lines):
                    raise FormatError(lineno, "blank line inside snapshot")
                continue
            entry = _parse_entry_line(raw, lineno)
            if entry.expiry > now:
                store._entries[entry.identity.key] = entry
        while len(store._entries) > store.max_entries:
            store._evict_one()
        return store


def _parse_entry_line(raw: bytes, lineno: int) -> AblEntry:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(lineno, f"not valid UTF-8: {exc}") from None
    fields = text.split("\t", 6)
    if len(fields) != 7:
        raise FormatError(lineno, f"expected 7 tab-separated fields, got {len(fields)}")
    ip_text, sender_text, first_seen, last_hit, hit_count, expiry, reason = fields
    try:
        identity = SenderIdentity.normalized(ip_text, None if sender_text == "-" else sender_text)
    except ValueError as exc:
        raise FormatError(lineno, f"bad IP address {ip_text!r}: {exc}") from None
    try:
        numbers = [int(first_seen), int(last_hit), int(hit_count), int(expiry)]
    except ValueError:
        raise FormatError(lineno, "timestamps and hit count must be integers") from None
    if any(n < 0 for n in numbers):
        raise FormatError(lineno, "negative timestamp or hit count")
    if numbers[2] < 1:
        raise FormatError(lineno, "hit count must be >= 1")
    return AblEntry(
        identity=identity,
        first_seen=numbers[0],
        last_hit=numbers[1],
        hit_count=numbers[2],
        expiry=numbers[3],
        reason=reason,
    )
