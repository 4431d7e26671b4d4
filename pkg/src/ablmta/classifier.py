"""Message classification: keyword scoring, or an external hook command.

Classifiers are deliberately dumb; the interesting behavior in this
package is what the server does with a spam verdict, not how the verdict
is reached. Both classifiers share one contract: classify(envelope,
body) returns a SpamVerdict and never raises for message content.
"""
from __future__ import annotations

import logging
import shlex
import subprocess
from dataclasses import dataclass
from typing import TYPE_CHECKING, Protocol

from . import kernels

if TYPE_CHECKING:
    from .session import Envelope

log = logging.getLogger("ablmta.classifier")


class HookFailure(Exception):
    """The external hook misbehaved: bad exit, bad output, or timeout."""


@dataclass(frozen=True)
class SpamVerdict:
    score: float
    is_spam: bool
    #: For spam verdicts, what triggered: matched keywords or hook score.
    reason: str


class Classifier(Protocol):
    def classify(self, envelope: "Envelope | None", body: bytes) -> SpamVerdict: ...


@dataclass(frozen=True)
class KeywordClassifier:
    """Weighted, case-insensitive keyword counting over the raw body.

    score = sum(weight * occurrences) over all keywords, counting
    non-overlapping matches left to right; spam when score >= threshold.
    Weights must be non-negative so the score can never sink below the
    threshold by adding more text.
    """

    keywords: tuple[tuple[str, float], ...]
    threshold: float

    def __post_init__(self) -> None:
        for word, weight in self.keywords:
            if not word:
                raise ValueError("empty keyword")
            if weight < 0 or weight != weight:
                raise ValueError(f"keyword {word!r} has negative or NaN weight")

    def classify(self, envelope: "Envelope | None", body: bytes) -> SpamVerdict:
        score = 0.0
        matched = []
        for word, weight in self.keywords:
            hits = kernels.count_ci(body, word.encode("utf-8"))
            if hits:
                score += weight * hits
                matched.append(word)
        if score >= self.threshold:
            return SpamVerdict(score, True, "keywords:" + ",".join(matched))
        return SpamVerdict(score, False, "")


@dataclass(frozen=True)
class HookClassifier:
    """Run an external command; body on stdin, one "score=<decimal>" line out.

    Hook failures fail open: the message is treated as not spam, because
    a broken local script must not bounce the world's mail.
    """

    command: tuple[str, ...]
    threshold: float
    timeout_ms: int = 10000

    @classmethod
    def from_command_line(
        cls, command_line: str, threshold: float, timeout_ms: int = 10000
    ) -> HookClassifier:
        argv = tuple(shlex.split(command_line))
        if not argv:
            raise ValueError("empty hook command")
        return cls(argv, threshold, timeout_ms)

    def classify(self, envelope: "Envelope | None", body: bytes) -> SpamVerdict:
        try:
            score = self.run_hook(body)
        except HookFailure as exc:
            log.warning("classifier hook failed open: %s", exc)
            return SpamVerdict(0.0, False, f"hook failed: {exc}")
        return SpamVerdict(score, score >= self.threshold, f"hook score={score:g}")

    def run_hook(self, body: bytes) -> float:
        """Invoke the hook once; raises HookFailure on any misbehavior."""
        try:
            proc = subprocess.run(
                self.command,
                input=body,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                timeout=self.timeout_ms / 1000.0,
            )
        except subprocess.TimeoutExpired:
            raise HookFailure(f"timed out after {self.timeout_ms} ms") from None
        except OSError as exc:
            raise HookFailure(f"could not run {self.command[0]}: {exc}") from None
        if proc.returncode != 0:
            raise HookFailure(f"exit status {proc.returncode}")
        first = proc.stdout.splitlines()[0].strip() if proc.stdout.splitlines() else b""
        if not first.startswith(b"score="):
            raise HookFailure(f"expected score=<decimal>, got {first[:40]!r}")
        try:
            return float(first[len(b"score=") :])
        except ValueError:
            raise HookFailure(f"unparsable score in {first[:40]!r}") from None
