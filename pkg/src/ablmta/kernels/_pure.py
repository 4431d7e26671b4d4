"""Pure-Python implementations of the byte-level hot paths.

``_speedups.pyx`` implements the same contract in C; ``ablmta.kernels``
selects whichever is importable. Both must agree octet for octet, which
the test suite checks by brute force and by property testing.
"""
from __future__ import annotations

# Body scanner states. The scanner walks DATA-phase octets as they
# arrive, strips the dot-stuffing escape, and stops at the
# CRLF "." CRLF terminator. A "line start" exists only at the start of
# the stream or after a CRLF pair; bare LF does not open a line.
LINE_START = 0
IN_LINE = 1
SEEN_CR = 2
SEEN_DOT = 3  # line began with "."; the dot is withheld until classified
SEEN_DOT_CR = 4  # line began with "." CR; terminator if LF follows

_CR = 0x0D
_LF = 0x0A
_DOT = 0x2E


def scan_chunk(state: int, data, out: bytearray) -> tuple[int, int, bool]:
    """Advance the body scanner over one chunk.

    Un-stuffed body octets are appended to ``out``. Returns
    ``(state, consumed, done)``. ``consumed < len(data)`` only when the
    terminator finished inside the chunk; the remaining octets belong to
    whatever the client pipelined after the message.
    """
    i = 0
    n = len(data)
    while i < n:
        b = data[i]
        if state == IN_LINE or (state == LINE_START and b != _DOT):
            # Bulk-copy to the next CR; everything before it stays in-line.
            j = data.find(b"\r", i)
            if j < 0:
                out += data[i:]
                i = n
                state = IN_LINE
            else:
                out += data[i : j + 1]
                i = j + 1
                state = SEEN_CR
        elif state == LINE_START:
            state = SEEN_DOT
            i += 1
        elif state == SEEN_CR:
            out.append(b)
            if b == _LF:
                state = LINE_START
            elif b != _CR:
                state = IN_LINE
            i += 1
        elif state == SEEN_DOT:
            if b == _CR:
                state = SEEN_DOT_CR
            else:
                # Stuffed line: drop the leading dot, keep the rest.
                out.append(b)
                state = IN_LINE
            i += 1
        else:  # SEEN_DOT_CR
            if b == _LF:
                return LINE_START, i + 1, True
            # Not the terminator after all: the dot is still stripped,
            # but its CR was real body content.
            out.append(_CR)
            out.append(b)
            state = SEEN_CR if b == _CR else IN_LINE
            i += 1
    return state, n, False


def count_ci(haystack, needle: bytes) -> int:
    """Count non-overlapping, ASCII-case-insensitive occurrences."""
    if not needle:
        return 0
    return haystack.lower().count(needle.lower())
