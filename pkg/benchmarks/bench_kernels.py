"""Throughput comparison: pure-Python kernels vs the compiled extension.

Measures the two hot paths a busy receiver leans on: the DATA-phase
scanner (un-stuffing and terminator detection) and the case-insensitive
keyword counter the classifier uses. Run from a checkout:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --payload-mib 64 --chunk 16384
"""
from __future__ import annotations

import argparse
import random
import time

from ablmta.kernels import _pure

try:
    from ablmta.kernels import _speedups
except ImportError:
    _speedups = None


def build_stream(total_octets: int, seed: int) -> bytes:
    """A realistic DATA stream: mostly text lines, some dot-stuffed."""
    rng = random.Random(seed)
    out = bytearray()
    while len(out) < total_octets:
        line = bytes(rng.choice(b"abcdefghijklmnopqrstuvwxyz ") for _ in range(rng.randint(0, 76)))
        if rng.random() < 0.05:
            line = b"." + line  # will be dot-stuffed on the wire
        if line.startswith(b"."):
            out += b"."
        out += line + b"\r\n"
    out += b".\r\n"
    return bytes(out)


def bench_scan(impl, stream: bytes, chunk: int, repeats: int) -> float:
    """Best-of-N throughput in MiB/s for scanning the whole stream."""
    best = float("inf")
    for _ in range(repeats):
        state = impl.LINE_START
        out = bytearray()
        started = time.perf_counter()
        pos = 0
        done = False
        while not done:
            piece = stream[pos : pos + chunk]
            state, consumed, done = impl.scan_chunk(state, piece, out)
            pos += consumed
        best = min(best, time.perf_counter() - started)
        assert done and pos == len(stream)
    return len(stream) / best / (1024 * 1024)


def bench_count(impl, haystack: bytes, needle: bytes, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        started = time.perf_counter()
        impl.count_ci(haystack, needle)
        best = min(best, time.perf_counter() - started)
    return len(haystack) / best / (1024 * 1024)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--payload-mib", type=int, default=16, help="stream size in MiB")
    parser.add_argument("--chunk", type=int, default=4096, help="scanner feed size in octets")
    parser.add_argument("--repeats", type=int, default=3, help="take the best of N runs")
    parser.add_argument("--seed", type=int, default=1, help="stream generator seed")
    args = parser.parse_args()

    stream = build_stream(args.payload_mib * 1024 * 1024, args.seed)
    haystack = stream.replace(b"\r\n", b" ")
    needle = b"offer"

    backends = [("pure", _pure)]
    if _speedups is not None:
        backends.append(("compiled", _speedups))
    else:
        print("note: compiled extension not built; showing pure only")

    print(f"stream: {len(stream)} octets, chunk {args.chunk}, best of {args.repeats}")
    print(f"{'backend':<10} {'scan MiB/s':>12} {'count_ci MiB/s':>16}")
    rates = {}
    for name, impl in backends:
        scan = bench_scan(impl, stream, args.chunk, args.repeats)
        count = bench_count(impl, haystack, needle, args.repeats)
        rates[name] = (scan, count)
        print(f"{name:<10} {scan:>12.1f} {count:>16.1f}")
    if "compiled" in rates:
        scan_x = rates["compiled"][0] / rates["pure"][0]
        count_x = rates["compiled"][1] / rates["pure"][1]
        print(f"speedup:   {scan_x:>11.1f}x {count_x:>15.1f}x")


if __name__ == "__main__":
    main()
