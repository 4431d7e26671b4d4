# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled byte-level hot paths; mirrors ``_pure`` octet for octet."""

from cpython.bytes cimport PyBytes_FromStringAndSize
from libc.stdlib cimport free, malloc
from libc.string cimport memchr, memcmp

LINE_START = 0
IN_LINE = 1
SEEN_CR = 2
SEEN_DOT = 3
SEEN_DOT_CR = 4

cdef enum:
    _LS = 0
    _IL = 1
    _CRS = 2
    _DOT = 3
    _DOTCR = 4

cdef enum:
    C_CR = 0x0D
    C_LF = 0x0A
    C_DOT = 0x2E


def scan_chunk(int state, const unsigned char[::1] data, out):
    cdef Py_ssize_t n = data.shape[0]
    cdef Py_ssize_t i = 0
    cdef Py_ssize_t k = 0
    cdef int st = state
    cdef bint done = False
    cdef unsigned char b
    cdef unsigned char* buf
    if n == 0:
        return state, 0, False
    # Emitted octets per chunk never exceed the input plus the pending
    # CR carried over from a dot line split across chunks.
    buf = <unsigned char*> malloc(n + 4)
    if buf == NULL:
        raise MemoryError()
    try:
        while i < n:
            b = data[i]
            if st == _IL or (st == _LS and b != C_DOT):
                while True:
                    buf[k] = b
                    k += 1
                    i += 1
                    if b == C_CR:
                        st = _CRS
                        break
                    if i >= n:
                        st = _IL
                        break
                    b = data[i]
            elif st == _LS:
                st = _DOT
                i += 1
            elif st == _CRS:
                buf[k] = b
                k += 1
                if b == C_LF:
                    st = _LS
                elif b != C_CR:
                    st = _IL
                i += 1
            elif st == _DOT:
                if b == C_CR:
                    st = _DOTCR
                else:
                    buf[k] = b
                    k += 1
                    st = _IL
                i += 1
            else:  # _DOTCR
                if b == C_LF:
                    i += 1
                    done = True
                    st = _LS
                    break
                buf[k] = C_CR
                k += 1
                buf[k] = b
                k += 1
                st = _CRS if b == C_CR else _IL
                i += 1
        if k:
            out += PyBytes_FromStringAndSize(<char*> buf, k)
        return st, i, done
    finally:
        free(buf)


def count_ci(haystack, bytes needle):
    cdef bytes lowered = needle.lower()
    cdef Py_ssize_t m = len(lowered)
    if m == 0:
        return 0
    cdef const unsigned char[::1] h = haystack
    cdef Py_ssize_t n = h.shape[0]
    if n < m:
        return 0
    cdef const unsigned char* nd = lowered
    # Case-fold once, then let memchr/memcmp do the scanning.
    cdef unsigned char* low = <unsigned char*> malloc(n)
    if low == NULL:
        raise MemoryError()
    cdef Py_ssize_t i
    cdef unsigned char c
    cdef Py_ssize_t hits = 0
    cdef const unsigned char* p
    cdef const unsigned char* end
    try:
        for i in range(n):
            c = h[i]
            if 65 <= c <= 90:
                c += 32
            low[i] = c
        p = low
        end = low + n
        while p + m <= end:
            p = <const unsigned char*> memchr(p, nd[0], (end - p) - (m - 1))
            if p == NULL:
                break
            if m == 1 or memcmp(p + 1, nd + 1, m - 1) == 0:
                hits += 1
                p += m
            else:
                p += 1
        return hits
    finally:
        free(low)
