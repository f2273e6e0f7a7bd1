# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled n-gram hashing kernel. Bit-identical twin of ``_nhash_py``."""

cdef unsigned long long FNV_OFFSET = <unsigned long long> 14695981039346656037
cdef unsigned long long FNV_PRIME = <unsigned long long> 1099511628211


cdef unsigned long long _fnv_salted(const unsigned char[::1] data,
                                    Py_ssize_t start, Py_ssize_t n,
                                    unsigned long long salt) noexcept nogil:
    cdef unsigned long long h = FNV_OFFSET
    cdef Py_ssize_t j
    for j in range(8):
        h = (h ^ ((salt >> (8 * j)) & <unsigned long long> 0xFF)) * FNV_PRIME
    for j in range(start, start + n):
        h = (h ^ data[j]) * FNV_PRIME
    return h


cdef unsigned long long _fnv_empty(unsigned long long salt) noexcept nogil:
    cdef unsigned long long h = FNV_OFFSET
    cdef Py_ssize_t j
    for j in range(8):
        h = (h ^ ((salt >> (8 * j)) & <unsigned long long> 0xFF)) * FNV_PRIME
    return h


def hash_text64(str text, salt):
    """64-bit FNV-1a of the UTF-8 bytes of ``text``, salted."""
    cdef bytes raw = text.encode("utf-8")
    cdef unsigned long long s = <unsigned long long> (salt & 0xFFFFFFFFFFFFFFFF)
    if len(raw) == 0:
        return _fnv_empty(s)
    cdef const unsigned char[::1] data = raw
    return _fnv_salted(data, 0, data.shape[0], s)


def ngram_counts_into(str text, int n_min, int n_max, salt, double[::1] out):
    """Accumulate hashed character n-gram counts of ``text`` into ``out``.

    Same contract as the pure-Python twin; returns the n-gram count.
    """
    cdef bytes raw = text.encode("utf-8")
    cdef unsigned long long s = <unsigned long long> (salt & 0xFFFFFFFFFFFFFFFF)
    cdef Py_ssize_t length = len(raw)
    cdef Py_ssize_t dim = out.shape[0]
    cdef Py_ssize_t i
    cdef int n
    cdef long total = 0
    cdef unsigned long long h
    if length == 0 or length < n_min:
        return 0
    cdef const unsigned char[::1] data = raw
    with nogil:
        for n in range(n_min, n_max + 1):
            if length < <Py_ssize_t> n:
                break
            for i in range(length - n + 1):
                h = _fnv_salted(data, i, n, s)
                out[<Py_ssize_t> (h % <unsigned long long> dim)] += 1.0
                total += 1
    return total
