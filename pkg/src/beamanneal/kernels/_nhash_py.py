"""Pure-Python twin of the compiled n-gram hashing kernel.

Must stay bit-identical to ``_nhash.pyx``: same FNV-1a constants, same salt
absorption, same bucket rule. Tests compare the two directly.
"""

_FNV_OFFSET = 14695981039346656037
_FNV_PRIME = 1099511628211
_MASK64 = (1 << 64) - 1


def hash_text64(text: str, salt: int) -> int:
    """64-bit FNV-1a of the UTF-8 bytes of ``text``, salted."""
    h = _FNV_OFFSET
    for b in (salt & _MASK64).to_bytes(8, "little"):
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    for b in text.encode("utf-8"):
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def ngram_counts_into(text, n_min, n_max, salt, out):
    """Accumulate hashed character n-gram counts of ``text`` into ``out``.

    Every n-gram for n in [n_min, n_max] is hashed (FNV-1a over its UTF-8
    bytes, salted) into a bucket ``h % len(out)`` whose count is incremented
    by 1. Returns the number of n-grams absorbed.
    """
    data = text.encode("utf-8")
    dim = len(out)
    length = len(data)
    salt_bytes = (salt & _MASK64).to_bytes(8, "little")
    total = 0
    for n in range(n_min, n_max + 1):
        if length < n:
            break
        for i in range(length - n + 1):
            h = _FNV_OFFSET
            for b in salt_bytes:
                h = ((h ^ b) * _FNV_PRIME) & _MASK64
            for b in data[i : i + n]:
                h = ((h ^ b) * _FNV_PRIME) & _MASK64
            out[h % dim] += 1.0
            total += 1
    return total
