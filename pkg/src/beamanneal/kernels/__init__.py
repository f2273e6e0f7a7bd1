"""Hashing kernels with a compiled fast path.

The compiled Cython extension is preferred when present; otherwise the
pure-Python twin is used. Both expose the same functions with bit-identical
results, so everything downstream is backend-agnostic.

``benchmarks/bench_kernels.py`` compares the two implementations.
"""

try:
    from beamanneal.kernels._nhash import hash_text64, ngram_counts_into

    BACKEND = "compiled"
except ImportError:  # extension not built; fall back to the Python twin
    from beamanneal.kernels._nhash_py import hash_text64, ngram_counts_into

    BACKEND = "python"

__all__ = ["BACKEND", "hash_text64", "ngram_counts_into"]
