"""Deterministic seed derivation.

All randomness in the package flows from one root seed through
``hash_u64``: every sampled candidate, rollout, shuffle and down-sampling
draws from a child seed derived from its position in the computation, so
results are reproducible regardless of execution order or concurrency.

The splitting rule used everywhere is

    child = hash_u64(parent_seed, step_index, candidate_slot)

where ``candidate_slot`` is the caller's stable index for the candidate.
Search strategies keep a candidate's slot fixed along its lineage, which
makes runs with different strategy widths share candidate streams (a wider
run sees a superset of a narrower run's candidates under the same seed).
"""

from beamanneal.kernels import hash_text64

_MASK64 = (1 << 64) - 1

# Fixed stream tags so independent consumers of the same parent seed can
# never collide.
TAG_ROLLOUT = 0x524F4C4C  # "ROLL"
TAG_ESTIMATE = 0x45535449  # "ESTI"
TAG_BALANCE = 0x42414C41  # "BALA"
TAG_GOLD = 0x474F4C44  # "GOLD"
TAG_TASK = 0x5441534B  # "TASK"
TAG_TRAIN = 0x5452414E  # "TRAN"


def _mix(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def hash_u64(*parts: int) -> int:
    """Combine integers into one well-mixed 64-bit value."""
    h = 0x9E3779B97F4A7C15
    for p in parts:
        h = _mix((h + (p & _MASK64)) & _MASK64)
    return h


def hash_str(text: str) -> int:
    """Stable 64-bit hash of a string (for id-derived seeds)."""
    return hash_text64(text, 0)


def child_seed(parent_seed: int, step_index: int, candidate_slot: int) -> int:
    """Seed for one candidate draw; see the module docstring."""
    return hash_u64(parent_seed, step_index, candidate_slot)
