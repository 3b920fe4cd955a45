"""Seed schedule utilities."""

MASK = (1 << 64) - 1


def splitmix64(state: int) -> int:
    """One splitmix64 step; used to expand a base seed into per-sample and
    per-edge seeds deterministically."""
    z = (state + 0x9E3779B97F4A7C15) & MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return (z ^ (z >> 31)) & MASK


def sample_seed(base: int, index: int) -> int:
    """Seed for sample ``index`` of an ensemble with the given base seed."""
    return splitmix64((base + index) & MASK)


def nested_seed(base: int, *indices: int) -> int:
    """Seed for nested loops (sample, edge, resample, ...)."""
    s = base & MASK
    for i in indices:
        s = splitmix64((s ^ (i + 1)) & MASK)
    return s
