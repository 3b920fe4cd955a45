"""Random conductance environments on finite triadic boxes.

An environment assigns a conductance in {0} u [lam, 1] to every nearest
neighbor bond of the box.  A bond is open iff its conductance is nonzero;
each bond is open independently with probability ``p`` and open values are
drawn from a configurable law supported in [lam, 1].

Geometry conventions
--------------------
The box at scale M is the set of lattice points with every coordinate in
[-(3^M - 1)/2, (3^M - 1)/2], i.e. 3^M points per side, centered at the
origin.  Bonds are stored once per vertex and positive axis direction;
bonds that would leave the box are absent and behave exactly like closed
bonds (free boundary).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

# Bond percolation thresholds for Z^d.  p_c(2) is exact; p_c(3) is the
# accepted numerical estimate from the percolation literature.
P_CRIT = {2: 0.5, 3: 0.2488}

LAWS = ("constant-one", "uniform")

_MAGIC = b"PLAB"
_LAW_TAGS = {"constant-one": 0, "uniform": 1}
_LAW_NAMES = {v: k for k, v in _LAW_TAGS.items()}


class ConfigurationError(ValueError):
    """Raised for invalid environment specifications."""


class BoundsError(IndexError):
    """Raised when a vertex, edge or sub-box escapes the working box."""


@dataclass(frozen=True)
class EnvironmentSpec:
    """Parameters of an i.i.d. conductance law on a triadic box.

    Parameters
    ----------
    d : lattice dimension, 2 or 3.
    M : box scale; the box has 3^M lattice points per side.
    p : probability that a bond is open; must exceed the percolation
        threshold unless ``allow_subcritical`` is set.
    lam : ellipticity floor; open conductances lie in [lam, 1].
    law : "constant-one" (every open bond has conductance 1) or
        "uniform" (open values uniform on [lam, 1]).
    seed : 64-bit RNG seed. Environments regenerate bit-identically.
    """

    d: int = 2
    M: int = 3
    p: float = 0.75
    lam: float = 0.5
    law: str = "uniform"
    seed: int = 0
    allow_subcritical: bool = False

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ConfigurationError(f"dimension must be 2 or 3, got {self.d}")
        if self.M < 1:
            raise ConfigurationError(f"box scale must be >= 1, got {self.M}")
        if not 0.0 < self.p <= 1.0:
            raise ConfigurationError(f"open probability must be in (0, 1], got {self.p}")
        if not 0.0 < self.lam <= 1.0:
            raise ConfigurationError(f"ellipticity floor must be in (0, 1], got {self.lam}")
        if self.law not in LAWS:
            raise ConfigurationError(f"unknown conductance law {self.law!r}")
        if self.p <= P_CRIT[self.d] and not self.allow_subcritical:
            raise ConfigurationError(
                f"p={self.p} does not exceed the percolation threshold "
                f"{P_CRIT[self.d]} for d={self.d}; pass allow_subcritical=True "
                "to construct anyway"
            )

    @property
    def side(self) -> int:
        return 3 ** self.M

    @property
    def half(self) -> int:
        return (3 ** self.M - 1) // 2


@dataclass(frozen=True)
class EdgeRef:
    """A nearest-neighbor bond, canonically oriented.

    ``x`` is the lexicographically smaller endpoint, ``y = x + e_axis``.
    """

    x: tuple
    y: tuple

    def __post_init__(self):
        x, y = np.asarray(self.x), np.asarray(self.y)
        if x.shape != y.shape or np.abs(x - y).sum() != 1:
            raise ValueError(f"endpoints {self.x}, {self.y} are not nearest neighbors")
        if tuple(self.x) > tuple(self.y):
            raise ValueError("EdgeRef endpoints must be in canonical (lexicographic) order")

    @property
    def axis(self) -> int:
        return int(np.argmax(np.abs(np.asarray(self.y) - np.asarray(self.x))))

    @staticmethod
    def of(x, y) -> "EdgeRef":
        """Build an EdgeRef from endpoints in either order."""
        x, y = tuple(int(v) for v in x), tuple(int(v) for v in y)
        return EdgeRef(min(x, y), max(x, y))


class Environment:
    """Conductances on every in-box bond of a triadic box.

    ``cond`` has shape (side,)*d + (d,); ``cond[pos, k]`` is the conductance
    of the bond from the vertex at grid position ``pos`` to its neighbor in
    the +k direction.  Grid position = coordinate + half, so coordinates run
    over [-half, half]^d.  Absent bonds (leaving the box) are stored as 0.
    """

    def __init__(self, spec: EnvironmentSpec, cond: np.ndarray, check: bool = True):
        self.spec = spec
        self.cond = cond
        L, d = spec.side, spec.d
        if cond.shape != (L,) * d + (d,):
            raise ValueError(f"conductance array has shape {cond.shape}, expected {(L,)*d + (d,)}")
        if check:
            self._check_invariants()

    # -- invariants ---------------------------------------------------

    def _check_invariants(self):
        spec = self.spec
        vals = self.cond[self.in_box_bond_mask()]
        open_vals = vals[vals > 0]
        if open_vals.size and (open_vals.min() < spec.lam - 1e-12 or open_vals.max() > 1 + 1e-12):
            raise ValueError("open conductances escape [lam, 1]")
        # 5-sigma binomial sanity band on the open fraction
        n = vals.size
        if n:
            frac = open_vals.size / n
            sigma = np.sqrt(spec.p * (1 - spec.p) / n)
            if abs(frac - spec.p) > 5 * sigma:
                raise ValueError(
                    f"open-edge fraction {frac:.4f} outside 5-sigma band of p={spec.p}"
                )

    def in_box_bond_mask(self) -> np.ndarray:
        """Boolean mask of bonds whose both endpoints lie in the box."""
        L, d = self.spec.side, self.spec.d
        mask = np.ones((L,) * d + (d,), dtype=bool)
        for k in range(d):
            sl = [slice(None)] * (d + 1)
            sl[k] = L - 1
            sl[d] = k
            mask[tuple(sl)] = False
        return mask

    @property
    def open_(self) -> np.ndarray:
        """Boolean open-bond array, same layout as ``cond``."""
        return self.cond > 0

    # -- vertex/bond indexing ------------------------------------------

    def to_grid(self, x) -> tuple:
        """Coordinates -> grid position; raises BoundsError outside the box."""
        h = self.spec.half
        pos = tuple(int(c) + h for c in x)
        if any(p < 0 or p >= self.spec.side for p in pos):
            raise BoundsError(f"vertex {tuple(x)} outside box of scale {self.spec.M}")
        return pos

    def conductance(self, e: EdgeRef) -> float:
        pos = self.to_grid(e.x)
        self.to_grid(e.y)
        return float(self.cond[pos + (e.axis,)])

    # -- equality ------------------------------------------------------

    def __eq__(self, other):
        return (
            isinstance(other, Environment)
            and self.spec == other.spec
            and np.array_equal(self.cond, other.cond)
        )

    # -- serialization ------------------------------------------------

    def dump(self, path):
        """Binary dump: header (d, M, p, lam, law tag, seed) + float32 payload.

        Payload is the conductance array in canonical bond order
        (C-order over grid positions, then direction).
        """
        header = struct.pack(
            "<4sBBddBq",
            _MAGIC,
            self.spec.d,
            self.spec.M,
            self.spec.p,
            self.spec.lam,
            _LAW_TAGS[self.spec.law],
            self.spec.seed,
        )
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(self.cond.astype(np.float32).tobytes())

    @staticmethod
    def load(path) -> "Environment":
        with open(path, "rb") as fh:
            head = fh.read(struct.calcsize("<4sBBddBq"))
            magic, d, M, p, lam, law, seed = struct.unpack("<4sBBddBq", head)
            if magic != _MAGIC:
                raise ValueError("not an environment dump")
            spec = EnvironmentSpec(
                d=d, M=M, p=p, lam=lam, law=_LAW_NAMES[law], seed=seed,
                allow_subcritical=True,
            )
            payload = np.frombuffer(fh.read(), dtype=np.float32)
        cond = payload.reshape((spec.side,) * d + (d,)).astype(np.float64)
        return Environment(spec, cond, check=False)


def _draw_conductances(spec: EnvironmentSpec, rng: np.random.Generator, shape) -> np.ndarray:
    open_mask = rng.random(shape) < spec.p
    if spec.law == "constant-one":
        vals = np.ones(shape)
    else:
        vals = spec.lam + (1.0 - spec.lam) * rng.random(shape)
    return np.where(open_mask, vals, 0.0)


def generate(spec: EnvironmentSpec) -> Environment:
    """Draw an i.i.d. environment; deterministic in ``spec.seed``."""
    L, d = spec.side, spec.d
    rng = np.random.default_rng(spec.seed)
    cond = _draw_conductances(spec, rng, (L,) * d + (d,))
    env = Environment(spec, cond, check=False)
    cond[~env.in_box_bond_mask()] = 0.0
    env._check_invariants()
    return env


def resample_edge(env: Environment, e: EdgeRef, aux_seed: int) -> Environment:
    """Copy of ``env`` with the conductance of ``e`` redrawn from the law.

    The redraw uses an RNG stream independent of the generating seed; the
    original environment is untouched.
    """
    pos = env.to_grid(e.x)
    env.to_grid(e.y)
    rng = np.random.default_rng(aux_seed)
    new_val = float(_draw_conductances(env.spec, rng, ()))
    cond = env.cond.copy()
    cond[pos + (e.axis,)] = new_val
    return Environment(env.spec, cond, check=False)


def translate(env: Environment, z, m: int) -> Environment:
    """Environment on the sub-box of scale ``m`` whose bonds are those of
    ``env`` shifted by ``z``: result(x, k) = env(x + z, k).

    Bonds of the sub-box leaving it become absent (free boundary).
    """
    spec = env.spec
    z = tuple(int(v) for v in z)
    if m > spec.M:
        raise BoundsError(f"sub-box scale {m} exceeds box scale {spec.M}")
    half_m, half = (3 ** m - 1) // 2, spec.half
    for zk in z:
        if abs(zk) + half_m > half:
            raise BoundsError(f"shifted sub-box z={z}, m={m} escapes box of scale {spec.M}")
    Lm, d = 3 ** m, spec.d
    lo = tuple(zk - half_m + half for zk in z)  # grid position of sub-box corner
    sl = tuple(slice(lo[k], lo[k] + Lm) for k in range(d))
    cond = env.cond[sl + (slice(None),)].copy()
    sub_spec = replace(spec, M=m)
    sub = Environment(sub_spec, cond, check=False)
    cond[~sub.in_box_bond_mask()] = 0.0
    return sub
