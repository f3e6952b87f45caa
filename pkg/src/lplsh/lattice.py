"""Shifted lattices of l_p balls: the space partition behind the hash.

A single lattice is {sum_i Delta * a_i * w * e_i : a in Z^t} with spacing
Delta * w > 2w, so balls of radius w centered on one lattice are pairwise
disjoint and the nearest lattice point is the only candidate that can cover
a given x. U independent uniform shifts in [0, Delta*w]^t are laid down in
order; a point hashes to (u, a) for the smallest u whose shifted lattice
covers it, or to the reserved fallback (0, 0) when no lattice does.

Shifts are derived from the seed in fixed-size chunks, so any prefix of the
shift sequence is stable under growing U and nothing needs to be stored
beyond (params, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .geometry import ContractViolation, LpSpace, lp_norm
from .util import derive_rng

DEFAULT_U_MAX = 10**6
SHIFT_CHUNK = 1024
_ROW_BLOCK = 4096


@dataclass(frozen=True)
class LatticeParams:
    """Geometry of the shifted-lattice family.

    delta >= 3 keeps the in-lattice balls strictly separated (any spacing
    strictly above 2 works; 4 is the default). delta_fail is the covering
    failure budget the shift count was sized for; num_shifts is the realized
    U, with saturated set when the sizing formula exceeded the cap.
    """

    w: float
    t: int
    num_shifts: int
    delta: float = 4.0
    delta_fail: float = 0.05
    saturated: bool = False

    def __post_init__(self) -> None:
        if self.w <= 0:
            raise ContractViolation(f"w must be > 0, got {self.w}")
        if self.t < 1:
            raise ContractViolation(f"t must be >= 1, got {self.t}")
        if self.delta < 3.0:
            raise ContractViolation(f"delta must be >= 3, got {self.delta}")
        if not (0.0 < self.delta_fail < 1.0):
            raise ContractViolation(f"delta_fail must lie in (0, 1), got {self.delta_fail}")
        if self.num_shifts < 0:
            raise ContractViolation(f"num_shifts must be >= 0, got {self.num_shifts}")

    @property
    def spacing(self) -> float:
        return self.delta * self.w


class ShiftCount(NamedTuple):
    u: int
    saturated: bool


def compute_num_shifts(
    t: int,
    p: float,
    delta: float,
    delta_fail: float,
    u_max: int = DEFAULT_U_MAX,
) -> ShiftCount:
    """U = ceil(Delta^t * t^(t/p + 1) * ln(Delta * t / delta_fail)), capped at u_max.

    Enough independent shifts to cover all of R^t with probability at least
    1 - delta_fail (testing the fundamental cube [0, Delta*w]^t suffices by
    periodicity). Evaluated in log space; anything beyond u_max saturates
    and is flagged, weakening the covering guarantee.
    """
    if t < 1:
        raise ContractViolation(f"t must be >= 1, got {t}")
    if not (1.0 < p <= 2.0):
        raise ContractViolation(f"p must lie in (1, 2], got {p}")
    if delta < 3.0:
        raise ContractViolation(f"delta must be >= 3, got {delta}")
    if not (0.0 < delta_fail < 1.0):
        raise ContractViolation(f"delta_fail must lie in (0, 1), got {delta_fail}")
    if u_max < 1:
        raise ContractViolation(f"u_max must be >= 1, got {u_max}")
    log_u = t * math.log(delta) + (t / p + 1.0) * math.log(t) + math.log(math.log(delta * t / delta_fail))
    if log_u > math.log(u_max) + 1e-12:
        return ShiftCount(int(u_max), True)
    u = int(math.ceil(math.exp(log_u) - 1e-9))
    if u > u_max:
        return ShiftCount(int(u_max), True)
    return ShiftCount(max(u, 1), False)


class ShiftedLatticeSet:
    """U shifted lattices, shifts uniform in [0, Delta*w]^t, derived from a seed.

    Shift rows are materialized lazily in chunks of SHIFT_CHUNK; chunk j
    depends only on (seed, j), so prefixes are stable and serialization
    stores nothing but (params, seed).
    """

    def __init__(self, params: LatticeParams, seed: int):
        self.params = params
        self.seed = int(seed)
        self._chunks: dict[int, np.ndarray] = {}

    def _chunk(self, j: int) -> np.ndarray:
        block = self._chunks.get(j)
        if block is None:
            rng = derive_rng(self.seed, j)
            lo = j * SHIFT_CHUNK
            n = min(SHIFT_CHUNK, self.params.num_shifts - lo)
            block = rng.uniform(0.0, self.params.spacing, size=(n, self.params.t))
            self._chunks[j] = block
        return block

    def shift_block(self, lo: int, hi: int) -> np.ndarray:
        """Shift rows for lattice indices [lo, hi) (0-based)."""
        hi = min(hi, self.params.num_shifts)
        if lo >= hi:
            return np.empty((0, self.params.t))
        first, last = lo // SHIFT_CHUNK, (hi - 1) // SHIFT_CHUNK
        parts = [self._chunk(j) for j in range(first, last + 1)]
        block = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=0)
        start = lo - first * SHIFT_CHUNK
        return block[start : start + (hi - lo)]

    @property
    def shifts(self) -> np.ndarray:
        return self.shift_block(0, self.params.num_shifts)


def make_lattices(params: LatticeParams, seed: int) -> ShiftedLatticeSet:
    return ShiftedLatticeSet(params, seed)


@dataclass(frozen=True)
class HashValue:
    """Hash output (u, a): 1-based lattice index and cell coordinates.

    u = 0 is the reserved fallback for points no lattice covers; its
    coordinates are all zero.
    """

    u: int
    coords: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.u < 0:
            raise ContractViolation(f"u must be >= 0, got {self.u}")
        if self.u == 0 and any(c != 0 for c in self.coords):
            raise ContractViolation("fallback hash must have all-zero coordinates")

    @staticmethod
    def fallback(t: int) -> "HashValue":
        return HashValue(0, (0,) * t)


def _abs_pow(v: np.ndarray, p: float) -> np.ndarray:
    """v**p elementwise for v >= 0; sqrt chains for the common quarter-power p."""
    if p == 2.0:
        return v * v
    if p == 1.5:
        return v * np.sqrt(v)
    if p == 1.25:
        return v * np.sqrt(np.sqrt(v))
    if p == 1.75:
        s = np.sqrt(v)
        return v * s * np.sqrt(s)
    return np.power(v, p)


def _inside(diff: np.ndarray, p: float, w: float) -> np.ndarray:
    """Membership test ||diff||_p <= w via sum(|diff|^p) <= w^p over the last axis.

    Coordinates here are bounded by the lattice spacing, so the powers stay
    well conditioned without rescaling.
    """
    return _abs_pow(np.abs(diff), p).sum(axis=-1) <= w**p


def locate(x: np.ndarray, u: int, lattices: ShiftedLatticeSet, space: LpSpace) -> np.ndarray | None:
    """Cell coordinates of x in lattice u (1-based), or None if its ball misses x.

    The nearest lattice point is found by rounding (half-to-even); disjoint
    in-lattice balls mean no other lattice point can contain x.
    """
    params = lattices.params
    if not (1 <= u <= params.num_shifts):
        raise ContractViolation(f"lattice index must lie in [1, {params.num_shifts}], got {u}")
    if space.dim != params.t:
        raise ContractViolation(f"space dimension {space.dim} does not match lattice t={params.t}")
    xa = np.asarray(x, dtype=np.float64)
    if xa.shape != (params.t,):
        raise ContractViolation(f"x must have shape ({params.t},), got {xa.shape}")
    shift = lattices.shift_block(u - 1, u)[0]
    rel = xa - shift
    a = np.rint(rel / params.spacing)
    diff = rel - params.spacing * a
    if _inside(diff, space.p, params.w):
        return a.astype(np.int64)
    return None


def hash_point(
    x: np.ndarray,
    lattices: ShiftedLatticeSet,
    space: LpSpace,
    return_probes: bool = False,
):
    """Hash x to (u, a) for the smallest covering lattice, else the fallback."""
    u_arr, coords, probes = hash_batch(np.asarray(x, dtype=np.float64)[None, :], lattices, space)
    value = HashValue(int(u_arr[0]), tuple(int(c) for c in coords[0]))
    if return_probes:
        return value, int(probes[0])
    return value


def hash_batch(
    points: np.ndarray,
    lattices: ShiftedLatticeSet,
    space: LpSpace,
    chunk: int = SHIFT_CHUNK,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized smallest-covering-lattice search.

    Returns (u, coords, probes): u is 0 for fallback rows, coords are the
    cell coordinates (zeros for fallback), probes counts lattices examined
    per point. Lattices are scanned in index order in chunks, dropping rows
    as they resolve, so the average probe count tracks the per-lattice
    covering fraction rather than U.
    """
    params = lattices.params
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != params.t:
        raise ContractViolation(f"points must have shape (n, {params.t}), got {pts.shape}")
    n = pts.shape[0]
    u_out = np.zeros(n, dtype=np.int64)
    coords_out = np.zeros((n, params.t), dtype=np.int64)
    probes = np.zeros(n, dtype=np.int64)
    unresolved = np.arange(n)
    spacing = params.spacing
    lo = 0
    cb = min(16, chunk)  # grow chunk sizes so common early hits stay cheap
    while lo < params.num_shifts and unresolved.size:
        shifts = lattices.shift_block(lo, lo + cb)
        b = shifts.shape[0]
        for base in range(0, unresolved.size, _ROW_BLOCK):
            rows = unresolved[base : base + _ROW_BLOCK]
            rel = pts[rows, None, :] - shifts[None, :, :]
            a = np.rint(rel / spacing)
            hit = _inside(rel - spacing * a, space.p, params.w)
            found = hit.any(axis=1)
            first = hit.argmax(axis=1)
            probes[rows] += np.where(found, first + 1, b)
            if found.any():
                hit_rows = rows[found]
                u_out[hit_rows] = lo + first[found] + 1
                coords_out[hit_rows] = a[found, first[found]].astype(np.int64)
        unresolved = unresolved[u_out[unresolved] == 0]
        lo += b
        cb = min(cb * 4, chunk)
    return u_out, coords_out, probes


def covering_fraction(
    lattices: ShiftedLatticeSet,
    space: LpSpace,
    trials: int,
    rng: np.random.Generator,
    points: np.ndarray | None = None,
) -> float:
    """Fraction of uniform points in the fundamental cube covered by some lattice.

    By periodicity the cube [0, Delta*w]^t is representative of all of R^t.
    An explicit point set may be passed to make prefix-monotonicity checks
    exact.
    """
    params = lattices.params
    if points is None:
        if trials < 1:
            raise ContractViolation(f"trials must be >= 1, got {trials}")
        points = rng.uniform(0.0, params.spacing, size=(trials, params.t))
    if params.num_shifts == 0:
        return 0.0
    u, _, _ = hash_batch(points, lattices, space)
    return float((u > 0).mean())
