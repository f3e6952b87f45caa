"""Multi-table nearest-neighbor index over the lattice hash.

Standard amplification: k hash values concatenated per table (AND), L
independent tables (OR). k is sized so a far point survives a table with
probability about 1/n, L so a near point is found with constant probability
per unit of safety factor.

Bucket keys are the k-tuples of hash values, folded to a 64-bit fingerprint;
builds compare the full keys inside every bucket and report fingerprint
collisions rather than leaving them silent. Queries compute exact distances
on the stored points, so a returned answer's distance is always real; the
approximation contract only governs which candidates are met.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .geometry import ContractViolation, LpSpace, lp_norm
from .lattice import LatticeParams, hash_batch
from .scheme import (
    PROFILE_MAIN,
    PROFILE_REMARK,
    HashFunction,
    Knobs,
    SchemeParams,
    derive_params,
    sample_hash,
    scale_to_unit,
)
from .stable import Threshold
from .util import FormatError, crc64, derive_rng

MAGIC = b"LPLSH"
FORMAT_VERSION = 1

_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def fingerprint_rows(key_mat: np.ndarray) -> np.ndarray:
    """Fold int64 key rows to 64-bit fingerprints (FNV fold + avalanche)."""
    mat = np.ascontiguousarray(key_mat, dtype=np.int64).view(np.uint64)
    if mat.ndim != 2:
        raise ContractViolation("key matrix must be 2-d")
    h = np.full(mat.shape[0], _FNV_OFFSET, dtype=np.uint64)
    for col in range(mat.shape[1]):
        h = (h ^ mat[:, col]) * _FNV_PRIME
    h ^= h >> np.uint64(30)
    h = h * _MIX1
    h ^= h >> np.uint64(27)
    h = h * _MIX2
    h ^= h >> np.uint64(31)
    return h


class Buckets(NamedTuple):
    """One table's buckets in sorted-fingerprint CSR layout."""

    fps: np.ndarray  # unique fingerprints, ascending, uint64
    offsets: np.ndarray  # int64, len(fps) + 1; bucket i is positions[offsets[i]:offsets[i+1]]
    positions: np.ndarray  # int64 rows into points, ascending within each bucket

    def get(self, fp: int) -> np.ndarray | None:
        i = int(np.searchsorted(self.fps, np.uint64(fp)))
        if i == self.fps.size or int(self.fps[i]) != fp:
            return None
        return self.positions[self.offsets[i] : self.offsets[i + 1]]


class TableShape(NamedTuple):
    k: int
    l: int
    rho_hat: float
    degraded: bool  # p1 so small (1/p1 > sqrt(n)) that the framework's sizing is dubious


def choose_k_l(n: int, p1_hat: float, p2_hat: float, safety: float = 1.0) -> TableShape:
    """k = ceil(ln n / ln(1/p2)), L = ceil(safety * n^rho), rho = ln(1/p1)/ln(1/p2)."""
    if n < 1:
        raise ContractViolation(f"n must be >= 1, got {n}")
    if not (0.0 < p2_hat < p1_hat < 1.0):
        raise ContractViolation(
            f"need 0 < p2_hat < p1_hat < 1, got p1_hat={p1_hat}, p2_hat={p2_hat}"
        )
    if safety <= 0:
        raise ContractViolation(f"safety must be > 0, got {safety}")
    log_n = math.log(n)
    k = max(1, math.ceil(log_n / math.log(1.0 / p2_hat)))
    rho = math.log(1.0 / p1_hat) / math.log(1.0 / p2_hat)
    l = max(1, math.ceil(safety * n**rho))
    return TableShape(k=k, l=l, rho_hat=rho, degraded=1.0 / p1_hat > math.sqrt(n))


@dataclass(frozen=True)
class IndexParams:
    """Table shape and the root seed all hash functions derive from."""

    k: int
    l: int
    seed: int
    max_candidates: int | None = None  # None: 3 * l

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ContractViolation(f"k must be >= 1, got {self.k}")
        if self.l < 1:
            raise ContractViolation(f"l must be >= 1, got {self.l}")
        if self.max_candidates is not None and self.max_candidates < 1:
            raise ContractViolation("max_candidates must be >= 1 when set")

    @property
    def candidate_budget(self) -> int:
        return self.max_candidates if self.max_candidates is not None else 3 * self.l


@dataclass(frozen=True)
class QueryResult:
    answer: tuple[int, float] | None  # (id, exact distance)
    candidates_examined: int
    tables_probed: int
    in_contract: bool | None  # None when there is no answer


def _function_seed(root_seed: int, table: int, slot: int) -> int:
    return int(derive_rng(root_seed, 11, table, slot).integers(0, 2**63 - 1))


class LshIndex:
    """Built index: points, per-table buckets, and regenerable hash functions."""

    def __init__(
        self,
        scheme: SchemeParams,
        params: IndexParams,
        points: np.ndarray,
        ids: np.ndarray,
        tables: list[Buckets],
        avg_probes: float | None = None,
        fingerprint_collisions: int = 0,
        fallback_rate: float | None = None,
    ):
        self.scheme = scheme
        self.params = params
        self.points = points
        self.ids = ids
        self.tables = tables
        self.avg_probes = avg_probes
        self.fingerprint_collisions = fingerprint_collisions
        self.fallback_rate = fallback_rate
        self._functions: list[list[HashFunction]] | None = None

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def space(self) -> LpSpace:
        return LpSpace(self.scheme.p, self.d)

    def functions(self) -> list[list[HashFunction]]:
        if self._functions is None:
            self._functions = [
                [sample_hash(self.scheme, self.d, _function_seed(self.params.seed, ell, j)) for j in range(self.params.k)]
                for ell in range(self.params.l)
            ]
        return self._functions

    def _query_keys(self, queries: np.ndarray) -> list[np.ndarray]:
        """Per-table fingerprints for a batch of queries."""
        unit = scale_to_unit(queries, self.scheme.r)
        t = self.scheme.t
        space_t = self.scheme.space()
        out = []
        for funcs in self.functions():
            key_mat = np.empty((queries.shape[0], self.params.k * (1 + t)), dtype=np.int64)
            for j, h in enumerate(funcs):
                u, coords, _ = hash_batch(h.project(unit), h.lattices, space_t)
                key_mat[:, j * (1 + t)] = u
                key_mat[:, j * (1 + t) + 1 : (j + 1) * (1 + t)] = coords
            out.append(fingerprint_rows(key_mat))
        return out

    def query(self, q: np.ndarray, max_candidates: int | None = None) -> QueryResult:
        return self.query_batch(np.asarray(q, dtype=np.float64)[None, :], max_candidates)[0]

    def query_batch(self, queries: np.ndarray, max_candidates: int | None = None) -> list[QueryResult]:
        """Probe one bucket per table per query, in table order, under a candidate budget.

        The answer is the closest candidate examined (ties to the smaller
        id); it is in contract when its exact distance is at most c * r.
        """
        qs = np.asarray(queries, dtype=np.float64)
        if qs.ndim != 2 or qs.shape[1] != self.d:
            raise ContractViolation(f"queries must have shape (m, {self.d})")
        budget = max_candidates if max_candidates is not None else self.params.candidate_budget
        table_fps = self._query_keys(qs)
        space = self.space()
        limit = self.scheme.c * self.scheme.r
        results = []
        for qi in range(qs.shape[0]):
            seen: list[int] = []
            seen_set: set[int] = set()
            tables_probed = 0
            for ell in range(self.params.l):
                if len(seen) >= budget:
                    break
                tables_probed += 1
                bucket = self.tables[ell].get(int(table_fps[ell][qi]))
                if bucket is None:
                    continue
                for pos in bucket:
                    pos = int(pos)
                    if pos not in seen_set:
                        seen_set.add(pos)
                        seen.append(pos)
                        if len(seen) >= budget:
                            break
            if not seen:
                results.append(QueryResult(None, 0, tables_probed, None))
                continue
            sel = np.array(seen, dtype=np.int64)
            dists = np.asarray(lp_norm(self.points[sel] - qs[qi][None, :], space))
            cand_ids = self.ids[sel]
            best = np.lexsort((cand_ids, dists))[0]
            dist = float(dists[best])
            results.append(
                QueryResult(
                    answer=(int(cand_ids[best]), dist),
                    candidates_examined=len(seen),
                    tables_probed=tables_probed,
                    in_contract=bool(dist <= limit),
                )
            )
        return results


def build(
    points: np.ndarray,
    scheme: SchemeParams,
    params: IndexParams,
    ids: np.ndarray | None = None,
) -> LshIndex:
    """Hash every point into one bucket per table; deterministic in (data, seeds)."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ContractViolation("points must have shape (n, d)")
    n, d = pts.shape
    if d < 1:
        raise ContractViolation("points must have at least one column")
    if ids is None:
        ids_arr = np.arange(n, dtype=np.int64)
    else:
        ids_arr = np.asarray(ids, dtype=np.int64)
        if ids_arr.shape != (n,):
            raise ContractViolation("ids must have shape (n,)")
        if np.unique(ids_arr).size != n:
            raise ContractViolation("ids must be unique")
    unit = scale_to_unit(pts, scheme.r)
    t = scheme.t
    space_t = scheme.space()
    tables: list[Buckets] = []
    probe_total = 0
    fallback_total = 0
    collisions = 0
    for ell in range(params.l):
        key_mat = np.empty((n, params.k * (1 + t)), dtype=np.int64)
        for j in range(params.k):
            h = sample_hash(scheme, d, _function_seed(params.seed, ell, j))
            u, coords, probes = hash_batch(h.project(unit), h.lattices, space_t)
            key_mat[:, j * (1 + t)] = u
            key_mat[:, j * (1 + t) + 1 : (j + 1) * (1 + t)] = coords
            probe_total += int(probes.sum())
            fallback_total += int((u == 0).sum())
        fps = fingerprint_rows(key_mat)
        # stable sort keeps equal-fingerprint rows in original order, so
        # positions come out ascending within each bucket
        order = np.argsort(fps, kind="stable")
        sorted_fps = fps[order]
        if n:
            starts = np.concatenate(([0], np.flatnonzero(np.diff(sorted_fps)) + 1))
        else:
            starts = np.empty(0, dtype=np.int64)
        offsets = np.concatenate((starts, [n])).astype(np.int64)
        # a fingerprint collision is a bucket whose full keys are not all equal
        sorted_rows = key_mat[order]
        bad = (sorted_fps[1:] == sorted_fps[:-1]) & (sorted_rows[1:] != sorted_rows[:-1]).any(axis=1)
        if bad.any():
            owner = np.searchsorted(starts, np.flatnonzero(bad), side="right") - 1
            collisions += int(np.unique(owner).size)
        tables.append(
            Buckets(fps=sorted_fps[starts].copy(), offsets=offsets, positions=order.astype(np.int64, copy=False))
        )
    hash_evals = n * params.l * params.k
    return LshIndex(
        scheme=scheme,
        params=params,
        points=pts,
        ids=ids_arr,
        tables=tables,
        avg_probes=probe_total / hash_evals if hash_evals else 0.0,
        fingerprint_collisions=collisions,
        fallback_rate=fallback_total / hash_evals if hash_evals else 0.0,
    )


def linear_scan_nn(
    points: np.ndarray, q: np.ndarray, space: LpSpace, ids: np.ndarray | None = None
) -> tuple[int, float]:
    """Exact nearest neighbor; ties go to the smaller id."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[0] == 0:
        raise ContractViolation("linear scan needs a nonempty dataset")
    ids_arr = np.arange(pts.shape[0], dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
    dists = np.asarray(lp_norm(pts - np.asarray(q, dtype=np.float64)[None, :], space))
    best = np.lexsort((ids_arr, dists))[0]
    return int(ids_arr[best]), float(dists[best])


# -- persistence ---------------------------------------------------------

_PROFILE_CODE = {PROFILE_MAIN: 0, PROFILE_REMARK: 1}
_PROFILE_NAME = {v: k for k, v in _PROFILE_CODE.items()}


def save_index(index: LshIndex, path: str) -> None:
    """Serialize to the LPLSH container (little-endian, CRC-64 trailer).

    Only bucket structure, points, ids, and parameters are stored;
    projection matrices and lattice shifts are regenerated from seeds.
    """
    scheme = index.scheme
    params = index.params
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<H", FORMAT_VERSION)
    buf += struct.pack("<3d", scheme.p, scheme.c, scheme.r)
    buf += struct.pack("<IQII", index.d, index.n, params.k, params.l)
    buf += struct.pack("<Q", params.seed)
    buf += struct.pack("<I", params.max_candidates or 0)
    buf += struct.pack(
        "<dIdddQBB",
        scheme.w,
        scheme.t,
        scheme.epsilon,
        scheme.lattice.delta,
        scheme.delta_fail,
        scheme.lattice.num_shifts,
        int(scheme.lattice.saturated),
        _PROFILE_CODE[scheme.profile],
    )
    buf += struct.pack("<3d", scheme.knobs.kappa_w, scheme.knobs.kappa_t, scheme.knobs.kappa_eps)
    buf += struct.pack("<dQQ", scheme.threshold.value, scheme.threshold.sample_count, scheme.threshold.seed)
    buf += struct.pack("<H", len(scheme.overrides))
    for name, value in scheme.overrides:
        raw = name.encode("ascii")
        buf += struct.pack("<B", len(raw)) + raw + struct.pack("<d", value)
    buf += index.ids.astype("<i8").tobytes()
    buf += np.ascontiguousarray(index.points, dtype="<f8").tobytes()
    for table in index.tables:
        buf += struct.pack("<QQ", table.fps.size, table.positions.size)
        buf += table.fps.astype("<u8").tobytes()
        buf += np.diff(table.offsets).astype("<u4").tobytes()
        buf += table.positions.astype("<u4").tobytes()
    buf += struct.pack("<Q", crc64(buf))
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


def load_index(path: str) -> LshIndex:
    """Parse and verify an LPLSH container; any corruption is a FormatError."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 2 + 8:
        raise FormatError("file too short to be an index")
    if raw[: len(MAGIC)] != MAGIC:
        raise FormatError("bad magic; not an index file")
    (stored_crc,) = struct.unpack_from("<Q", raw, len(raw) - 8)
    if crc64(memoryview(raw)[:-8]) != stored_crc:
        raise FormatError("checksum mismatch; refusing to load")
    off = len(MAGIC)

    def take(fmt: str):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(raw) - 8:
            raise FormatError("truncated header")
        vals = struct.unpack_from(fmt, raw, off)
        off += size
        return vals

    (version,) = take("<H")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    p, c, r = take("<3d")
    d, n, k, l = take("<IQII")
    (root_seed,) = take("<Q")
    (max_candidates,) = take("<I")
    w, t, eps, delta, delta_fail, num_shifts, saturated, profile_code = take("<dIdddQBB")
    kappa_w, kappa_t, kappa_eps = take("<3d")
    t_value, t_samples, t_seed = take("<dQQ")
    (n_overrides,) = take("<H")
    overrides = []
    for _ in range(n_overrides):
        (name_len,) = take("<B")
        if off + name_len > len(raw) - 8:
            raise FormatError("truncated override record")
        name = raw[off : off + name_len].decode("ascii")
        off += name_len
        (value,) = take("<d")
        overrides.append((name, value))

    def take_array(dtype: str, count: int) -> np.ndarray:
        nonlocal off
        size = np.dtype(dtype).itemsize * count
        if off + size > len(raw) - 8:
            raise FormatError("truncated payload")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off)
        off += size
        return arr

    ids = take_array("<i8", n).astype(np.int64)
    points = take_array("<f8", n * d).astype(np.float64).reshape(n, d)
    tables = []
    for _ in range(l):
        n_buckets, total = take("<QQ")
        fps = take_array("<u8", n_buckets).astype(np.uint64)
        counts = take_array("<u4", n_buckets)
        if int(counts.sum()) != total:
            raise FormatError("bucket counts disagree with entry total")
        if n_buckets > 1 and not (fps[1:] > fps[:-1]).all():
            raise FormatError("bucket fingerprints not strictly increasing")
        positions = take_array("<u4", total).astype(np.int64)
        offsets = np.concatenate(([0], np.cumsum(counts.astype(np.int64))))
        tables.append(Buckets(fps=fps, offsets=offsets, positions=positions))
    if off != len(raw) - 8:
        raise FormatError("trailing bytes after payload")

    threshold = Threshold(value=t_value, t=int(t), epsilon=eps, p=p, sample_count=int(t_samples), seed=int(t_seed))
    lattice = LatticeParams(
        w=w, t=int(t), num_shifts=int(num_shifts), delta=delta, delta_fail=delta_fail, saturated=bool(saturated)
    )
    scheme = SchemeParams(
        c=c,
        p=p,
        r=r,
        w=w,
        t=int(t),
        epsilon=eps,
        delta_fail=delta_fail,
        threshold=threshold,
        lattice=lattice,
        profile=_PROFILE_NAME.get(int(profile_code), PROFILE_MAIN),
        knobs=Knobs(kappa_w=kappa_w, kappa_t=kappa_t, kappa_eps=kappa_eps),
        overrides=tuple(overrides),
    )
    params = IndexParams(k=int(k), l=int(l), seed=int(root_seed), max_candidates=int(max_candidates) or None)
    return LshIndex(scheme=scheme, params=params, points=points, ids=ids, tables=tables)


# -- radius ladder -------------------------------------------------------


@dataclass(frozen=True)
class LadderResult:
    rung: int
    rung_radius: float
    effective_c: float  # the ladder's approximation guarantee, c^2
    result: QueryResult


class RadiusLadder:
    """Indices at radii r_min * c^i, queried bottom-up.

    For a query whose true nearest distance lies in [r_min, r_max], the
    first rung that succeeds returns a point within c * (c * opt), so the
    overall approximation factor is at most c^2. Distances below r_min
    carry no multiplicative guarantee beyond c * r_min.
    """

    def __init__(self, indices: list[LshIndex], radii: list[float], c: float):
        self.indices = indices
        self.radii = radii
        self.c = c

    @classmethod
    def build(
        cls,
        points: np.ndarray,
        c: float,
        p: float,
        r_min: float,
        r_max: float,
        index_params: IndexParams,
        profile: str = PROFILE_MAIN,
        knobs: Knobs = Knobs(),
        overrides: dict[str, float] | None = None,
        derive_kwargs: dict | None = None,
    ) -> "RadiusLadder":
        if not (0 < r_min <= r_max):
            raise ContractViolation(f"need 0 < r_min <= r_max, got {r_min}, {r_max}")
        rungs = max(0, math.ceil(math.log(r_max / r_min) / math.log(c)))
        radii = [r_min * c**i for i in range(rungs + 1)]
        indices = []
        for i, radius in enumerate(radii):
            scheme = derive_params(
                c, p, profile=profile, knobs=knobs, overrides=overrides, r=radius, **(derive_kwargs or {})
            )
            params = IndexParams(
                k=index_params.k,
                l=index_params.l,
                seed=int(derive_rng(index_params.seed, 23, i).integers(0, 2**63 - 1)),
                max_candidates=index_params.max_candidates,
            )
            indices.append(build(points, scheme, params))
        return cls(indices, radii, c)

    def query(self, q: np.ndarray) -> LadderResult | None:
        for i, idx in enumerate(self.indices):
            res = idx.query(q)
            if res.answer is not None and res.in_contract:
                return LadderResult(rung=i, rung_radius=self.radii[i], effective_c=self.c**2, result=res)
        return None


def radius_ladder_query(
    points: np.ndarray,
    q: np.ndarray,
    c: float,
    p: float,
    r_min: float,
    r_max: float,
    index_params: IndexParams,
    **build_kwargs,
) -> LadderResult | None:
    """One-shot convenience: build the ladder, run one query."""
    ladder = RadiusLadder.build(points, c, p, r_min, r_max, index_params, **build_kwargs)
    return ladder.query(q)
