"""Runnable property suites: every module invariant as a pass/fail check.

quick: trimmed trial counts, target well under a minute.
full: acceptance-scale budgets including the 1e7-sample moment/tail oracles.

Each suite returns (passed, detail) where detail is a flat key=value string,
so the CLI output is grep-able.
"""

from __future__ import annotations

import itertools
import os
import tempfile
import time
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import collisions as clab
from .datasets import generate_planted
from .geometry import (
    LpSpace,
    ball_volume_ratio,
    convexity_residual,
    lp_norm,
    random_lp_direction,
    smoothness_residual,
)
from .index import IndexParams, build, load_index, save_index
from .lattice import (
    LatticeParams,
    compute_num_shifts,
    covering_fraction,
    hash_batch,
    locate,
    make_lattices,
)
from .scheme import PROFILE_MAIN, Knobs, derive_params, eval_hash, sample_hash
from .stable import (
    StableParams,
    compute_threshold,
    fit_tail_constant,
    sample_stable,
    tail_probability_bounds,
    truncated_moment,
    validate_concentration,
)
from .util import binomial_se, derive_rng, two_proportion_z


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _residual_suite(level: str, seed: int) -> tuple[bool, str]:
    pairs = 100_000 if level == "full" else 20_000
    dims = (2, 10, 100) if level == "full" else (2, 10)
    worst_s = np.inf
    worst_c = np.inf
    for p in (1.25, 1.5, 1.75, 2.0):
        for d in dims:
            space = LpSpace(p, d)
            rng = derive_rng(seed, 101, int(p * 100), d)
            x = rng.normal(size=(pairs, d))
            y = rng.normal(size=(pairs, d))
            worst_s = min(worst_s, float(np.min(smoothness_residual(x, y, space))))
            worst_c = min(worst_c, float(np.min(convexity_residual(x, y, space))))
    ok = worst_s >= -1e-9 and worst_c >= -1e-9
    return ok, f"min_smoothness={worst_s:.3e} min_convexity={worst_c:.3e} pairs={pairs}"


def _norm_suite(level: str, seed: int) -> tuple[bool, str]:
    rng = derive_rng(seed, 102)
    n = 20_000 if level == "full" else 5_000
    worst_tri = -np.inf
    worst_hom = 0.0
    for p in (1.25, 1.5, 2.0):
        space = LpSpace(p, 8)
        x = rng.normal(size=(n, 8))
        y = rng.normal(size=(n, 8))
        tri = lp_norm(x + y, space) - lp_norm(x, space) - lp_norm(y, space)
        worst_tri = max(worst_tri, float(np.max(tri)))
        alpha = rng.uniform(-3, 3, size=n)
        hom = np.abs(lp_norm(alpha[:, None] * x, space) - np.abs(alpha) * lp_norm(x, space))
        worst_hom = max(worst_hom, float(np.max(hom / np.maximum(lp_norm(x, space), 1e-300))))
    vol_ok = all(
        abs(ball_volume_ratio(a, t) * ball_volume_ratio(1.0 / a, t) - 1.0) < 1e-12
        for a in (0.5, 1.0, 2.0, 3.7)
        for t in (1, 3, 7)
    )
    ok = worst_tri <= 1e-12 and worst_hom <= 1e-12 and vol_ok
    return ok, f"max_triangle_violation={worst_tri:.3e} max_homogeneity_err={worst_hom:.3e} volume_identity={int(vol_ok)}"


def _stable_law_suite(level: str, seed: int) -> tuple[bool, str]:
    draws = 100_000 if level == "full" else 20_000
    ps = (1.2, 1.5, 1.8) if level == "full" else (1.5,)
    d = 40
    min_pvalue = 1.0
    for p in ps:
        rng = derive_rng(seed, 103, int(p * 100))
        x = rng.normal(size=d)
        params = StableParams(p)
        a = sample_stable(params, rng, size=(draws, d))
        proj = a @ x
        ref = float(lp_norm(x, LpSpace(p, d))) * sample_stable(params, rng, size=draws)
        min_pvalue = min(min_pvalue, float(stats.ks_2samp(proj, ref).pvalue))
    var_draws = 1_000_000 if level == "full" else 200_000
    rng = derive_rng(seed, 103, 200)
    v = float(np.var(sample_stable(StableParams(2.0), rng, size=var_draws)))
    var_tol = 0.01 if level == "full" else 0.03
    ok = min_pvalue >= 0.01 and abs(v - 2.0) <= var_tol * 2.0
    return ok, f"min_ks_pvalue={min_pvalue:.4f} gauss_variance={v:.4f} draws={draws}"


def _sampler_determinism_suite(level: str, seed: int) -> tuple[bool, str]:
    params = StableParams(1.5)
    a = sample_stable(params, derive_rng(seed, 104), size=1000)
    b = sample_stable(params, derive_rng(seed, 104), size=1000)
    ok = bool(np.array_equal(a, b))
    return ok, f"identical_streams={int(ok)}"


def _moment_monotone_suite(level: str, seed: int) -> tuple[bool, str]:
    params = StableParams(1.5)
    n = 200_000 if level == "quick" else 1_000_000
    values = []
    for m in (1.0, 2.0, 4.0, 8.0, 16.0):
        est = truncated_moment(params, m, order=1, n_samples=n, rng=derive_rng(seed, 105))
        values.append(est.value)
    diffs = np.diff(values)
    ok = bool((diffs >= 0).all())
    return ok, "moments=" + ",".join(f"{v:.4f}" for v in values)


def _tail_suite(level: str, seed: int) -> tuple[bool, str]:
    params = StableParams(1.5)
    n = 10_000_000 if level == "full" else 1_000_000
    fit_range = (10.0, 100.0) if level == "full" else (10.0, 30.0)
    tol = 0.15 if level == "full" else 0.25
    fit = fit_tail_constant(params, n_samples=n, rng=derive_rng(seed, 106), fit_range=fit_range)
    inside = True
    for m, phat in zip(fit.grid_m, fit.tail_prob):
        lo, hi = tail_probability_bounds(m, params, fit.constants)
        if not (lo <= phat <= hi):
            inside = False
    ok = (not fit.constants.degenerate) and fit.flatness <= tol and inside
    return ok, (
        f"flatness={fit.flatness:.4f} a_hat={fit.constants.a_hat:.4f} "
        f"b_hat={fit.constants.b_hat:.4f} sandwich_ok={int(inside)} n={n}"
    )


def _threshold_cache_suite(level: str, seed: int) -> tuple[bool, str]:
    params = StableParams(1.5)
    n = 200_000
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "thresholds.jsonl")
        from .stable import ThresholdCache

        cache = ThresholdCache(path)
        t1 = compute_threshold(8, 0.3, params, n_samples=n, seed=seed, cache=cache)
        cache2 = ThresholdCache(path)
        t2 = compute_threshold(8, 0.3, params, n_samples=n, seed=seed, cache=cache2)
        ok = t1.value == t2.value and t1.value > 0
    detail = f"T={t1.value:.6f} cache_replay={int(ok)}"
    if level == "full":
        # quadrature value for T(t=64, eps=0.25) from scripts/pin_oracles.py;
        # 0.1 is ~6 sigma at 10^7 samples
        t_pin = compute_threshold(64, 0.25, params, n_samples=10_000_000, seed=0)
        ok = ok and abs(t_pin.value - 49.983866) <= 0.1
        detail += f" T64_oracle_delta={t_pin.value - 49.983866:+.4f}"
    return ok, detail


def _covering_suite(level: str, seed: int) -> tuple[bool, str]:
    p = 1.5
    trials = 10_000 if level == "full" else 2_000
    count = compute_num_shifts(2, p, 4.0, 0.05)
    params = LatticeParams(w=1.0, t=2, num_shifts=count.u, saturated=count.saturated)
    lattices = make_lattices(params, seed=seed)
    frac = covering_fraction(lattices, LpSpace(p, 2), trials, derive_rng(seed, 107))
    uncovered = 1.0 - frac
    bound = 0.05 + 3.0 * binomial_se(int(0.05 * trials), trials)
    one = LatticeParams(w=1.0, t=1, num_shifts=1)
    frac1 = covering_fraction(make_lattices(one, seed=seed), LpSpace(p, 1), trials, derive_rng(seed, 108))
    se1 = binomial_se(int(round(frac1 * trials)), trials)
    ok = uncovered <= bound and abs(frac1 - 0.5) <= 3.0 * se1
    return ok, f"U={count.u} uncovered={uncovered:.5f} bound={bound:.5f} single_shift={frac1:.4f}"


def _covering_monotone_suite(level: str, seed: int) -> tuple[bool, str]:
    p = 1.5
    trials = 4_000 if level == "full" else 1_500
    space = LpSpace(p, 2)
    rng = derive_rng(seed, 109)
    pts = rng.uniform(0.0, 4.0, size=(trials, 2))
    fracs = []
    for u in (1, 4, 16, 64):
        params = LatticeParams(w=1.0, t=2, num_shifts=u)
        lattices = make_lattices(params, seed=seed)
        fracs.append(covering_fraction(lattices, space, trials, rng, points=pts))
    diffs = np.diff(fracs)
    ok = bool((diffs >= 0).all())
    return ok, "fractions=" + ",".join(f"{f:.4f}" for f in fracs)


def _disjointness_suite(level: str, seed: int) -> tuple[bool, str]:
    p = 1.5
    n = 10_000 if level == "full" else 2_000
    ts = (1, 2, 3, 4) if level == "full" else (1, 2, 3)
    w = 1.0
    spacing = 4.0 * w
    violations = 0
    for t in ts:
        rng = derive_rng(seed, 110, t)
        pts = rng.uniform(-20.0, 20.0, size=(n, t))
        shift = rng.uniform(0.0, spacing, size=t)
        base = np.rint((pts - shift[None, :]) / spacing)
        offsets = np.array(list(itertools.product((-1, 0, 1), repeat=t)), dtype=np.float64)
        centers = (base[:, None, :] + offsets[None, :, :]) * spacing + shift[None, None, :]
        inside = (np.abs(pts[:, None, :] - centers) ** p).sum(axis=2) <= w**p
        counts = inside.sum(axis=1)
        violations += int((counts > 1).sum())
    ok = violations == 0
    return ok, f"violations={violations} points={n} ts={','.join(map(str, ts))}"


def _locate_suite(level: str, seed: int) -> tuple[bool, str]:
    p = 1.5
    n = 10_000 if level == "full" else 2_000
    t = 3
    params = LatticeParams(w=1.3, t=t, num_shifts=5)
    lattices = make_lattices(params, seed=seed)
    space = LpSpace(p, t)
    rng = derive_rng(seed, 111)
    pts = rng.uniform(-10.0, 10.0, size=(n, t))
    shifts = lattices.shifts
    spacing = params.spacing
    offsets = np.array(list(itertools.product((-1, 0, 1), repeat=t)), dtype=np.float64)
    mismatches = 0
    for u in range(1, params.num_shifts + 1):
        s = shifts[u - 1]
        for i in range(n):
            got = locate(pts[i], u, lattices, space)
            cand = np.rint((pts[i] - s) / spacing) + offsets
            centers = cand * spacing + s
            inside = (np.abs(pts[i][None, :] - centers) ** p).sum(axis=1) <= params.w**p
            hits = cand[inside]
            want = None if hits.shape[0] == 0 else hits[0].astype(np.int64)
            if (got is None) != (want is None):
                mismatches += 1
            elif got is not None and not np.array_equal(got, np.asarray(want)):
                mismatches += 1
    ok = mismatches == 0
    return ok, f"mismatches={mismatches} checked={n * params.num_shifts}"


def _equivariance_suite(level: str, seed: int) -> tuple[bool, str]:
    p = 1.5
    t = 3
    n = 5_000 if level == "full" else 1_500
    params = LatticeParams(w=1.0, t=t, num_shifts=40)
    lattices = make_lattices(params, seed=seed)
    space = LpSpace(p, t)
    rng = derive_rng(seed, 112)
    pts = rng.uniform(-8.0, 8.0, size=(n, t))
    k = rng.integers(-3, 4, size=(n, t)).astype(np.float64)
    u0, a0, _ = hash_batch(pts, lattices, space)
    u1, a1, _ = hash_batch(pts + params.spacing * k, lattices, space)
    same_u = u0 == u1
    hashed = u0 > 0
    coords_ok = (a1[hashed] == a0[hashed] + k[hashed].astype(np.int64)).all()
    ok = bool(same_u.all() and coords_ok)
    return ok, f"u_equal={int(same_u.all())} coords_shifted={int(bool(coords_ok))} n={n}"


def _concentration_suite(level: str, seed: int) -> tuple[bool, str]:
    p = 1.5
    params = StableParams(p)
    eps = float(np.log(np.log(64.0)) / np.log(64.0))
    n_thresh = 2_000_000 if level == "full" else 400_000
    trials_high = 1_000 if level == "full" else 300
    trials_mono = 100_000 if level == "full" else 20_000
    thr = compute_threshold(64, eps, params, n_samples=n_thresh, seed=seed)
    rep = validate_concentration(64, eps, params, thr, trials=trials_high, rng=derive_rng(seed, 113))
    bound = 0.5 + 3.0 * binomial_se(int(0.5 * trials_high), trials_high)
    lows = []
    for t in (16, 64, 256):
        tt = compute_threshold(t, eps, params, n_samples=n_thresh, seed=seed)
        r = validate_concentration(t, eps, params, tt, trials=trials_mono, rng=derive_rng(seed, 114, t))
        lows.append(r.rate_low)
    mono = bool((np.diff(lows) <= 1e-12).all())
    ok = rep.rate_high <= bound and mono
    return ok, (
        f"rate_high={rep.rate_high:.4f} bound={bound:.4f} "
        f"low_rates={','.join(f'{v:.4f}' for v in lows)} monotone={int(mono)}"
    )


def _collision_identity_suite(level: str, seed: int) -> tuple[bool, str]:
    p = 1.5
    trials = 40_000 if level == "full" else 15_000
    scheme = clab.tuned_scheme(c=2.0, p=p, threshold_samples=200_000)
    zero = clab.estimate_collision(scheme, 16, 0.0, trials=200, rng=derive_rng(seed, 115))
    space1 = LpSpace(p, 1)
    w = 1.0
    worst_z = 0.0
    for dist in (0.2, 0.7, 1.2, 1.8):
        est = clab.geometric_collision(np.zeros(1), np.array([dist]), w, space1, trials, derive_rng(seed, 116, int(dist * 10)))
        exact = (2.0 * w - dist) / (2.0 * w + dist)
        z = abs(est.value - exact) / max(est.std_error, 1e-12)
        worst_z = max(worst_z, z)
    worst_pair_z = 0.0
    for t in (1, 2, 3):
        space = LpSpace(p, t)
        rng = derive_rng(seed, 117, t)
        x = rng.normal(size=t)
        y = x + 0.9 * w * np.asarray(random_lp_direction(space, rng))
        qf = clab.geometric_collision(x, y, w, space, trials, derive_rng(seed, 118, t), method="q_form")
        un = clab.geometric_collision(x, y, w, space, trials, derive_rng(seed, 119, t), method="union")
        z = abs(qf.value - un.value) / max(np.hypot(qf.std_error, un.std_error), 1e-12)
        worst_pair_z = max(worst_pair_z, z)
    ok = zero.p_hat == 1.0 and worst_z <= 3.0 and worst_pair_z <= 3.0
    return ok, f"p_at_zero={zero.p_hat:.1f} closed_form_maxz={worst_z:.2f} estimator_maxz={worst_pair_z:.2f}"


def _scheme_determinism_suite(level: str, seed: int) -> tuple[bool, str]:
    scheme = derive_params(3.0, 1.5, profile=PROFILE_MAIN, knobs=Knobs(), threshold_samples=200_000, threshold_seed=seed)
    pinned = (
        abs(scheme.w - 3.0 * np.log(3.0)) < 1e-12
        and scheme.t == 6
        and abs(scheme.epsilon - np.log(np.log(6.0)) / np.log(6.0)) < 1e-12
    )
    h1 = sample_hash(scheme, 24, seed=seed)
    h2 = sample_hash(scheme, 24, seed=seed)
    x = derive_rng(seed, 120).normal(size=24)
    same = np.array_equal(h1.projection, h2.projection) and eval_hash(h1, x) == eval_hash(h2, x)
    ok = pinned and bool(same)
    return ok, f"pinned_params={int(pinned)} resample_identical={int(bool(same))} t={scheme.t} U={scheme.num_shifts}"


def _sensitivity_suite(level: str, seed: int) -> tuple[bool, str]:
    p = 1.5
    trials = 6_000 if level == "full" else 2_500
    worst_z = np.inf
    for c in (2.0, 5.0):
        scheme = clab.tuned_scheme(c=c, p=p, threshold_samples=200_000)
        near = clab.estimate_collision(scheme, 32, scheme.r, trials, derive_rng(seed, 121, int(c)))
        far = clab.estimate_collision(scheme, 32, c * scheme.r, trials, derive_rng(seed, 122, int(c)))
        z = two_proportion_z(near.collisions, near.trials, far.collisions, far.trials)
        worst_z = min(worst_z, z)
    ok = worst_z >= 2.326
    return ok, f"min_z={worst_z:.2f} need=2.33 trials={trials}"


def _index_roundtrip_suite(level: str, seed: int) -> tuple[bool, str]:
    p = 1.5
    inst = generate_planted(n=300, d=16, planted_count=5, p=p, r=1.0, c=2.0, seed=seed)
    scheme = clab.tuned_scheme(c=2.0, p=p, threshold_samples=200_000)
    params = IndexParams(k=3, l=6, seed=seed + 1)
    idx = build(inst.points, scheme, params)
    idx2 = build(inst.points, scheme, params)
    with tempfile.TemporaryDirectory() as tmp:
        p1 = os.path.join(tmp, "a.idx")
        p2 = os.path.join(tmp, "b.idx")
        save_index(idx, p1)
        save_index(idx2, p2)
        with open(p1, "rb") as fh:
            b1 = fh.read()
        with open(p2, "rb") as fh:
            b2 = fh.read()
        loaded = load_index(p1)
    same = all(idx.query(q) == loaded.query(q) for q in inst.queries)
    ok = b1 == b2 and same
    return ok, f"rebuild_identical={int(b1 == b2)} roundtrip_identical={int(same)} bytes={len(b1)}"


_SUITES = [
    ("geometry_residuals", _residual_suite),
    ("norm_properties", _norm_suite),
    ("stable_law", _stable_law_suite),
    ("sampler_determinism", _sampler_determinism_suite),
    ("truncated_moment_monotone", _moment_monotone_suite),
    ("tail_bounds", _tail_suite),
    ("threshold_cache", _threshold_cache_suite),
    ("covering", _covering_suite),
    ("covering_monotone", _covering_monotone_suite),
    ("disjointness", _disjointness_suite),
    ("locate_bruteforce", _locate_suite),
    ("translation_equivariance", _equivariance_suite),
    ("concentration", _concentration_suite),
    ("collision_identities", _collision_identity_suite),
    ("scheme_determinism", _scheme_determinism_suite),
    ("sensitivity", _sensitivity_suite),
    ("index_roundtrip", _index_roundtrip_suite),
]


def run_checks(level: str = "quick", seed: int = 0) -> list[CheckResult]:
    if level not in ("quick", "full"):
        raise ValueError(f"level must be quick or full, got {level!r}")
    results = []
    for name, fn in _SUITES:
        start = time.perf_counter()
        try:
            passed, detail = fn(level, seed)
        except Exception as exc:  # a crashing suite is a failing suite
            passed, detail = False, f"exception={type(exc).__name__}:{exc}"
        results.append(CheckResult(name, passed, detail, time.perf_counter() - start))
    return results


def format_report(results: list[CheckResult]) -> str:
    lines = [
        f"{'PASS' if r.passed else 'FAIL'} {r.name} [{r.seconds:.1f}s] {r.detail}" for r in results
    ]
    n_pass = sum(r.passed for r in results)
    lines.append(f"{'ok' if n_pass == len(results) else 'FAILED'} {n_pass}/{len(results)} suites")
    return "\n".join(lines)
