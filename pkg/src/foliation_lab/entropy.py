"""Entropy along the unstable hierarchy, estimated by three routes.

* volume: decay rate of the leaf volume of dynamical (Bowen) balls on a
  patch, with a closed form on affine patches of linear systems and a grid
  quadrature on graph patches;
* counting: growth rate of separated/spanning set cardinalities on the patch
  in the time-n Bowen metric of the ambient distance;
* partition: conditional entropy of a cube partition refined along the orbit,
  with the conditional measure represented by normalized leaf volume.

Each estimator fits least-squares slopes against n for a descending grid of
epsilons and extrapolates with a plateau rule: the estimate is the slope at
the smaller epsilon of the finest adjacent pair agreeing within 5%.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cocycle import LyapunovSpectrum, hierarchy_indices, lyapunov_spectrum
from .errors import (
    EpsilonTooLargeError,
    MeshTooCoarseError,
    NoPlateauError,
    PatchTooSmallError,
    ResolutionTooCoarseError,
)
from .leaf import (
    LeafPatch,
    affine_leaf_patch,
    grow_unstable_patch,
    leaf_volume,
    unit_ball_volume,
    window_volume,
)
from .seeding import spawn_rng
from .systems import TorusPoint, wrap, wrapped_delta

#: Candidate grids for counting must be at least this much finer than epsilon.
SPACING_FRACTION = 10.0

#: Counts above this fraction of the candidate pool carry a resolution caveat.
SATURATION_FRACTION = 0.8

#: Relative agreement between adjacent epsilon slopes that ends the plateau scan.
PLATEAU_TOL = 0.05


@dataclass(frozen=True, eq=False)
class BowenBallRecord:
    """Leaf volume of the set staying epsilon-close to the base orbit for n steps."""

    base: TorusPoint
    level: int
    n: int
    epsilon: float
    volume: float
    exact: bool


@dataclass(frozen=True, eq=False)
class GrowthCount:
    """Cardinality of a separated or spanning set in the time-n Bowen metric."""

    kind: str  # "separated" | "spanning"
    value: int
    n: int
    epsilon: float
    delta: float
    candidates: int
    resolution_caveat: bool


@dataclass(frozen=True, eq=False)
class EntropyEstimate:
    """Per-epsilon growth-rate fits and the plateau-extrapolated estimate."""

    level: int
    method: str
    per_epsilon: tuple[tuple[float, float, float], ...]  # (epsilon, slope, stderr)
    h_estimate: float
    stderr: float
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class PowerRuleResult:
    h_base: float
    h_power: float
    ratio: float


def _linfit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares slope, its standard error, and the residual RMS."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    xc = x - x.mean()
    denom = float(np.sum(xc**2))
    slope = float(np.sum(xc * y) / denom)
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (slope * x + intercept)
    rms = float(np.sqrt(np.mean(resid**2)))
    if n > 2:
        se = float(np.sqrt(np.sum(resid**2) / (n - 2) / denom))
    else:
        se = 0.0
    return slope, se, rms


def _parallel_map(fn, items, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    results = [None] * len(items)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = {pool.submit(fn, it): i for i, it in enumerate(items)}
        for fut, i in futures.items():
            results[i] = fut.result()
    return results


def _plateau(per_epsilon, tol: float) -> tuple[float, float, list[bool]]:
    """Finest adjacent pair of epsilon slopes agreeing within ``tol``."""
    slopes = [(e, s) for e, s, _ in per_epsilon]
    if len(per_epsilon) == 1:
        return per_epsilon[0][1], per_epsilon[0][2], [True]
    converged = [False] * len(per_epsilon)
    chosen = None
    for k in range(len(per_epsilon) - 1):
        a, b = per_epsilon[k][1], per_epsilon[k + 1][1]
        scale = max(abs(a), abs(b), 1e-12)
        if abs(a - b) <= tol * scale:
            converged[k] = converged[k + 1] = True
            chosen = k + 1
    if chosen is None:
        raise NoPlateauError(slopes, tol)
    return per_epsilon[chosen][1], per_epsilon[chosen][2], converged


# ---------------------------------------------------------------------------
# Bowen-ball volumes
# ---------------------------------------------------------------------------


def _fast_matrices(system, patch: LeafPatch, n_max: int) -> list[np.ndarray]:
    """Matrices of Df^k restricted to the patch's fast basis, k = 0..n_max-1."""
    a = system.matrix.astype(float)
    mats = [patch.F_basis.copy()]
    for _ in range(n_max - 1):
        mats.append(a @ mats[-1])
    return mats


def _exact_bowen_volumes(system, patch: LeafPatch, n_values, epsilons) -> np.ndarray:
    """Closed-form volumes on affine patches, shape (len(epsilons), len(n_values)).

    The surviving fast coordinates satisfy ``|Df^k w| < eps`` for every
    ``k < n``. With one fast dimension the sharpest constraint wins; in higher
    dimension the constraints are nested ellipsoids whenever every one-step
    restriction expands, and the final ellipsoid gives the volume.
    """
    n_max = max(n_values)
    mats = _fast_matrices(system, patch, n_max)
    k_dim = patch.f_dim
    if k_dim == 1:
        norms = np.array([float(np.linalg.norm(m[:, 0])) for m in mats])
        sharpest = np.maximum.accumulate(norms)
        return np.array(
            [[2.0 * eps / sharpest[n - 1] for n in n_values] for eps in epsilons]
        )
    a = system.matrix.astype(float)
    for m in mats[:-1]:
        q = np.linalg.qr(m)[0]
        if np.linalg.svd(a @ q, compute_uv=False)[-1] < 1.0 - 1e-9:
            raise ValueError(
                "fast restriction is not uniformly expanding; no closed form"
            )
    ball = unit_ball_volume(k_dim)
    det_growth = np.array(
        [float(np.prod(np.linalg.svd(mats[n - 1], compute_uv=False))) for n in n_values]
    )
    return np.array([[ball * eps**k_dim / g for g in det_growth] for eps in epsilons])


def _signed_image_arcs(system, patch: LeafPatch, n_max: int) -> np.ndarray:
    """Signed arclength of each node along the image polylines, shape (n_max, m).

    Row k holds intrinsic distances from the base image to every node image
    after k forward steps, negative on the left of the base node.
    """
    pts = patch.chart_points()
    m = pts.shape[0]
    center = patch.center_index
    arcs = np.empty((n_max, m))
    for k in range(n_max):
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        arcs[k] = cum - cum[center]
        if k + 1 < n_max:
            pts = system.forward_lift(pts)
    return arcs


def _quadrature_bowen_volumes(
    system, patch: LeafPatch, n_values, epsilons
) -> np.ndarray:
    """Grid-quadrature volumes for 1-dimensional patches (graph or forced affine)."""
    from .leaf import _flat_graph

    if patch.f_dim != 1:
        return _mesh_bowen_volumes(system, patch, n_values, epsilons)
    if patch.kind == "affine":
        patch = _flat_graph(patch.base, patch.level, patch.radius, patch.F_basis, 513)
    n_max = max(n_values)
    arcs = _signed_image_arcs(system, patch, n_max)
    grid = patch.grid
    out = np.empty((len(epsilons), len(n_values)))
    for i, eps in enumerate(epsilons):
        if arcs[0, 0] > -eps or arcs[0, -1] < eps:
            raise PatchTooSmallError(
                f"the leaf-metric {eps:g}-ball is clipped by the patch boundary"
            )
        lo, hi = -np.inf, np.inf
        lows = np.empty(n_max)
        highs = np.empty(n_max)
        for k in range(n_max):
            lo = max(lo, float(np.interp(-eps, arcs[k], grid)))
            hi = min(hi, float(np.interp(eps, arcs[k], grid)))
            lows[k], highs[k] = lo, hi
        out[i] = [window_volume(patch, lows[n - 1], highs[n - 1]) for n in n_values]
    return out


def _mesh_bowen_volumes(system, patch: LeafPatch, n_values, epsilons) -> np.ndarray:
    """Corner-fraction mesh quadrature for 2-dimensional affine patches."""
    if patch.kind != "affine" or patch.f_dim != 2:
        raise ValueError("mesh quadrature requires a 2-dimensional affine patch")
    n_max = max(n_values)
    mats = _fast_matrices(system, patch, n_max)
    res = 401
    axis = np.linspace(-patch.radius, patch.radius, res)
    step = axis[1] - axis[0]
    u, v = np.meshgrid(axis, axis, indexing="ij")
    w = np.stack([u.ravel(), v.ravel()], axis=1)
    norms = np.stack([np.linalg.norm(w @ m.T, axis=1) for m in mats])  # (n_max, res^2)
    worst = np.maximum.accumulate(norms, axis=0)
    out = np.empty((len(epsilons), len(n_values)))
    for i, eps in enumerate(epsilons):
        for j, n in enumerate(n_values):
            frac = (worst[n - 1] < eps).reshape(res, res).astype(float)
            corner = 0.25 * (
                frac[:-1, :-1] + frac[1:, :-1] + frac[:-1, 1:] + frac[1:, 1:]
            )
            out[i, j] = float(np.sum(corner) * step**2)
    return out


def bowen_volume_table(
    system, patch: LeafPatch, n_values, epsilons, *, force_quadrature: bool = False
) -> tuple[np.ndarray, bool]:
    """Volumes for a grid of (epsilon, n); returns (table, exact_flag)."""
    n_values = list(n_values)
    epsilons = list(epsilons)
    if min(n_values) < 1:
        raise ValueError("n must be >= 1")
    if max(epsilons) >= patch.radius:
        raise EpsilonTooLargeError(
            f"epsilon {max(epsilons):g} must be below the patch radius {patch.radius:g}"
        )
    exact = patch.kind == "affine" and system.is_linear and not force_quadrature
    if exact:
        return _exact_bowen_volumes(system, patch, n_values, epsilons), True
    return _quadrature_bowen_volumes(system, patch, n_values, epsilons), False


def bowen_ball_volume(
    system, patch: LeafPatch, n: int, epsilon: float, *, force_quadrature: bool = False
) -> BowenBallRecord:
    """Leaf volume of the n-step epsilon Bowen ball around the patch base."""
    table, exact = bowen_volume_table(
        system, patch, [n], [epsilon], force_quadrature=force_quadrature
    )
    return BowenBallRecord(
        base=patch.base,
        level=patch.level,
        n=n,
        epsilon=epsilon,
        volume=float(table[0, 0]),
        exact=exact,
    )


# ---------------------------------------------------------------------------
# Patch construction shared by the estimators
# ---------------------------------------------------------------------------


def _sample_patch(
    system, x: TorusPoint, level, radius, c_max, iterations, steps, spectrum, seed
) -> LeafPatch:
    if system.is_linear:
        return affine_leaf_patch(
            system, x, level, radius, spectrum=spectrum, steps=steps, seed=seed
        )
    return grow_unstable_patch(
        system,
        x,
        level,
        radius,
        c_max,
        iterations,
        spectrum=spectrum,
        steps=steps,
        seed=seed,
    )


def _estimate_from_slopes(level, method, epsilons, slope_rows, diag, plateau_tol):
    """Average per-sample slopes, apply the plateau rule, package the estimate."""
    per_eps = []
    for j, eps in enumerate(epsilons):
        slopes = np.array([row[j][0] for row in slope_rows])
        fit_ses = np.array([row[j][1] for row in slope_rows])
        mean = float(np.mean(slopes))
        if slopes.size > 1:
            spread = float(np.std(slopes, ddof=1) / math.sqrt(slopes.size))
        else:
            spread = 0.0
        se = max(spread, float(np.mean(fit_ses)))
        per_eps.append((float(eps), mean, se))
    h, se, converged = _plateau(per_eps, plateau_tol)
    diag = dict(diag)
    diag["converged"] = converged
    diag["sample_count"] = len(slope_rows)
    return EntropyEstimate(
        level=level,
        method=method,
        per_epsilon=tuple(per_eps),
        h_estimate=h,
        stderr=se,
        diagnostics=diag,
    )


def volume_entropy(
    system,
    level: int,
    x_samples: int = 8,
    epsilon_grid=(0.1, 0.05, 0.025),
    n_range=range(2, 13),
    radius: float = 0.3,
    c_max: float = 1.0,
    *,
    iterations: int = 30,
    steps: int = 1_000,
    seed: int = 0,
    jobs: int = 1,
    plateau_tol: float = PLATEAU_TOL,
    spectrum: LyapunovSpectrum | None = None,
    force_quadrature: bool = False,
) -> EntropyEstimate:
    """Entropy from the decay of normalized Bowen-ball volumes on leaf patches."""
    epsilons = [float(e) for e in epsilon_grid]
    n_values = [int(n) for n in n_range]
    if len(n_values) < 4:
        raise ValueError("n_range needs at least 4 points")
    if any(b >= a for a, b in zip(epsilons[:-1], epsilons[1:])):
        raise ValueError("epsilon grid must be strictly descending")
    if x_samples < 1:
        raise ValueError("x_samples must be >= 1")
    if max(epsilons) >= radius:
        raise EpsilonTooLargeError("every epsilon must be below the patch radius")
    if spectrum is None:
        spectrum = lyapunov_spectrum(system, seed=seed)
    hierarchy_indices(spectrum, level)

    ns = np.array(n_values, dtype=float)

    def one_sample(idx: int):
        rng = spawn_rng(seed, "volume-entropy", level, idx)
        x = TorusPoint(rng.random(system.dimension))
        patch = _sample_patch(
            system, x, level, radius, c_max, iterations, steps, spectrum, seed + idx
        )
        table, _ = bowen_volume_table(
            system, patch, n_values, epsilons, force_quadrature=force_quadrature
        )
        whole = leaf_volume(patch)
        row = []
        resid_row = []
        ys = np.empty((len(epsilons), len(n_values)))
        for j in range(len(epsilons)):
            y = -np.log(np.maximum(table[j], 1e-300) / whole)
            ys[j] = y
            slope, se, rms = _linfit(ns, y)
            row.append((slope, se))
            resid_row.append(rms)
        return row, resid_row, ys

    results = _parallel_map(one_sample, list(range(x_samples)), jobs)
    slope_rows = [r[0] for r in results]
    residuals = np.array([r[1] for r in results])
    mean_curves = np.mean([r[2] for r in results], axis=0)
    curves = [
        (epsilons[j], n_values[i], float(mean_curves[j, i]))
        for j in range(len(epsilons))
        for i in range(len(n_values))
    ]
    diag = {"fit_rms": residuals.mean(axis=0).tolist(), "n_range": n_values, "curves": curves}
    return _estimate_from_slopes(
        level, "volume", epsilons, slope_rows, diag, plateau_tol
    )


# ---------------------------------------------------------------------------
# Separated / spanning counting
# ---------------------------------------------------------------------------


#: Hard cap on counting candidates (cost guard for the greedy scans).
MAX_CANDIDATES = 4_000


def _candidate_points(
    patch: LeafPatch, spacing: float, *, phase: float = 0.0
) -> tuple[np.ndarray, bool]:
    """Leaf points spread uniformly in arclength, spacing at most ``spacing``.

    ``phase`` shifts the grid by a sub-spacing fraction so that averaging over
    samples washes out quantization of the greedy counts. Returns the points
    and a flag telling whether the candidate cap forced a coarser grid than
    requested (counts on a capped grid are resolution-limited).
    """
    from .leaf import _flat_graph

    if patch.kind == "affine":
        if patch.f_dim != 1:
            raise ResolutionTooCoarseError(
                "counting candidates require a 1-dimensional leaf"
            )
        patch = _flat_graph(patch.base, patch.level, patch.radius, patch.F_basis, 513)
    arc = patch.arclength_from_center()
    span = arc[-1] - arc[0]
    needed = int(np.ceil(span / spacing)) + 1
    count = min(needed, MAX_CANDIDATES)
    offset = (phase % 1.0) * span / count
    targets = np.minimum(np.linspace(arc[0], arc[-1], count) + offset, arc[-1])
    ws = np.interp(targets, arc, patch.grid)
    pts = (
        patch.base.coords[None, :]
        + ws[:, None] * patch.F_basis[:, 0][None, :]
        + np.column_stack(
            [np.interp(ws, patch.grid, patch.psi[:, j]) for j in range(patch.psi.shape[1])]
        )
        @ patch.E_basis.T
    )
    return pts, needed > MAX_CANDIDATES


def _iterated_images(system, pts: np.ndarray, n: int) -> np.ndarray:
    """Torus images of the candidates for k = 0..n-1, shape (n, m, d)."""
    imgs = np.empty((n,) + pts.shape)
    cur = wrap(pts)
    for k in range(n):
        imgs[k] = cur
        if k + 1 < n:
            cur = wrap(system.forward_lift(cur))
    return imgs


def _bowen_dist(imgs: np.ndarray, j: int, idx) -> np.ndarray:
    """Bowen distances of candidate ``j`` to candidates ``idx``."""
    delta = wrapped_delta(imgs[:, idx, :] - imgs[:, j, None, :])
    return np.max(np.sqrt(np.sum(delta**2, axis=-1)), axis=0)


def _greedy_separated(imgs: np.ndarray, epsilon: float) -> list[int]:
    """Maximal separated set by a lexicographic scan (deterministic).

    Distances are evaluated lazily in chunks against the kept set, so no
    m-by-m matrix is ever materialized.
    """
    m = imgs.shape[1]
    kept: list[int] = []
    chunk = 256
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        base = len(kept)
        against = np.array(kept[:base], dtype=int)
        if base:
            delta = wrapped_delta(
                imgs[:, lo:hi, None, :] - imgs[:, None, against, :]
            )
            block = np.max(np.sqrt(np.sum(delta**2, axis=-1)), axis=0)
        for j in range(lo, hi):
            ok = True
            if base and float(block[j - lo].min()) < epsilon:
                ok = False
            if ok and len(kept) > base:
                fresh = np.array(kept[base:], dtype=int)
                if float(_bowen_dist(imgs, j, fresh).min()) < epsilon:
                    ok = False
            if ok:
                kept.append(j)
    return kept


def _sweep_cover(imgs: np.ndarray, epsilon: float) -> int:
    """Cover by sweeping: cover the first gap with the furthest ball containing it.

    Candidates are ordered along the leaf, so taking the highest-index
    candidate still within epsilon of the first uncovered one extends the
    cover as far right as a single ball can. The result is a genuine cover.
    """
    m = imgs.shape[1]
    everyone = np.arange(m)
    covered = np.zeros(m, dtype=bool)
    count = 0
    while True:
        gaps = np.flatnonzero(~covered)
        if gaps.size == 0:
            return count
        pos = int(gaps[0])
        col = _bowen_dist(imgs, pos, everyone)
        ball = np.flatnonzero(col < epsilon)
        pick = int(ball[-1])
        covered |= _bowen_dist(imgs, pick, everyone) < epsilon
        covered[pos] = True  # pick reaches pos by construction; don't let an
        count += 1           # ulp of float asymmetry stall the sweep


def _prepare_counting(system, patch, n, epsilon, spacing):
    if epsilon >= patch.radius:
        raise EpsilonTooLargeError("epsilon must be below the patch radius")
    if n < 1:
        raise ValueError("n must be >= 1")
    if spacing is None:
        spacing = epsilon / SPACING_FRACTION
    if spacing > epsilon / SPACING_FRACTION + 1e-12:
        raise ResolutionTooCoarseError(
            f"candidate spacing {spacing:g} exceeds epsilon/{SPACING_FRACTION:g}"
        )
    pts, capped = _candidate_points(patch, spacing)
    return pts, _iterated_images(system, pts, n), capped


def separated_count(
    system, patch: LeafPatch, n: int, epsilon: float, *, spacing: float | None = None
) -> GrowthCount:
    """Cardinality of a greedy maximal (n, epsilon)-separated set on the patch."""
    pts, imgs, capped = _prepare_counting(system, patch, n, epsilon, spacing)
    value = len(_greedy_separated(imgs, epsilon))
    return GrowthCount(
        kind="separated",
        value=value,
        n=n,
        epsilon=epsilon,
        delta=patch.radius,
        candidates=pts.shape[0],
        resolution_caveat=capped or value > SATURATION_FRACTION * pts.shape[0],
    )


def spanning_count(
    system, patch: LeafPatch, n: int, epsilon: float, *, spacing: float | None = None
) -> GrowthCount:
    """Cardinality of the best (n, epsilon)-cover found on the candidate grid.

    Both a furthest-reach sweep cover and the maximal separated set (itself a
    cover, by maximality) are built; the smaller one is reported, so the
    classical sandwich against separated counts holds on the shared grid.
    """
    pts, imgs, capped = _prepare_counting(system, patch, n, epsilon, spacing)
    cover = _sweep_cover(imgs, epsilon)
    maximal = len(_greedy_separated(imgs, epsilon))
    value = min(cover, maximal)
    return GrowthCount(
        kind="spanning",
        value=value,
        n=n,
        epsilon=epsilon,
        delta=patch.radius,
        candidates=pts.shape[0],
        resolution_caveat=capped or value > SATURATION_FRACTION * pts.shape[0],
    )


def counting_entropy(
    system,
    level: int,
    x_samples: int = 4,
    epsilon_grid=(0.1, 0.05),
    n_range=range(1, 5),
    radius: float = 0.3,
    c_max: float = 1.0,
    *,
    kind: str = "separated",
    iterations: int = 30,
    steps: int = 1_000,
    seed: int = 0,
    jobs: int = 1,
    plateau_tol: float = PLATEAU_TOL,
    saturation_fraction: float = SATURATION_FRACTION,
    spacing_fraction: float = SPACING_FRACTION,
    spectrum: LyapunovSpectrum | None = None,
) -> EntropyEstimate:
    """Entropy from the growth of separated or spanning counts on leaf patches.

    Counts at a fixed candidate resolution saturate once the image spreads the
    grid beyond epsilon; saturated n are dropped from the fit (at least three
    clean points are required per epsilon).
    """
    if kind not in ("separated", "spanning"):
        raise ValueError("kind must be 'separated' or 'spanning'")
    epsilons = [float(e) for e in epsilon_grid]
    n_values = [int(n) for n in n_range]
    if len(n_values) < 4:
        raise ValueError("n_range needs at least 4 points")
    if max(epsilons) >= radius:
        raise EpsilonTooLargeError("every epsilon must be below the patch radius")
    if spectrum is None:
        spectrum = lyapunov_spectrum(system, seed=seed)
    hierarchy_indices(spectrum, level)

    # Candidate spacing must resolve the separation scale at each n, which
    # shrinks like the fastest exponent; otherwise greedy counts quantize.
    scale_rate = spectrum.exponents[0][0]

    def one_sample(idx: int):
        rng = spawn_rng(seed, "counting-entropy", level, idx)
        x = TorusPoint(rng.random(system.dimension))
        phase = float(rng.random())
        patch = _sample_patch(
            system, x, level, radius, c_max, iterations, steps, spectrum, seed + idx
        )
        row = []
        caveats = []
        count_rows = []
        for eps in epsilons:
            counts = np.empty(len(n_values))
            pools = np.empty(len(n_values))
            grid_capped = np.zeros(len(n_values), dtype=bool)
            for i, n in enumerate(n_values):
                spacing = (eps / spacing_fraction) * math.exp(-scale_rate * (n - 1))
                pts, grid_capped[i] = _candidate_points(patch, spacing, phase=phase)
                imgs = _iterated_images(system, pts, n)
                if kind == "separated":
                    counts[i] = len(_greedy_separated(imgs, eps))
                else:
                    counts[i] = min(
                        _sweep_cover(imgs, eps), len(_greedy_separated(imgs, eps))
                    )
                pools[i] = pts.shape[0]
            count_rows.append(counts)
            clean = (counts <= saturation_fraction * pools) & ~grid_capped
            if clean.sum() < 3:
                clean = np.zeros_like(clean, dtype=bool)
                clean[:3] = True  # keep the earliest points; flagged via caveat
            slope, se, _ = _linfit(
                np.array(n_values, dtype=float)[clean], np.log(counts[clean])
            )
            row.append((slope, se))
            caveats.append(bool((~clean).any()))
        return row, caveats, np.array(count_rows)

    results = _parallel_map(one_sample, list(range(x_samples)), jobs)
    slope_rows = [r[0] for r in results]
    caveat_any = [
        any(r[1][j] for r in results) for j in range(len(epsilons))
    ]
    mean_counts = np.mean([r[2] for r in results], axis=0)
    curves = [
        (epsilons[j], n_values[i], float(mean_counts[j, i]))
        for j in range(len(epsilons))
        for i in range(len(n_values))
    ]
    diag = {
        "saturation_caveat": caveat_any,
        "n_range": n_values,
        "kind": kind,
        "curves": curves,
    }
    return _estimate_from_slopes(level, kind, epsilons, slope_rows, diag, plateau_tol)


# ---------------------------------------------------------------------------
# Partition conditional entropy
# ---------------------------------------------------------------------------


def _clip_halfplane(poly: np.ndarray, normal: np.ndarray, offset: float) -> np.ndarray:
    """Keep the part of a convex polygon with ``normal . p <= offset``."""
    if poly.shape[0] == 0:
        return poly
    vals = poly @ normal - offset
    out = []
    m = poly.shape[0]
    for i in range(m):
        a, b = poly[i], poly[(i + 1) % m]
        da, db = vals[i], vals[(i + 1) % m]
        if da <= 0:
            out.append(a)
        if (da < 0) != (db < 0) and da != db:
            out.append(a + (da / (da - db)) * (b - a))
    return np.array(out) if out else np.empty((0, 2))


def _polygon_area(poly: np.ndarray) -> float:
    if poly.shape[0] < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _partition_fractions_affine(system, patch, mesh, n_values) -> np.ndarray:
    """Exact leaf fractions of the refined-partition cell for affine patches.

    Per step k and coordinate c the matching set is a slab in fast
    coordinates bounded by the walls of the base point's cube; the local cell
    is the intersection (an interval for 1-dimensional leaves, a clipped
    polygon for 2-dimensional ones).
    """
    n_max = max(n_values)
    mats = _fast_matrices(system, patch, n_max)
    base_orbit = np.empty((n_max, patch.dimension))
    x = patch.base.coords
    for k in range(n_max):
        base_orbit[k] = x
        x = wrap(system.forward_lift(x))
    if patch.f_dim == 1:
        lo, hi = -patch.radius, patch.radius
        fracs = np.empty(len(n_values))
        out_idx = 0
        for k in range(n_max):
            for c in range(patch.dimension):
                g = mats[k][c, 0]
                pos = base_orbit[k][c]
                wall_lo = math.floor(pos / mesh) * mesh - pos  # <= 0
                wall_hi = wall_lo + mesh  # > 0
                if abs(g) < 1e-15:
                    continue
                a, b = wall_lo / g, wall_hi / g
                if a > b:
                    a, b = b, a
                lo, hi = max(lo, a), min(hi, b)
            if (k + 1) in n_values:
                fracs[out_idx] = max(hi - lo, 0.0) / (2.0 * patch.radius)
                out_idx += 1
        return fracs
    if patch.f_dim == 2:
        angles = np.linspace(0.0, 2.0 * math.pi, 128, endpoint=False)
        poly = patch.radius * np.column_stack([np.cos(angles), np.sin(angles)])
        whole = _polygon_area(poly)
        fracs = np.empty(len(n_values))
        out_idx = 0
        for k in range(n_max):
            for c in range(patch.dimension):
                g = mats[k][c, :]
                if np.linalg.norm(g) < 1e-15:
                    continue
                pos = base_orbit[k][c]
                wall_lo = math.floor(pos / mesh) * mesh - pos
                wall_hi = wall_lo + mesh
                poly = _clip_halfplane(poly, g, wall_hi)
                poly = _clip_halfplane(poly, -g, -wall_lo)
            if (k + 1) in n_values:
                fracs[out_idx] = _polygon_area(poly) / whole
                out_idx += 1
        return fracs
    raise ValueError("partition fractions support fast dimension 1 or 2")


def _partition_fractions_graph(system, patch, mesh, n_values) -> np.ndarray:
    """Node-sampled leaf fractions of the refined-partition cell for graph patches."""
    n_max = max(n_values)
    weights = patch.node_weights()
    whole = float(np.sum(weights))
    pts = wrap(patch.chart_points())
    x = patch.base.coords
    alive = np.ones(pts.shape[0], dtype=bool)
    fracs = np.empty(len(n_values))
    out_idx = 0
    for k in range(n_max):
        base_cell = np.floor(x / mesh)
        cells = np.floor(pts / mesh)
        alive &= np.all(cells == base_cell[None, :], axis=1)
        if (k + 1) in n_values:
            fracs[out_idx] = float(np.sum(weights[alive])) / whole
            out_idx += 1
        pts = wrap(system.forward_lift(pts))
        x = wrap(system.forward_lift(x))
    return fracs


def partition_conditional_entropy(
    system,
    level: int,
    mesh: float,
    n_range=range(2, 13),
    x_samples: int = 8,
    radius: float = 0.3,
    c_max: float = 1.0,
    *,
    iterations: int = 30,
    steps: int = 1_000,
    seed: int = 0,
    jobs: int = 1,
    epsilon_scale: float | None = None,
    spectrum: LyapunovSpectrum | None = None,
) -> EntropyEstimate:
    """Entropy from the conditional entropy of a cube partition along orbits.

    The torus is cut into cubes of side ``mesh`` (which must divide 1); the
    conditional measure on the patch is normalized leaf volume. For each
    sample the fraction of the patch sharing the base point's cube itinerary
    up to time n is measured and ``-log`` of it is fit against n.
    """
    if not 0 < mesh <= 0.5:
        raise ValueError("mesh must lie in (0, 0.5]")
    if abs(round(1.0 / mesh) * mesh - 1.0) > 1e-9:
        raise ValueError("mesh must divide 1 so cubes tile the torus")
    if epsilon_scale is not None and mesh > epsilon_scale:
        raise MeshTooCoarseError(
            f"mesh {mesh:g} is coarser than the epsilon scale {epsilon_scale:g}"
        )
    n_values = [int(n) for n in n_range]
    if len(n_values) < 2:
        raise ValueError("n_range needs at least 2 points")
    if spectrum is None:
        spectrum = lyapunov_spectrum(system, seed=seed)
    hierarchy_indices(spectrum, level)

    ns = np.array(n_values, dtype=float)

    def one_sample(idx: int):
        rng = spawn_rng(seed, "partition-entropy", level, idx)
        x = TorusPoint(rng.random(system.dimension))
        patch = _sample_patch(
            system, x, level, radius, c_max, iterations, steps, spectrum, seed + idx
        )
        if patch.kind == "affine":
            fracs = _partition_fractions_affine(system, patch, mesh, n_values)
        else:
            fracs = _partition_fractions_graph(system, patch, mesh, n_values)
        y = -np.log(np.maximum(fracs, 1e-300))
        slope, se, rms = _linfit(ns, y)
        return [(slope, se)], rms, y

    results = _parallel_map(one_sample, list(range(x_samples)), jobs)
    slope_rows = [r[0] for r in results]
    mean_y = np.mean([r[2] for r in results], axis=0)
    diag = {
        "fit_rms": [float(np.mean([r[1] for r in results]))],
        "n_range": n_values,
        "mesh": mesh,
        "curves": [(mesh, n_values[i], float(mean_y[i])) for i in range(len(n_values))],
    }
    return _estimate_from_slopes(
        level, "partition", [mesh], slope_rows, diag, PLATEAU_TOL
    )


# ---------------------------------------------------------------------------
# Power rule
# ---------------------------------------------------------------------------


def power_rule_check(system, level: int, m: int, **estimator_params) -> PowerRuleResult:
    """Compare the volume estimate for the m-th iterate against m times the base."""
    from .systems import power_map

    if m < 1:
        raise ValueError("m must be >= 1")
    h_base = volume_entropy(system, level, **estimator_params).h_estimate
    if m == 1:
        return PowerRuleResult(h_base=h_base, h_power=h_base, ratio=1.0)
    iterated = power_map(system, m)
    h_power = volume_entropy(iterated, level, **estimator_params).h_estimate
    return PowerRuleResult(h_base=h_base, h_power=h_power, ratio=h_power / h_base)
