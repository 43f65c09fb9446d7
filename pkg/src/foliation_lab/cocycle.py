"""Derivative cocycle: Lyapunov spectrum, hierarchy indices, fast/slow splittings.

The spectrum comes from the standard QR-reorthonormalized cocycle iteration
(one QR per step; exponents up to ~2 per step make sparser renormalization
ill-conditioned). Raw per-direction exponents are merged into distinct
exponents with multiplicities by gap clustering.

Fast subspaces are obtained by pushing a random orthonormal frame forward
along the backward orbit ``f^{-steps}(x) -> x``; slow subspaces symmetrically
with the inverse map along the forward orbit. For linear systems both
converge to exact eigenspace sums at machine precision.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    ClusterAmbiguityWarning,
    DegenerateCocycleError,
    LevelOutOfRangeError,
    NonConvergentError,
    SingularMatrixError,
)
from .seeding import spawn_rng
from .systems import TorusPoint, random_point, wrap

#: R-diagonal entries below this trigger DegenerateCocycleError.
UNDERFLOW_FLOOR = 1e-292

#: Frame-transport convergence tolerance (max principal angle over the tail).
FRAME_ANGLE_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class LyapunovSpectrum:
    """Distinct Lyapunov exponents with multiplicities, sorted decreasing.

    ``exponents`` is a tuple of ``(value, multiplicity)`` pairs;
    ``min_gap`` is the smallest gap between adjacent distinct exponents
    (``inf`` when there is a single distinct exponent);
    ``positive_count`` counts the distinct positive exponents, i.e. the depth
    of the unstable hierarchy.
    """

    exponents: tuple[tuple[float, int], ...]
    min_gap: float
    positive_count: int
    dimension: int

    def __post_init__(self):
        values = [v for v, _ in self.exponents]
        mults = [m for _, m in self.exponents]
        if any(m < 1 for m in mults):
            raise ValueError("multiplicities must be positive")
        if sum(mults) != self.dimension:
            raise ValueError("multiplicities must sum to the dimension")
        gaps = [values[i] - values[i + 1] for i in range(len(values) - 1)]
        if any(g <= 0 for g in gaps):
            raise ValueError("exponents must be strictly decreasing")
        if gaps and min(gaps) < self.min_gap - 1e-9:
            raise ValueError("min_gap exceeds an actual adjacent gap")
        if self.positive_count != sum(1 for v in values if v > 0):
            raise ValueError("positive_count does not match the exponent list")

    @property
    def distinct(self) -> tuple[float, ...]:
        return tuple(v for v, _ in self.exponents)

    def raw(self) -> np.ndarray:
        """Per-direction exponents (each value repeated by multiplicity)."""
        return np.concatenate([[v] * m for v, m in self.exponents])

    def unstable_sum(self, level: int) -> float:
        """Sum of ``multiplicity * exponent`` over the fast groups of ``level``."""
        groups, _ = hierarchy_indices(self, level)
        return float(sum(v * m for v, m in self.exponents[:groups]))


class HierarchyIndices(NamedTuple):
    fast_groups: int  # number of exponent groups inside the fast bundle
    fast_dim: int  # dimension of the fast bundle


def hierarchy_indices(spectrum: LyapunovSpectrum, level: int) -> HierarchyIndices:
    """Indices of the fast bundle for hierarchy ``level``.

    Level 1 is the whole unstable bundle; level ``positive_count`` keeps only
    the single fastest group. Raises :class:`LevelOutOfRangeError` when the
    level exceeds the hierarchy depth (or there is no unstable direction).
    """
    u = spectrum.positive_count
    if u == 0:
        raise LevelOutOfRangeError("spectrum has no positive exponents")
    if not 1 <= level <= u:
        raise LevelOutOfRangeError(f"level {level} outside [1, {u}]")
    groups = u - level + 1
    dim = sum(m for _, m in spectrum.exponents[:groups])
    return HierarchyIndices(groups, dim)


@dataclass(frozen=True, eq=False)
class SplittingAtPoint:
    """Fast/slow splitting ``F(x) (+) E(x)`` of the tangent space at a point."""

    base: TorusPoint
    level: int
    F_basis: np.ndarray  # (d, fast_dim), orthonormal columns
    E_basis: np.ndarray  # (d, d - fast_dim), orthonormal columns

    def __post_init__(self):
        for name, b in (("F_basis", self.F_basis), ("E_basis", self.E_basis)):
            gram = b.T @ b
            if np.max(np.abs(gram - np.eye(b.shape[1]))) > 1e-10:
                raise ValueError(f"{name} columns are not orthonormal")
        joined = np.hstack([self.F_basis, self.E_basis])
        if joined.shape[0] != joined.shape[1]:
            raise ValueError("bases do not fill the tangent space")
        smallest = np.linalg.svd(joined, compute_uv=False)[-1]
        if smallest < 1e-8:
            raise ValueError("fast and slow bases are nearly degenerate")

    @property
    def fast_dim(self) -> int:
        return self.F_basis.shape[1]


def minimal_norm(matrix: np.ndarray) -> float:
    """Smallest singular value (the reciprocal norm of the inverse)."""
    s = np.linalg.svd(np.asarray(matrix, dtype=float), compute_uv=False)
    smallest = float(s[-1])
    if smallest < 1e-14:
        raise SingularMatrixError(f"smallest singular value {smallest:g} underflows")
    return smallest


def principal_angle(u: np.ndarray, v: np.ndarray) -> float:
    """Largest principal angle between the column spans of two orthonormal bases.

    Uses the sine formulation, which stays accurate for nearly parallel
    subspaces (the arccos route bottoms out near 1e-8).
    """
    residual = v - u @ (u.T @ v)
    s = np.linalg.svd(residual, compute_uv=False)[0]
    return float(np.arcsin(np.clip(s, 0.0, 1.0)))


def _cluster_exponents(raw: np.ndarray, cluster_gap: float):
    """Merge descending raw exponents into (value, multiplicity) groups."""
    groups: list[list[float]] = [[raw[0]]]
    for prev, cur in zip(raw[:-1], raw[1:]):
        gap = prev - cur
        if abs(gap - cluster_gap) <= 0.1 * cluster_gap:
            warnings.warn(
                f"raw exponent gap {gap:.4g} lies within 10% of the clustering "
                f"threshold {cluster_gap:.4g}",
                ClusterAmbiguityWarning,
                stacklevel=3,
            )
        if gap <= cluster_gap:
            groups[-1].append(cur)
        else:
            groups.append([cur])
    exponents = tuple((float(np.mean(g)), len(g)) for g in groups)
    values = [v for v, _ in exponents]
    if len(values) > 1:
        min_gap = float(min(a - b for a, b in zip(values[:-1], values[1:])))
    else:
        min_gap = float("inf")
    return exponents, min_gap


def lyapunov_spectrum(
    system,
    steps: int = 10_000,
    transient: int = 1_000,
    seed: int = 0,
    cluster_gap: float = 0.05,
) -> LyapunovSpectrum:
    """Lyapunov spectrum by QR-reorthonormalized cocycle iteration.

    Starts from a seed-random point and discards ``transient`` steps; the
    tail of the transient also pushes the frame without accumulating, so the
    averaged ``log |diag R|`` is free of the frame-alignment burn-in (exact
    to machine precision for constant cocycles). Raw exponents are clustered
    into distinct groups by ``cluster_gap``.
    """
    if steps < 1_000:
        raise ValueError("steps must be >= 1000")
    if cluster_gap <= 0:
        raise ValueError("cluster_gap must be positive")
    d = system.dimension
    rng = spawn_rng(seed, "spectrum")
    x = rng.random(d)
    q = np.linalg.qr(rng.standard_normal((d, d)))[0]
    frame_warmup = min(200, transient // 2)
    for k in range(transient):
        if transient - k <= frame_warmup:
            q = np.linalg.qr(system.jacobian(x) @ q)[0]
        x = wrap(system.forward_lift(x))
    sums = np.zeros(d)
    for _ in range(steps):
        q, r = np.linalg.qr(system.jacobian(x) @ q)
        diag = np.abs(np.diagonal(r))
        if np.any(diag < UNDERFLOW_FLOOR):
            raise DegenerateCocycleError("R diagonal underflowed during QR iteration")
        sums += np.log(diag)
        x = wrap(system.forward_lift(x))
    raw = np.sort(sums / steps)[::-1]
    exponents, min_gap = _cluster_exponents(raw, cluster_gap)
    positive = sum(1 for v, _ in exponents if v > 0)
    return LyapunovSpectrum(
        exponents=exponents, min_gap=min_gap, positive_count=positive, dimension=d
    )


def _random_frames(rng: np.random.Generator, batch: int, dim: int) -> np.ndarray:
    return np.linalg.qr(rng.standard_normal((batch, dim, dim)))[0]


def _batch_principal_angle(u: np.ndarray, v: np.ndarray) -> float:
    residual = v - u @ (np.swapaxes(u, -1, -2) @ v)
    s = np.linalg.svd(residual, compute_uv=False)[..., 0]
    return float(np.arcsin(np.clip(np.max(s), 0.0, 1.0)))


def _transport_frames(
    system,
    orbit: np.ndarray,
    direction: str,
    rng: np.random.Generator,
    watch_cols: int,
    angle_tol: float = FRAME_ANGLE_TOL,
) -> np.ndarray:
    """Push random orthonormal frames along ``orbit`` with per-step QR.

    ``orbit`` has shape ``(K+1, B, d)``; Jacobians of ``direction`` are taken
    at ``orbit[k]`` for ``k = 0..K-1``. Convergence is checked by running two
    independently seeded frames per point: their leading ``watch_cols``
    subspaces at the endpoint must agree within ``angle_tol`` (successive
    iterates cannot be compared directly because the invariant bundle itself
    varies along the orbit).
    """
    k_steps, batch, d = orbit.shape[0] - 1, orbit.shape[1], orbit.shape[2]
    doubled = np.concatenate([orbit, orbit], axis=1)
    q = _random_frames(rng, 2 * batch, d)
    for k in range(k_steps):
        q, _ = np.linalg.qr(system.jacobian(doubled[k], direction) @ q)
    worst_angle = _batch_principal_angle(
        q[:batch, :, :watch_cols], q[batch:, :, :watch_cols]
    )
    if worst_angle > angle_tol:
        raise NonConvergentError(
            f"independently transported frames disagree by principal angle "
            f"{worst_angle:.3g} (tolerance {angle_tol:g}); increase steps"
        )
    return q[:batch]


def _splittings_batch(
    system,
    points: np.ndarray,
    level: int,
    steps: int,
    spectrum: LyapunovSpectrum,
    seed: int,
    which: str = "both",
) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Fast and slow bases at a batch of points, shapes (B, d, k) and (B, d, d-k).

    ``which`` selects "fast", "slow" or "both" (each side costs one orbit and
    one frame-transport run).
    """
    _, fast_dim = hierarchy_indices(spectrum, level)
    batch, d = points.shape
    slow_dim = d - fast_dim

    q_fast = q_slow = None
    if which in ("fast", "both"):
        back = np.empty((steps + 1, batch, d))
        back[0] = points
        for k in range(steps):
            back[k + 1] = wrap(system.inverse_lift(back[k]))
        frames = _transport_frames(
            system, back[::-1], "forward", spawn_rng(seed, "frames", "fast"), fast_dim
        )
        q_fast = frames[:, :, :fast_dim]

    if which in ("slow", "both"):
        fwd = np.empty((steps + 1, batch, d))
        fwd[0] = points
        for k in range(steps):
            fwd[k + 1] = wrap(system.forward_lift(fwd[k]))
        frames = _transport_frames(
            system, fwd[::-1], "inverse", spawn_rng(seed, "frames", "slow"), slow_dim
        )
        q_slow = frames[:, :, :slow_dim]
    return q_fast, q_slow


def oseledec_splitting(
    system,
    point: TorusPoint,
    level: int,
    steps: int = 1_000,
    *,
    spectrum: LyapunovSpectrum | None = None,
    seed: int = 0,
) -> SplittingAtPoint:
    """Fast/slow splitting at a point for the given hierarchy level.

    The fast basis spans the leading block of the frame pushed forward along
    the backward orbit; the slow basis comes from the symmetric computation
    with the inverse map. ``spectrum`` is computed with defaults when omitted.
    """
    if steps < 1_000:
        raise ValueError("steps must be >= 1000")
    if spectrum is None:
        spectrum = lyapunov_spectrum(system, seed=seed)
    fast, slow = _splittings_batch(
        system, point.coords[None, :], level, steps, spectrum, seed
    )
    return SplittingAtPoint(base=point, level=level, F_basis=fast[0], E_basis=slow[0])


def sample_splittings(
    system,
    level: int,
    count: int,
    steps: int = 1_000,
    *,
    spectrum: LyapunovSpectrum | None = None,
    seed: int = 0,
) -> list[SplittingAtPoint]:
    """Splittings at ``count`` Lebesgue-random points (batched transport)."""
    if spectrum is None:
        spectrum = lyapunov_spectrum(system, seed=seed)
    rng = spawn_rng(seed, "splitting-samples")
    points = rng.random((count, system.dimension))
    fast, slow = _splittings_batch(system, points, level, steps, spectrum, seed)
    return [
        SplittingAtPoint(
            base=TorusPoint(points[i]), level=level, F_basis=fast[i], E_basis=slow[i]
        )
        for i in range(count)
    ]
