"""Local unstable-leaf patches: construction, growth, metric and volume.

A patch is either *affine* (the exact fast-eigenspace translate through the
base point, valid for linear systems) or a *graph*: a regular grid of fast
coordinates ``w`` with offsets ``psi(w)`` along the orthogonal complement of
the fast direction. The graph chart is orthogonal by construction, so the
leaf metric and volume element take their textbook forms
(``sqrt(dw^2 + |dpsi|^2)`` per segment, ``sqrt(1 + |psi'|^2)`` per node).

All patch geometry lives in a universal-cover chart around the base point:
lift once, work in flat coordinates, reduce mod 1 only when a torus point is
needed. Graph patches are materialized for one-dimensional fast bundles only
(the nonlinear catalog is two-dimensional, so higher-dimensional graphs are
unreachable); linear systems with wider fast bundles use affine patches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cocycle import LyapunovSpectrum, hierarchy_indices, oseledec_splitting
from .errors import (
    DispersionExceededError,
    NonConvergentError,
    NotOnLeafError,
    UnsupportedPatchError,
)
from .systems import TorusPoint, wrap, wrapped_delta

#: Default node count per fast dimension of a graph grid.
DEFAULT_NODES = 2**9 + 1

#: Tolerance for deciding that a queried point lies on the patch.
ON_LEAF_TOL = 1e-8


def unit_ball_volume(k: int) -> float:
    """Lebesgue volume of the k-dimensional unit ball."""
    return math.pi ** (k / 2.0) / math.gamma(k / 2.0 + 1.0)


def _orth_complement(f_basis: np.ndarray) -> np.ndarray:
    d, k = f_basis.shape
    full = np.linalg.qr(f_basis, mode="complete")[0]
    return full[:, k:]


@dataclass(frozen=True, eq=False)
class LeafPatch:
    """Local unstable manifold piece through ``base`` at hierarchy ``level``.

    ``radius`` is the leaf-metric half-width the patch is meant to cover.
    Graph patches carry ``grid`` (ascending fast coordinates with a node at
    0), ``psi`` (offsets along ``E_basis``), and their finite-difference
    Lipschitz constant ``dispersion``; affine patches have dispersion 0.

    On affine patches ``E_basis`` is the converged slow bundle (orthogonal to
    the fast bundle for the symmetric linear catalog). On graph patches it is
    the orthonormal complement of ``F_basis``, which serves as the graph
    chart; tracking the dynamical slow bundle across transforms is unstable
    (its error grows by the domination gap per step) and nothing on a patch
    needs it, so consumers wanting the slow bundle should converge it fresh.
    """

    base: TorusPoint
    level: int
    radius: float
    F_basis: np.ndarray
    E_basis: np.ndarray
    kind: str  # "affine" | "graph"
    grid: np.ndarray | None = None
    psi: np.ndarray | None = None
    dispersion: float = 0.0

    def __post_init__(self):
        if self.kind not in ("affine", "graph"):
            raise ValueError(f"unknown patch kind {self.kind!r}")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.kind == "graph":
            if self.f_dim != 1:
                raise UnsupportedPatchError(
                    "graph patches are only supported over 1-dimensional fast bundles"
                )
            if self.grid is None or self.psi is None:
                raise ValueError("graph patches need grid and psi")
            gram = self.F_basis.T @ self.E_basis
            if np.max(np.abs(gram)) > 1e-10:
                raise ValueError("graph chart must be orthogonal to the fast basis")
            if self.grid.ndim != 1 or np.any(np.diff(self.grid) <= 0):
                raise ValueError("grid must be strictly increasing")
            center = int(np.argmin(np.abs(self.grid)))
            if abs(self.grid[center]) > 1e-12:
                raise ValueError("grid must contain the fast coordinate 0")
            if np.linalg.norm(self.psi[center]) > 1e-9:
                raise ValueError("patch does not pass through its base point")

    @property
    def dimension(self) -> int:
        return self.F_basis.shape[0]

    @property
    def f_dim(self) -> int:
        return self.F_basis.shape[1]

    @property
    def e_dim(self) -> int:
        return self.dimension - self.f_dim

    @property
    def center_index(self) -> int:
        return int(np.argmin(np.abs(self.grid)))

    def chart_points(self) -> np.ndarray:
        """Leaf points of the grid in the base chart, shape (m, d)."""
        if self.kind != "graph":
            raise ValueError("chart_points is defined for graph patches")
        return (
            self.base.coords[None, :]
            + self.grid[:, None] * self.F_basis[:, 0][None, :]
            + self.psi @ self.E_basis.T
        )

    def segment_lengths(self) -> np.ndarray:
        """Leaf-metric lengths of the grid segments (exact for the polyline)."""
        dw = np.diff(self.grid)
        dpsi = np.diff(self.psi, axis=0)
        return np.sqrt(dw**2 + np.sum(dpsi**2, axis=1))

    def arclength_from_center(self) -> np.ndarray:
        """Signed leaf arclength of every node measured from the base node."""
        seg = self.segment_lengths()
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        return cum - cum[self.center_index]

    def node_weights(self) -> np.ndarray:
        """Leaf-measure of the cell owned by each node (half adjacent segments)."""
        seg = self.segment_lengths()
        w = np.zeros(self.grid.shape[0])
        w[:-1] += 0.5 * seg
        w[1:] += 0.5 * seg
        return w


def _validate_level(system, level: int, spectrum: LyapunovSpectrum | None, seed: int):
    from .cocycle import lyapunov_spectrum

    if spectrum is None:
        spectrum = lyapunov_spectrum(system, seed=seed)
    return spectrum, hierarchy_indices(spectrum, level)


def affine_leaf_patch(
    system,
    x: TorusPoint,
    level: int,
    radius: float,
    *,
    spectrum: LyapunovSpectrum | None = None,
    steps: int = 1_000,
    seed: int = 0,
) -> LeafPatch:
    """Exact affine patch over the fast eigenspace sum (linear systems only)."""
    if not system.is_linear:
        raise ValueError("affine patches are exact for linear systems only")
    spectrum, _ = _validate_level(system, level, spectrum, seed)
    split = oseledec_splitting(system, x, level, steps, spectrum=spectrum, seed=seed)
    return LeafPatch(
        base=x,
        level=level,
        radius=float(radius),
        F_basis=split.F_basis,
        E_basis=split.E_basis,
        kind="affine",
        dispersion=0.0,
    )


def _flat_graph(base, level, radius, f_basis, nodes) -> LeafPatch:
    grid = np.linspace(-radius, radius, nodes)
    grid[nodes // 2] = 0.0
    return LeafPatch(
        base=base,
        level=level,
        radius=float(radius),
        F_basis=f_basis,
        E_basis=_orth_complement(f_basis),
        kind="graph",
        grid=grid,
        psi=np.zeros((nodes, f_basis.shape[0] - 1)),
        dispersion=0.0,
    )


def _graph_dispersion(grid: np.ndarray, psi: np.ndarray) -> float:
    dw = np.diff(grid)
    dpsi = np.linalg.norm(np.diff(psi, axis=0), axis=1)
    return float(np.max(dpsi / dw)) if dpsi.size else 0.0


def graph_transform_step(
    system,
    patch: LeafPatch,
    c_max: float,
    *,
    next_base: TorusPoint | None = None,
    nodes: int = DEFAULT_NODES,
) -> LeafPatch:
    """Push a patch forward one step and re-express it as a graph at the image.

    The image points are rewritten in the frame obtained by transporting the
    fast/slow bases with the Jacobian at the base, then re-gridded onto the
    regular fast-coordinate grid of the same radius. ``next_base`` pins the
    image base to an externally computed orbit point (used during growth to
    avoid compounding round-off along long orbits).

    Raises :class:`DispersionExceededError` when the image leaves the
    configured Lipschitz regime and :class:`NonConvergentError` when the image
    fails to cover the grid (insufficient fast expansion).
    """
    if patch.dispersion > c_max:
        raise DispersionExceededError(patch.dispersion, c_max)
    if patch.kind == "affine" and system.is_linear:
        jac = system.jacobian(patch.base.coords)
        f2 = np.linalg.qr(jac @ patch.F_basis)[0]
        e2 = np.linalg.qr(jac @ patch.E_basis)[0]
        base2 = next_base or TorusPoint(wrap(system.forward_lift(patch.base.coords)))
        return LeafPatch(
            base=base2,
            level=patch.level,
            radius=patch.radius,
            F_basis=f2,
            E_basis=e2,
            kind="affine",
            dispersion=0.0,
        )
    if patch.kind == "affine":
        patch = _flat_graph(patch.base, patch.level, patch.radius, patch.F_basis, nodes)

    base_img = system.forward_lift(patch.base.coords)
    if next_base is None:
        next_base = TorusPoint(wrap(base_img))
    base_lift = base_img + wrapped_delta(next_base.coords - base_img)

    jac = system.jacobian(patch.base.coords)
    f2 = np.linalg.qr(jac @ patch.F_basis)[0]
    if float(f2[:, 0] @ (jac @ patch.F_basis[:, 0])) < 0:
        f2 = -f2  # keep the fast axis orientation stable across steps
    chart2 = _orth_complement(f2)

    offsets = system.forward_lift(patch.chart_points()) - base_lift
    w_img = offsets @ f2[:, 0]
    psi_img = offsets @ chart2
    if np.any(np.diff(w_img) <= 0):
        raise DispersionExceededError(float("inf"), c_max)
    r = patch.radius
    if w_img[0] > -r or w_img[-1] < r:
        raise NonConvergentError(
            "image does not cover the grid; the fast direction is not expanding enough"
        )
    grid = np.linspace(-r, r, patch.grid.shape[0])
    grid[patch.grid.shape[0] // 2] = 0.0
    psi_new = np.column_stack(
        [np.interp(grid, w_img, psi_img[:, j]) for j in range(psi_img.shape[1])]
    )
    dispersion = _graph_dispersion(grid, psi_new)
    if dispersion > c_max:
        raise DispersionExceededError(dispersion, c_max)
    return LeafPatch(
        base=next_base,
        level=patch.level,
        radius=r,
        F_basis=f2,
        E_basis=chart2,
        kind="graph",
        grid=grid,
        psi=psi_new,
        dispersion=dispersion,
    )


def _trim_to_leaf_radius(patch: LeafPatch, radius: float) -> LeafPatch:
    """Re-grid so the arclength from the base node to each end equals ``radius``."""
    arc = patch.arclength_from_center()
    w_plus = float(np.interp(radius, arc, patch.grid))
    w_minus = float(np.interp(-radius, arc, patch.grid))
    half = min(w_plus, -w_minus)
    m = patch.grid.shape[0]
    grid = np.linspace(-half, half, m)
    grid[m // 2] = 0.0
    psi = np.column_stack(
        [np.interp(grid, patch.grid, patch.psi[:, j]) for j in range(patch.psi.shape[1])]
    )
    return LeafPatch(
        base=patch.base,
        level=patch.level,
        radius=radius,
        F_basis=patch.F_basis,
        E_basis=patch.E_basis,
        kind="graph",
        grid=grid,
        psi=psi,
        dispersion=_graph_dispersion(grid, psi),
    )


def grow_unstable_patch(
    system,
    x: TorusPoint,
    level: int,
    radius: float,
    c_max: float = 1.0,
    iterations: int = 30,
    *,
    nodes: int = DEFAULT_NODES,
    spectrum: LyapunovSpectrum | None = None,
    steps: int = 1_000,
    seed: int = 0,
) -> LeafPatch:
    """Grow the level-``i`` unstable patch at ``x`` by iterated graph transforms.

    Seeds a flat patch at ``f^{-iterations}(x)`` over the converged fast
    subspace there and pushes it forward, pinning each image base to the
    stored backward orbit (the graph transform contracts shape errors, so
    only the base orbit needs pinning). The result is trimmed to leaf-metric
    radius ``radius``.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if nodes < 5 or nodes % 2 == 0:
        raise ValueError("nodes must be an odd count >= 5")
    spectrum, (_, fast_dim) = _validate_level(system, level, spectrum, seed)
    if fast_dim != 1:
        raise UnsupportedPatchError(
            "grow_unstable_patch materializes graphs over 1-dimensional fast "
            "bundles; use affine_leaf_patch for linear systems with wider bundles"
        )

    orbit = np.empty((iterations + 1, system.dimension))
    orbit[0] = x.coords
    for k in range(iterations):
        orbit[k + 1] = wrap(system.inverse_lift(orbit[k]))
    seed_point = TorusPoint(orbit[iterations])
    split = oseledec_splitting(
        system, seed_point, level, steps, spectrum=spectrum, seed=seed
    )

    patch = _flat_graph(seed_point, level, radius, split.F_basis, nodes)
    sup_diffs: list[float] = []
    prev_psi = patch.psi
    for j in range(iterations, 0, -1):
        patch = graph_transform_step(
            system, patch, c_max, next_base=TorusPoint(orbit[j - 1])
        )
        sup_diffs.append(float(np.max(np.linalg.norm(patch.psi - prev_psi, axis=1))))
        prev_psi = patch.psi
        if len(sup_diffs) >= 5:
            # The graph varies along the orbit, so sup diffs fluctuate at the
            # orbit-variation scale without converging; only sustained
            # geometric growth to a macroscopic fraction of the patch signals
            # a runaway (dispersion and fold guards catch fast blow-ups).
            tail = sup_diffs[-5:]
            monotone = all(tail[i] < tail[i + 1] for i in range(4))
            if (
                monotone
                and tail[0] > 1e-8
                and tail[-1] > 10.0 * tail[0]
                and tail[-1] > 0.02 * radius
            ):
                raise NonConvergentError(
                    "successive patches keep diverging in sup norm: "
                    + ", ".join(f"{t:.3g}" for t in tail)
                )
    return _trim_to_leaf_radius(patch, radius)


def _affine_coordinates(patch: LeafPatch, point: np.ndarray) -> np.ndarray:
    offset = np.asarray(point, dtype=float) - patch.base.coords
    w = patch.F_basis.T @ offset
    residual = offset - patch.F_basis @ w
    if np.linalg.norm(residual) > ON_LEAF_TOL:
        raise NotOnLeafError(f"point is {np.linalg.norm(residual):.3g} off the affine leaf")
    if np.linalg.norm(w) > patch.radius + ON_LEAF_TOL:
        raise NotOnLeafError("point lies outside the patch radius")
    return w


def _graph_coordinate(patch: LeafPatch, point: np.ndarray) -> float:
    offset = np.asarray(point, dtype=float) - patch.base.coords
    w = float(patch.F_basis[:, 0] @ offset)
    if w < patch.grid[0] - ON_LEAF_TOL or w > patch.grid[-1] + ON_LEAF_TOL:
        raise NotOnLeafError("fast coordinate outside the patch grid")
    psi_here = offset @ patch.E_basis
    expected = np.array(
        [np.interp(w, patch.grid, patch.psi[:, j]) for j in range(patch.psi.shape[1])]
    )
    if np.linalg.norm(psi_here - expected) > ON_LEAF_TOL:
        raise NotOnLeafError(
            f"point is {np.linalg.norm(psi_here - expected):.3g} off the graph"
        )
    return w


def leaf_distance(patch: LeafPatch, a: np.ndarray, b: np.ndarray) -> float:
    """Intrinsic distance between two on-patch points (chart coordinates).

    Affine patches are flat, so the chord is the geodesic; on graph patches
    the distance is the polyline arclength between the two fast coordinates.
    """
    if patch.kind == "affine":
        wa = _affine_coordinates(patch, a)
        wb = _affine_coordinates(patch, b)
        return float(np.linalg.norm(wa - wb))
    wa = _graph_coordinate(patch, a)
    wb = _graph_coordinate(patch, b)
    arc = patch.arclength_from_center()
    la = float(np.interp(wa, patch.grid, arc))
    lb = float(np.interp(wb, patch.grid, arc))
    return abs(la - lb)


def window_volume(patch: LeafPatch, w_lo: float, w_hi: float) -> float:
    """Leaf measure of the sub-patch with fast coordinate in ``[w_lo, w_hi]``."""
    if w_hi <= w_lo:
        return 0.0
    if patch.kind == "affine":
        if patch.f_dim != 1:
            raise ValueError("window volumes require a 1-dimensional fast bundle")
        return w_hi - w_lo
    arc = patch.arclength_from_center()
    lo = float(np.interp(max(w_lo, patch.grid[0]), patch.grid, arc))
    hi = float(np.interp(min(w_hi, patch.grid[-1]), patch.grid, arc))
    return max(hi - lo, 0.0)


def leaf_volume(
    patch: LeafPatch,
    region=None,
    *,
    force_quadrature: bool = False,
    resolution: int = DEFAULT_NODES,
) -> float:
    """Leaf (Riemannian) volume of the patch, optionally restricted to a region.

    ``region`` is a predicate on chart points: it receives an ``(m, d)`` array
    and returns a boolean mask. An empty region yields 0. Affine patches with
    no region use the closed form (interval length, disk area, ball volume);
    otherwise a grid quadrature with the graph volume element is used.
    """
    if patch.kind == "affine":
        if region is None and not force_quadrature:
            return unit_ball_volume(patch.f_dim) * patch.radius**patch.f_dim
        return _affine_quadrature(patch, region, resolution)
    weights = patch.node_weights()
    if region is None:
        return float(np.sum(weights))
    mask = np.asarray(region(patch.chart_points()), dtype=bool)
    return float(np.sum(weights[mask]))


def _affine_quadrature(patch: LeafPatch, region, resolution: int) -> float:
    if patch.f_dim == 1:
        grid = np.linspace(-patch.radius, patch.radius, resolution)
        pts = patch.base.coords[None, :] + grid[:, None] * patch.F_basis[:, 0][None, :]
        mask = (
            np.ones(resolution, dtype=bool)
            if region is None
            else np.asarray(region(pts), dtype=bool)
        )
        cell = np.zeros(resolution)
        dw = np.diff(grid)
        cell[:-1] += 0.5 * dw
        cell[1:] += 0.5 * dw
        return float(np.sum(cell[mask]))
    if patch.f_dim == 2:
        # Cell-corner fractions over the bounding square, clipped to the disk.
        axis = np.linspace(-patch.radius, patch.radius, resolution)
        step = axis[1] - axis[0]
        u, v = np.meshgrid(axis, axis, indexing="ij")
        w = np.stack([u.ravel(), v.ravel()], axis=1)
        pts = patch.base.coords[None, :] + w @ patch.F_basis.T
        inside = np.linalg.norm(w, axis=1) <= patch.radius
        mask = inside
        if region is not None:
            mask = mask & np.asarray(region(pts), dtype=bool)
        frac = mask.reshape(resolution, resolution).astype(float)
        corner = 0.25 * (frac[:-1, :-1] + frac[1:, :-1] + frac[:-1, 1:] + frac[1:, 1:])
        return float(np.sum(corner) * step**2)
    raise UnsupportedPatchError("affine quadrature supports fast dimension 1 or 2")


def patch_rows(patch: LeafPatch, *, nodes: int = DEFAULT_NODES):
    """Rows (fast coords, psi offsets, chart point) for CSV dumps and plots."""
    if patch.kind == "graph":
        pts = patch.chart_points()
        for i in range(patch.grid.shape[0]):
            yield (
                [float(patch.grid[i])],
                [float(p) for p in patch.psi[i]],
                [float(c) for c in pts[i]],
            )
        return
    if patch.f_dim == 1:
        grid = np.linspace(-patch.radius, patch.radius, nodes)
        for w in grid:
            pt = patch.base.coords + w * patch.F_basis[:, 0]
            yield ([float(w)], [0.0] * patch.e_dim, [float(c) for c in pt])
        return
    raise UnsupportedPatchError("patch dumps support 1-dimensional leaves")
