"""Numerical certification of dominated splittings along orbit samples.

The certified condition: after ``N`` steps the weakest expansion on the fast
bundle beats the strongest expansion on the slow bundle by a factor of two,
i.e. ``|Df^N restricted to E| / m(Df^N restricted to F) <= 1/2`` at every
sampled orbit point, where ``m`` denotes the smallest singular value.

Certification is sampled, not proven: the certificate records how many random
starts and how long an orbit backed it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cocycle import LyapunovSpectrum, SplittingAtPoint, hierarchy_indices, lyapunov_spectrum
from .errors import FoliationLabError, NotDominatedError, SingularMatrixError
from .seeding import spawn_rng
from .systems import wrap

#: Domination threshold on the contraction/expansion ratio.
DOMINATION_BOUND = 0.5


@dataclass(frozen=True, eq=False)
class DominationCertificate:
    """Smallest certified power with the worst ratio seen over the sample."""

    level: int
    power: int
    worst_ratio: float
    sample_count: int
    orbit_length: int

    def __post_init__(self):
        if self.worst_ratio > DOMINATION_BOUND:
            raise ValueError("certificate issued with ratio above the domination bound")
        if self.power < 1:
            raise ValueError("certified power must be >= 1")


def _ratio_from_parts(j_e: np.ndarray, j_f: np.ndarray) -> np.ndarray:
    """max singular value on E over min singular value on F (batched)."""
    top = np.linalg.svd(j_e, compute_uv=False)[..., 0]
    bottom = np.linalg.svd(j_f, compute_uv=False)[..., -1]
    if np.any(bottom < 1e-292):
        raise SingularMatrixError("cocycle restricted to the fast bundle underflowed")
    return top / bottom


def domination_ratio(system, splitting: SplittingAtPoint, power: int) -> float:
    """Ratio ``|Df^N|_E| / m(Df^N|_F)`` at the splitting's base point."""
    if power < 1:
        raise ValueError("power must be >= 1")
    x = splitting.base.coords
    j = np.eye(system.dimension)
    for _ in range(power):
        j = system.jacobian(x) @ j
        x = wrap(system.forward_lift(x))
    ratio = _ratio_from_parts(j @ splitting.E_basis, j @ splitting.F_basis)
    return float(ratio)


def _transport_bases(system, starts, level, spectrum, steps, seed, length):
    """Direction-stable fast/slow bases along forward orbits.

    The fast bundle attracts under forward transport and the slow bundle
    under backward transport, so F is converged at the orbit start and pushed
    forward while E is converged at the orbit end and pulled back (pushing E
    forward would amplify its error by the domination gap every step).

    Returns orbit points (L, B, d), fast bases (L, B, d, k), slow bases
    (L, B, d, d-k) and per-step Jacobians (L, B, d, d).
    """
    from .cocycle import _splittings_batch

    batch, d = starts.shape
    pts = np.empty((length, batch, d))
    jacs = np.empty((length, batch, d, d))
    x = starts
    for j in range(length):
        pts[j] = x
        jacs[j] = system.jacobian(x)
        x = wrap(system.forward_lift(x))

    f0, _ = _splittings_batch(system, starts, level, steps, spectrum, seed, "fast")
    fs = np.empty((length,) + f0.shape)
    f = f0
    for j in range(length):
        fs[j] = f
        f = np.linalg.qr(jacs[j] @ f)[0]

    _, e_end = _splittings_batch(
        system, pts[length - 1], level, steps, spectrum, seed + 1, "slow"
    )
    es = np.empty((length,) + e_end.shape)
    es[length - 1] = e_end
    for j in range(length - 2, -1, -1):
        pullback = system.jacobian(pts[j + 1], "inverse")
        es[j] = np.linalg.qr(pullback @ es[j + 1])[0]
    return pts, fs, es, jacs


def certify_domination(
    system,
    level: int,
    samples: int = 100,
    orbit_length: int = 1_000,
    n_max: int = 64,
    *,
    spectrum: LyapunovSpectrum | None = None,
    steps: int = 1_000,
    seed: int = 0,
) -> DominationCertificate:
    """Search the smallest power ``N <= n_max`` dominating on sampled orbits.

    Splittings are converged once per random start and carried along the
    orbit by one-step transport (re-orthonormalized each step). On success a
    submultiplicativity spot check at ``2N`` is run: the ratio at ``2N`` must
    not exceed the product of the two constituent ratios (nor the squared
    worst ratio), up to 1e-9.
    """
    if samples < 1 or orbit_length < 1 or n_max < 1:
        raise ValueError("samples, orbit_length and n_max must be >= 1")
    if spectrum is None:
        spectrum = lyapunov_spectrum(system, seed=seed)
    hierarchy_indices(spectrum, level)  # validates the level

    rng = spawn_rng(seed, "domination", level)
    starts = rng.random((samples, system.dimension))

    # Extend the orbit so J_{2N} fits for the spot check at the largest N.
    length = orbit_length + 2 * n_max
    _, fs, es, jacs = _transport_bases(
        system, starts, level, spectrum, steps, seed, length
    )

    scan_f = fs[:orbit_length].reshape(-1, *fs.shape[2:])
    scan_e = es[:orbit_length].reshape(-1, *es.shape[2:])

    products = jacs[:orbit_length].reshape(-1, *jacs.shape[2:]).copy()
    flat_jacs = jacs.reshape(-1, *jacs.shape[2:])
    worst = np.inf
    for power in range(1, n_max + 1):
        if power > 1:
            # J_{N}(x_j) = Df(x_{j+N-1}) @ J_{N-1}(x_j), vectorized over (j, s).
            offset = (power - 1) * samples
            products = flat_jacs[offset : offset + products.shape[0]] @ products
        ratios = _ratio_from_parts(products @ scan_e, products @ scan_f)
        worst = float(np.max(ratios))
        if worst <= DOMINATION_BOUND:
            _spot_check_submultiplicativity(
                flat_jacs, fs, es, ratios, power, worst, samples, orbit_length
            )
            return DominationCertificate(
                level=level,
                power=power,
                worst_ratio=worst,
                sample_count=samples,
                orbit_length=orbit_length,
            )
    raise NotDominatedError(n_max, worst)


def _spot_check_submultiplicativity(
    flat_jacs, fs, es, ratios, power, worst, samples, orbit_length
):
    """Verify ratio(2N) <= ratio(N, x) * ratio(N, f^N x) + 1e-9 on a few points."""
    d = flat_jacs.shape[-1]
    spots = min(8, orbit_length)
    for s in range(spots):
        j_idx = (s * max(1, orbit_length // spots)) % orbit_length
        flat0 = j_idx * samples + (s % samples)
        prod = np.eye(d)
        for k in range(2 * power):
            prod = flat_jacs[flat0 + k * samples] @ prod
        ratio_2n = float(
            _ratio_from_parts(
                (prod @ es[j_idx, s % samples])[None],
                (prod @ fs[j_idx, s % samples])[None],
            )[0]
        )
        ratio_here = float(ratios[flat0])
        shifted = np.eye(d)
        for k in range(power):
            shifted = flat_jacs[flat0 + (power + k) * samples] @ shifted
        ratio_next = float(
            _ratio_from_parts(
                (shifted @ es[j_idx + power, s % samples])[None],
                (shifted @ fs[j_idx + power, s % samples])[None],
            )[0]
        )
        if ratio_2n > ratio_here * ratio_next + 1e-9 or ratio_2n > worst**2 + 1e-9:
            raise FoliationLabError(
                "submultiplicativity spot check failed: "
                f"ratio(2N)={ratio_2n:.6g}, ratio(N)*ratio(N)'={ratio_here * ratio_next:.6g}, "
                f"worst^2={worst**2:.6g}"
            )
