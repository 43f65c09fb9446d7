import math
import warnings

import numpy as np
import pytest

import foliation_lab as fl
from foliation_lab.cocycle import LyapunovSpectrum
from foliation_lab.errors import (
    ClusterAmbiguityWarning,
    DegenerateCocycleError,
    LevelOutOfRangeError,
    SingularMatrixError,
)

from conftest import BETA, LOG_BETA, cat_eigvec


def test_cat_spectrum_values(cat_spectrum):
    assert cat_spectrum.positive_count == 1
    assert cat_spectrum.dimension == 2
    (l1, m1), (l2, m2) = cat_spectrum.exponents
    assert m1 == m2 == 1
    assert abs(l1 - LOG_BETA) < 1e-3
    assert abs(l2 + LOG_BETA) < 1e-3
    assert abs(cat_spectrum.min_gap - 2 * LOG_BETA) < 2e-3


def test_block_spectrum_values(block_spectrum):
    expected = [2 * LOG_BETA, LOG_BETA, -LOG_BETA, -2 * LOG_BETA]
    assert block_spectrum.positive_count == 2
    assert [m for _, m in block_spectrum.exponents] == [1, 1, 1, 1]
    for (value, _), target in zip(block_spectrum.exponents, expected):
        assert abs(value - target) < 1e-3
    assert abs(block_spectrum.min_gap - LOG_BETA) < 2e-3


def test_exponent_sum_matches_log_det(cat_spectrum, block_spectrum, pcat_spectrum):
    for spectrum in (cat_spectrum, block_spectrum, pcat_spectrum):
        total = sum(v * m for v, m in spectrum.exponents)
        assert abs(total) < 1e-3  # |det Df| = 1 for the whole catalog


def test_inverse_spectrum_symmetry_linear(cat_map, cat_spectrum):
    inv_spec = fl.lyapunov_spectrum(fl.inverse_map(cat_map), steps=10_000)
    forward = [v for v, _ in cat_spectrum.exponents]
    backward = [v for v, _ in inv_spec.exponents]
    for vf, vb in zip(forward, reversed(backward)):
        assert abs(vf + vb) < 1e-3


def test_inverse_spectrum_symmetry_perturbed(pcat_map, pcat_spectrum_long):
    inv_spec = fl.lyapunov_spectrum(fl.inverse_map(pcat_map), steps=50_000, seed=1)
    forward = [v for v, _ in pcat_spectrum_long.exponents]
    backward = [v for v, _ in inv_spec.exponents]
    for vf, vb in zip(forward, reversed(backward)):
        assert abs(vf + vb) < 1e-3


def test_seed_robustness(cat_map, pcat_map, pcat_spectrum_long):
    a = fl.lyapunov_spectrum(cat_map, steps=10_000, seed=101)
    b = fl.lyapunov_spectrum(cat_map, steps=10_000, seed=202)
    for (va, _), (vb, _) in zip(a.exponents, b.exponents):
        assert abs(va - vb) < 1e-3
    other = fl.lyapunov_spectrum(pcat_map, steps=50_000, seed=2)
    for (va, _), (vb, _) in zip(pcat_spectrum_long.exponents, other.exponents):
        assert abs(va - vb) < 1e-3


def test_hierarchy_indices(block_spectrum, cat_spectrum):
    assert tuple(fl.hierarchy_indices(block_spectrum, 1)) == (2, 2)
    assert tuple(fl.hierarchy_indices(block_spectrum, 2)) == (1, 1)
    with pytest.raises(LevelOutOfRangeError):
        fl.hierarchy_indices(cat_spectrum, 2)
    with pytest.raises(LevelOutOfRangeError):
        fl.hierarchy_indices(cat_spectrum, 0)


def test_hierarchy_rejects_empty_unstable():
    stable = LyapunovSpectrum(
        exponents=((-0.3, 1), (-0.9, 1)), min_gap=0.6, positive_count=0, dimension=2
    )
    with pytest.raises(LevelOutOfRangeError):
        fl.hierarchy_indices(stable, 1)


def test_spectrum_validation_rejects_bad_data():
    with pytest.raises(ValueError):
        LyapunovSpectrum(exponents=((0.5, 1), (0.7, 1)), min_gap=0.1, positive_count=2, dimension=2)
    with pytest.raises(ValueError):
        LyapunovSpectrum(exponents=((0.5, 1),), min_gap=0.1, positive_count=1, dimension=2)


def test_oseledec_splitting_cat(cat_map, cat_spectrum):
    split = fl.oseledec_splitting(
        cat_map, fl.TorusPoint([0.3, 0.8]), 1, spectrum=cat_spectrum
    )
    assert fl.principal_angle(split.F_basis, cat_eigvec(+1)[:, None]) <= 1e-8
    assert fl.principal_angle(split.E_basis, cat_eigvec(-1)[:, None]) <= 1e-8


def test_oseledec_splitting_block_levels(block_map, block_spectrum):
    x = fl.TorusPoint([0.2, 0.4, 0.6, 0.8])
    deep = fl.oseledec_splitting(block_map, x, 2, spectrum=block_spectrum)
    # level 2 keeps only the fastest direction, which lives in coordinates 1-2
    assert deep.F_basis.shape == (4, 1)
    assert np.max(np.abs(deep.F_basis[2:, 0])) < 1e-8

    full = fl.oseledec_splitting(block_map, x, 1, spectrum=block_spectrum)
    assert full.F_basis.shape == (4, 2)
    assert full.E_basis.shape == (4, 2)
    # expanding directions per block, from the closed-form eigenvalues
    fast1 = np.zeros(4)
    fast1[:2] = cat_eigvec(+1)
    fast2 = np.zeros(4)
    fast2[2:] = cat_eigvec(+1)
    for v in (fast1, fast2):
        assert fl.principal_angle(full.F_basis, v[:, None]) <= 1e-8
    slow1 = np.zeros(4)
    slow1[:2] = cat_eigvec(-1)
    slow2 = np.zeros(4)
    slow2[2:] = cat_eigvec(-1)
    for v in (slow1, slow2):
        assert fl.principal_angle(full.E_basis, v[:, None]) <= 1e-8


@pytest.mark.parametrize("which", ["cat", "pcat"])
def test_splitting_invariance(which, cat_map, pcat_map, cat_spectrum, pcat_spectrum):
    system = cat_map if which == "cat" else pcat_map
    spectrum = cat_spectrum if which == "cat" else pcat_spectrum
    x = fl.TorusPoint([0.13, 0.41])
    here = fl.oseledec_splitting(system, x, 1, spectrum=spectrum)
    there = fl.oseledec_splitting(system, fl.step(system, x), 1, spectrum=spectrum)
    pushed = system.jacobian(x.coords) @ here.F_basis
    pushed, _ = np.linalg.qr(pushed)
    assert fl.principal_angle(pushed, there.F_basis) <= 1e-6


def test_minimal_norm(cat_map):
    assert abs(fl.minimal_norm(np.eye(3)) - 1.0) < 1e-14
    assert abs(fl.minimal_norm(np.diag([2.0, 0.5])) - 0.5) < 1e-14
    assert abs(fl.minimal_norm(cat_map.matrix) - 1.0 / BETA) < 1e-9
    with pytest.raises(SingularMatrixError):
        fl.minimal_norm(np.array([[1.0, 1.0], [1.0, 1.0]]))


def test_cluster_ambiguity_warning(cat_map):
    # raw gap is 2 log(beta); a threshold within 10% of it must be reported
    with pytest.warns(ClusterAmbiguityWarning):
        fl.lyapunov_spectrum(cat_map, steps=1_000, cluster_gap=2 * LOG_BETA / 1.05)


def test_cluster_merges_close_exponents(cat_map):
    merged = fl.lyapunov_spectrum(cat_map, steps=1_000, cluster_gap=3.0)
    assert len(merged.exponents) == 1
    assert merged.exponents[0][1] == 2
    assert merged.positive_count == 0
    assert math.isinf(merged.min_gap)


class _CollapsingStub:
    """Constant rank-deficient cocycle; triggers the QR underflow guard."""

    dimension = 2
    is_linear = False

    def forward_lift(self, x):
        return np.asarray(x)

    def inverse_lift(self, x):
        return np.asarray(x)

    def jacobian(self, x, direction="forward"):
        j = np.array([[1e-200, 0.0], [0.0, 1e-200]])
        return np.broadcast_to(j, np.shape(x)[:-1] + (2, 2)).copy()


def test_degenerate_cocycle_detected():
    with pytest.raises(DegenerateCocycleError):
        fl.lyapunov_spectrum(_CollapsingStub(), steps=1_000, transient=0)
