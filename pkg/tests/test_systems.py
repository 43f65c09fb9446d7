import math

import numpy as np
import pytest

import foliation_lab as fl
from foliation_lab.errors import (
    AmplitudeTooLargeError,
    DimensionMismatchError,
    NonUnimodularError,
    NotHyperbolicError,
)
from foliation_lab.systems import wrap

from conftest import BETA, BLOCK4D, CAT


def test_cat_eigenvalues_match_characteristic_polynomial(cat_map):
    # oracle check: x^2 - 3x + 1 = 0 at the closed-form roots
    for root in (BETA, 1.0 / BETA):
        assert abs(root**2 - 3 * root + 1) < 1e-12
    moduli = np.sort(np.abs(np.linalg.eigvals(cat_map.matrix.astype(float))))
    assert np.allclose(moduli, [1.0 / BETA, BETA], atol=1e-9)


def test_identity_rejected_as_not_hyperbolic():
    with pytest.raises(NotHyperbolicError):
        fl.make_linear_system([[1, 0], [0, 1]])


def test_block_map_eigenvalues(block_map):
    moduli = np.sort(np.abs(np.linalg.eigvals(block_map.matrix.astype(float))))
    expected = np.sort([BETA**2, BETA, 1 / BETA, 1 / BETA**2])
    assert np.allclose(moduli, expected, atol=1e-9)


def test_non_unimodular_rejected():
    with pytest.raises(NonUnimodularError):
        fl.make_linear_system([[2, 0], [0, 1]])
    with pytest.raises(NonUnimodularError):
        fl.make_linear_system([[2.5, 1], [1, 1]])


def test_step_examples(cat_map):
    origin = fl.TorusPoint([0.0, 0.0])
    assert fl.torus_distance(fl.step(cat_map, origin), origin) == 0.0

    p = fl.TorusPoint([0.1, 0.2])
    q = fl.step(cat_map, p)
    assert np.allclose(q.coords, [0.4, 0.3], atol=1e-12)
    back = fl.step(cat_map, q, "inverse")
    assert np.allclose(back.coords, [0.1, 0.2], atol=1e-12)


def test_step_rejects_unknown_direction(cat_map):
    with pytest.raises(ValueError):
        fl.step(cat_map, fl.TorusPoint([0.1, 0.2]), "sideways")


def test_torus_distance_examples():
    z = fl.TorusPoint([0.0, 0.0])
    assert fl.torus_distance(z, z) == 0.0
    assert abs(fl.torus_distance(fl.TorusPoint([0.1, 0]), fl.TorusPoint([0.9, 0])) - 0.2) < 1e-12
    d = fl.torus_distance(fl.TorusPoint([0.25, 0.25]), fl.TorusPoint([0.75, 0.75]))
    assert abs(d - math.sqrt(0.5)) < 1e-12


def test_torus_distance_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        fl.torus_distance(fl.TorusPoint([0.1, 0.2]), fl.TorusPoint([0.1, 0.2, 0.3]))


def test_torus_point_wraps_to_unit_cube():
    p = fl.TorusPoint([1.25, -0.25, 3.0])
    assert np.all(p.coords >= 0.0) and np.all(p.coords < 1.0)
    assert np.allclose(p.coords, [0.25, 0.75, 0.0])


def test_perturbed_zero_amplitude_matches_linear(cat_map):
    flat = fl.make_perturbed_system(CAT, 0.0)
    rng = np.random.default_rng(5)
    p = fl.TorusPoint(rng.random(2))
    a, b = p, p
    for _ in range(50):
        a = fl.step(cat_map, a)
        b = fl.step(flat, b)
        assert fl.torus_distance(a, b) < 1e-12


def test_perturbed_unit_determinant(pcat_map):
    rng = np.random.default_rng(11)
    pts = rng.random((200, 2))
    dets = np.linalg.det(pcat_map.jacobian(pts))
    assert np.max(np.abs(np.abs(dets) - 1.0)) < 1e-12


def test_perturbed_amplitude_cap():
    with pytest.raises(AmplitudeTooLargeError):
        fl.make_perturbed_system(CAT, 0.2)
    fl.make_perturbed_system(CAT, 0.2, cap=0.25)  # explicit cap wins


def test_perturbed_requires_dimension_two():
    with pytest.raises(DimensionMismatchError):
        fl.make_perturbed_system(BLOCK4D, 0.05)


@pytest.mark.parametrize("which", ["cat", "pcat", "block"])
def test_round_trip_fuzz(which, cat_map, pcat_map, block_map):
    system = {"cat": cat_map, "pcat": pcat_map, "block": block_map}[which]
    rng = np.random.default_rng(17)
    pts = rng.random((1000, system.dimension))
    there = wrap(system.forward_lift(pts))
    back = wrap(system.inverse_lift(there))
    delta = np.linalg.norm((pts - back + 0.5) % 1.0 - 0.5, axis=1)
    assert np.max(delta) <= 1e-10


@pytest.mark.parametrize("which", ["cat", "pcat"])
@pytest.mark.parametrize("direction", ["forward", "inverse"])
def test_jacobian_matches_finite_differences(which, direction, cat_map, pcat_map):
    system = cat_map if which == "cat" else pcat_map
    lift = system.forward_lift if direction == "forward" else system.inverse_lift
    rng = np.random.default_rng(23)
    h = 1e-6
    for _ in range(100):
        x = rng.random(2)
        analytic = system.jacobian(x, direction)
        fd = np.empty((2, 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            fd[:, j] = (lift(x + e) - lift(x - e)) / (2 * h)
        assert np.max(np.abs(fd - analytic)) < 1e-6


def test_metric_symmetry_and_triangle():
    rng = np.random.default_rng(31)
    for _ in range(1000):
        a, b, c = (fl.TorusPoint(rng.random(3)) for _ in range(3))
        ab = fl.torus_distance(a, b)
        assert ab == fl.torus_distance(b, a)
        assert ab <= fl.torus_distance(a, c) + fl.torus_distance(c, b) + 1e-12


def test_power_map_linear_uses_exact_matrix_power(cat_map):
    squared = fl.power_map(cat_map, 2)
    assert squared.is_linear
    assert np.array_equal(squared.matrix, cat_map.matrix @ cat_map.matrix)


def test_power_map_perturbed_composes(pcat_map):
    twice = fl.power_map(pcat_map, 2)
    rng = np.random.default_rng(41)
    x = rng.random(2)
    direct = pcat_map.forward_lift(pcat_map.forward_lift(x))
    assert np.allclose(twice.forward_lift(x), direct, atol=1e-12)
    # chain-ruled Jacobian against finite differences of the composition
    h = 1e-6
    fd = np.empty((2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd[:, j] = (twice.forward_lift(x + e) - twice.forward_lift(x - e)) / (2 * h)
    assert np.max(np.abs(fd - twice.jacobian(x))) < 1e-5


def test_inverse_map_round_trip(cat_map, pcat_map):
    for system in (cat_map, pcat_map):
        inv = fl.inverse_map(system)
        p = fl.TorusPoint([0.37, 0.61])
        assert fl.torus_distance(fl.step(inv, fl.step(system, p)), p) < 1e-12
