"""Shared fixtures: catalog systems and their (session-cached) spectra."""

import math

import numpy as np
import pytest

import foliation_lab as fl

#: Expanding eigenvalue of [[2,1],[1,1]], the positive root of x^2 - 3x + 1.
BETA = (3.0 + math.sqrt(5.0)) / 2.0
LOG_BETA = math.log(BETA)

CAT = [[2, 1], [1, 1]]
BLOCK4D = [[5, 3, 0, 0], [3, 2, 0, 0], [0, 0, 2, 1], [0, 0, 1, 1]]


def cat_eigvec(sign: int) -> np.ndarray:
    """Unit eigenvector of the cat matrix for the expanding (+1) or
    contracting (-1) eigenvalue, from the closed-form eigenvalue."""
    lam = BETA if sign > 0 else 1.0 / BETA
    v = np.array([1.0, lam - 2.0])
    return v / np.linalg.norm(v)


@pytest.fixture(scope="session")
def cat_map():
    return fl.make_linear_system(CAT)


@pytest.fixture(scope="session")
def block_map():
    return fl.make_linear_system(BLOCK4D)


@pytest.fixture(scope="session")
def pcat_map():
    return fl.make_perturbed_system(CAT, 0.05)


@pytest.fixture(scope="session")
def cat_spectrum(cat_map):
    return fl.lyapunov_spectrum(cat_map, steps=10_000)


@pytest.fixture(scope="session")
def block_spectrum(block_map):
    return fl.lyapunov_spectrum(block_map, steps=10_000)


@pytest.fixture(scope="session")
def pcat_spectrum(pcat_map):
    return fl.lyapunov_spectrum(pcat_map, steps=10_000)


@pytest.fixture(scope="session")
def pcat_spectrum_long(pcat_map):
    return fl.lyapunov_spectrum(pcat_map, steps=50_000, seed=1)
