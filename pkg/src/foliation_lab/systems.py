"""Torus phase space and the catalog of test diffeomorphisms.

Two families are supported:

* linear: ``x -> A x (mod 1)`` for an integer matrix ``A`` with ``|det A| = 1``
  and no eigenvalue on the unit circle;
* perturbed: ``A`` composed with a sine shear
  ``s(x, y) = (x + a sin(2 pi y), y)`` on the 2-torus, which keeps an exact
  inverse and a unit Jacobian determinant.

Maps act on lifted coordinates in ``R^d`` (``forward_lift`` / ``inverse_lift``)
without reduction; both families commute with integer translations, so leaf
computations can work in a universal-cover chart and reduce once at the end.
``step`` reduces to ``[0, 1)`` after every application to prevent drift.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AmplitudeTooLargeError,
    DimensionMismatchError,
    NonUnimodularError,
    NotHyperbolicError,
)

TWO_PI = 2.0 * np.pi

#: Eigenvalue moduli within this band around 1 are rejected as non-hyperbolic.
HYPERBOLICITY_TOL = 1e-9

#: Default cap on the shear amplitude of perturbed systems.
AMPLITUDE_CAP = 0.1


def wrap(x: np.ndarray) -> np.ndarray:
    """Reduce coordinates to the fundamental domain ``[0, 1)``."""
    x = np.asarray(x, dtype=float)
    return x - np.floor(x)


def wrapped_delta(delta: np.ndarray) -> np.ndarray:
    """Reduce a coordinate difference to the minimal representative in [-1/2, 1/2)."""
    delta = np.asarray(delta, dtype=float)
    return (delta + 0.5) % 1.0 - 0.5


@dataclass(frozen=True, eq=False)
class TorusPoint:
    """A point of the d-torus stored by its representative in ``[0, 1)^d``."""

    coords: np.ndarray

    def __post_init__(self):
        c = wrap(np.atleast_1d(np.asarray(self.coords, dtype=float)))
        if c.ndim != 1:
            raise DimensionMismatchError(f"point coordinates must be a vector, got shape {c.shape}")
        object.__setattr__(self, "coords", c)
        self.coords.flags.writeable = False

    @property
    def dimension(self) -> int:
        return self.coords.shape[0]

    def __repr__(self):  # pragma: no cover
        inner = ", ".join(f"{v:.6f}" for v in self.coords)
        return f"TorusPoint({inner})"


def torus_distance(p: TorusPoint, q: TorusPoint) -> float:
    """Quotient metric: Euclidean length of the coordinate-wise minimal difference.

    Computed from |a - b|, which floats negate exactly, so the metric is
    symmetric to the last bit.
    """
    a = p.coords if isinstance(p, TorusPoint) else wrap(p)
    b = q.coords if isinstance(q, TorusPoint) else wrap(q)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    frac = np.abs(a - b) % 1.0
    return float(np.linalg.norm(np.minimum(frac, 1.0 - frac)))


def _exact_integer_matrix(matrix) -> np.ndarray:
    m = np.asarray(matrix)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatchError(f"matrix must be square, got shape {m.shape}")
    if not np.all(np.equal(m, np.round(m))):
        raise NonUnimodularError("matrix must have integer entries")
    return m.astype(np.int64)


def _integer_det(m: np.ndarray) -> int:
    # d <= 8 and small entries: the float determinant rounds exactly.
    det = float(np.linalg.det(m.astype(float)))
    det_int = int(round(det))
    if abs(det - det_int) > 1e-6:
        raise NonUnimodularError(f"determinant {det} is not close to an integer")
    return det_int


def _integer_inverse(m: np.ndarray, det: int) -> np.ndarray:
    inv = np.round(np.linalg.inv(m.astype(float))).astype(np.int64)
    if not np.array_equal(m @ inv, np.eye(m.shape[0], dtype=np.int64)):
        raise NonUnimodularError("failed to build an exact integer inverse")
    return inv


def _check_hyperbolic(m: np.ndarray) -> None:
    moduli = np.abs(np.linalg.eigvals(m.astype(float)))
    if np.any(np.abs(moduli - 1.0) <= HYPERBOLICITY_TOL):
        raise NotHyperbolicError(
            f"eigenvalue modulus within {HYPERBOLICITY_TOL:g} of 1 (moduli: {np.sort(moduli)})"
        )


@dataclass(frozen=True, eq=False)
class TorusMap:
    """An invertible self-map of the d-torus with exact inverse and Jacobian.

    ``kind`` is ``"linear"`` or ``"perturbed"``. For the perturbed kind the
    forward map is ``A o s`` where the shear ``s`` adds
    ``amplitude * sin(2 pi x[shear_read])`` to coordinate ``shear_write``.
    """

    dimension: int
    kind: str
    matrix: np.ndarray
    inverse_matrix: np.ndarray
    amplitude: float = 0.0
    shear_read: int = 1
    shear_write: int = 0
    _fwd: np.ndarray = field(init=False, repr=False)
    _inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_fwd", self.matrix.astype(float))
        object.__setattr__(self, "_inv", self.inverse_matrix.astype(float))

    @property
    def is_linear(self) -> bool:
        return self.kind == "linear"

    @property
    def det(self) -> int:
        return _integer_det(self.matrix)

    def _shear(self, x: np.ndarray, sign: float) -> np.ndarray:
        y = np.array(x, dtype=float, copy=True)
        y[..., self.shear_write] += sign * self.amplitude * np.sin(TWO_PI * y[..., self.shear_read])
        return y

    def forward_lift(self, x: np.ndarray) -> np.ndarray:
        """Apply the map to lifted coordinates in ``R^d`` (no reduction)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "linear":
            return x @ self._fwd.T
        return self._shear(x, +1.0) @ self._fwd.T

    def inverse_lift(self, x: np.ndarray) -> np.ndarray:
        """Apply the inverse map to lifted coordinates (no reduction)."""
        x = np.asarray(x, dtype=float)
        y = x @ self._inv.T
        if self.kind == "linear":
            return y
        return self._shear(y, -1.0)

    def jacobian(self, x: np.ndarray, direction: str = "forward") -> np.ndarray:
        """Derivative of the (forward or inverse) map at ``x``; batched over leading axes."""
        x = np.asarray(x, dtype=float)
        batch = x.shape[:-1]
        if self.kind == "linear":
            a = self._fwd if direction == "forward" else self._inv
            return np.broadcast_to(a, batch + a.shape).copy()
        if direction == "forward":
            # D(A o s)(x) = A @ Ds(x); the shear adds one off-diagonal entry.
            gain = self.amplitude * TWO_PI * np.cos(TWO_PI * x[..., self.shear_read])
            j = np.broadcast_to(self._fwd, batch + self._fwd.shape).copy()
            j[..., :, self.shear_read] += gain[..., None] * self._fwd[:, self.shear_write]
            return j
        # D(s^-1 o A^-1)(x) = Ds^-1(A^-1 x) @ A^-1.
        pre = x @ self._inv.T
        gain = self.amplitude * TWO_PI * np.cos(TWO_PI * pre[..., self.shear_read])
        j = np.broadcast_to(self._inv, batch + self._inv.shape).copy()
        j[..., self.shear_write, :] -= gain[..., None] * self._inv[self.shear_read, :]
        return j


@dataclass(frozen=True, eq=False)
class IteratedMap:
    """``base`` composed with itself ``times`` times; Jacobians chain-ruled."""

    base: TorusMap
    times: int

    def __post_init__(self):
        if self.times < 1:
            raise ValueError("times must be >= 1")

    @property
    def dimension(self) -> int:
        return self.base.dimension

    @property
    def kind(self) -> str:
        return "iterated"

    @property
    def is_linear(self) -> bool:
        return False

    def forward_lift(self, x: np.ndarray) -> np.ndarray:
        for _ in range(self.times):
            x = self.base.forward_lift(x)
        return x

    def inverse_lift(self, x: np.ndarray) -> np.ndarray:
        for _ in range(self.times):
            x = self.base.inverse_lift(x)
        return x

    def jacobian(self, x: np.ndarray, direction: str = "forward") -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if direction == "forward":
            j = self.base.jacobian(x, "forward")
            y = wrap(self.base.forward_lift(x))
            for _ in range(self.times - 1):
                j = self.base.jacobian(y, "forward") @ j
                y = wrap(self.base.forward_lift(y))
            return j
        j = self.base.jacobian(x, "inverse")
        y = wrap(self.base.inverse_lift(x))
        for _ in range(self.times - 1):
            j = self.base.jacobian(y, "inverse") @ j
            y = wrap(self.base.inverse_lift(y))
        return j


@dataclass(frozen=True, eq=False)
class ReversedMap:
    """View of ``base`` with forward and inverse exchanged."""

    base: TorusMap

    @property
    def dimension(self) -> int:
        return self.base.dimension

    @property
    def kind(self) -> str:
        return "reversed"

    @property
    def is_linear(self) -> bool:
        return False

    def forward_lift(self, x):
        return self.base.inverse_lift(x)

    def inverse_lift(self, x):
        return self.base.forward_lift(x)

    def jacobian(self, x, direction: str = "forward"):
        other = "inverse" if direction == "forward" else "forward"
        return self.base.jacobian(x, other)


def make_linear_system(matrix) -> TorusMap:
    """Build the toral automorphism ``x -> A x (mod 1)``.

    Raises
    ------
    NonUnimodularError
        if ``|det A| != 1`` (no integer inverse exists).
    NotHyperbolicError
        if some eigenvalue modulus lies within 1e-9 of 1.
    """
    m = _exact_integer_matrix(matrix)
    det = _integer_det(m)
    if abs(det) != 1:
        raise NonUnimodularError(f"|det| must be 1, got det = {det}")
    _check_hyperbolic(m)
    return TorusMap(
        dimension=m.shape[0],
        kind="linear",
        matrix=m,
        inverse_matrix=_integer_inverse(m, det),
        amplitude=0.0,
    )


def make_perturbed_system(
    matrix,
    amplitude: float,
    *,
    cap: float = AMPLITUDE_CAP,
    shear_axis: tuple[int, int] = (1, 0),
) -> TorusMap:
    """Compose a hyperbolic 2x2 automorphism with a sine shear.

    ``shear_axis = (read, write)``: the shear reads coordinate ``read`` and
    displaces coordinate ``write``, so its Jacobian determinant is exactly 1
    and the map preserves area.
    """
    linear = make_linear_system(matrix)
    if linear.dimension != 2:
        raise DimensionMismatchError("perturbed systems are only defined on the 2-torus")
    if amplitude < 0:
        raise ValueError("amplitude must be nonnegative")
    if amplitude > cap:
        raise AmplitudeTooLargeError(f"amplitude {amplitude} exceeds cap {cap}")
    read, write = shear_axis
    if read == write or not {read, write} <= {0, 1}:
        raise ValueError(f"shear_axis must name two distinct coordinates, got {shear_axis}")
    return TorusMap(
        dimension=2,
        kind="perturbed",
        matrix=linear.matrix,
        inverse_matrix=linear.inverse_matrix,
        amplitude=float(amplitude),
        shear_read=read,
        shear_write=write,
    )


def power_map(system, exponent: int):
    """The ``exponent``-th iterate as a map object.

    Linear systems stay closed under iteration (exact integer matrix power);
    other systems are wrapped in :class:`IteratedMap` with chain-ruled
    Jacobians.
    """
    if exponent < 1:
        raise ValueError("exponent must be >= 1")
    if exponent == 1:
        return system
    if getattr(system, "is_linear", False):
        power = np.linalg.matrix_power(system.matrix, exponent)
        return make_linear_system(power)
    return IteratedMap(base=system, times=exponent)


def inverse_map(system):
    """The inverse as a map object (exact integer inverse for linear systems)."""
    if getattr(system, "is_linear", False):
        return make_linear_system(system.inverse_matrix)
    return ReversedMap(base=system)


def step(system, point: TorusPoint, direction: str = "forward") -> TorusPoint:
    """One application of the map (or its inverse), reduced mod 1."""
    if direction not in ("forward", "inverse"):
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    lift = system.forward_lift if direction == "forward" else system.inverse_lift
    return TorusPoint(wrap(lift(point.coords)))


def random_point(dimension: int, rng: np.random.Generator) -> TorusPoint:
    """Lebesgue-uniform random point of the d-torus."""
    return TorusPoint(rng.random(dimension))
