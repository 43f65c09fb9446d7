"""Exception types shared across the package.

Every error raised by the library derives from :class:`FoliationLabError`,
so callers can catch one base class at pipeline boundaries (the catalog
runner records per-row failures instead of aborting the run).
"""

from __future__ import annotations


class FoliationLabError(Exception):
    """Base class for all library errors."""


class DimensionMismatchError(FoliationLabError):
    """Operands live on tori of different dimension."""


class NonUnimodularError(FoliationLabError):
    """Integer matrix has |det| != 1 and does not act invertibly on the torus."""


class NotHyperbolicError(FoliationLabError):
    """Matrix has an eigenvalue too close to the unit circle."""


class AmplitudeTooLargeError(FoliationLabError):
    """Shear amplitude exceeds the configured cap."""


class DegenerateCocycleError(FoliationLabError):
    """A QR renormalization produced an underflowing diagonal entry."""


class LevelOutOfRangeError(FoliationLabError):
    """Requested foliation level exceeds the number of positive exponents."""


class NonConvergentError(FoliationLabError):
    """An iterative frame or patch computation failed to settle."""


class SingularMatrixError(FoliationLabError):
    """Smallest singular value underflowed; minimal norm undefined."""


class NotDominatedError(FoliationLabError):
    """No power up to the search cap satisfied the domination bound."""

    def __init__(self, n_max: int, worst_ratio: float):
        self.n_max = n_max
        self.worst_ratio = worst_ratio
        super().__init__(
            f"no power N <= {n_max} certifies domination "
            f"(best worst-case ratio {worst_ratio:.6g} > 0.5)"
        )


class DispersionExceededError(FoliationLabError):
    """A transformed graph patch left the configured dispersion regime."""

    def __init__(self, dispersion: float, c_max: float):
        self.dispersion = dispersion
        self.c_max = c_max
        super().__init__(
            f"graph dispersion {dispersion:.6g} exceeds bound {c_max:.6g}; "
            "reduce the patch radius or raise the bound"
        )


class NotOnLeafError(FoliationLabError):
    """A point handed to a leaf operation does not lie on the patch."""


class UnsupportedPatchError(FoliationLabError):
    """Graph patches are only materialized over one-dimensional fast bundles."""


class EpsilonTooLargeError(FoliationLabError):
    """Bowen-ball radius must be smaller than the patch radius."""


class PatchTooSmallError(FoliationLabError):
    """The requested ball is clipped by the patch boundary."""


class ResolutionTooCoarseError(FoliationLabError):
    """Candidate grid spacing exceeds the required fraction of epsilon."""


class NoPlateauError(FoliationLabError):
    """No adjacent epsilon slopes agreed; the estimate did not converge."""

    def __init__(self, slopes, tol: float):
        self.slopes = tuple(slopes)
        self.tol = tol
        table = ", ".join(f"eps={e:.4g}: {s:.6g}" for e, s in self.slopes)
        super().__init__(
            f"no adjacent epsilon slopes agree within {tol:.0%}; "
            f"extend the grid ({table})"
        )


class MeshTooCoarseError(FoliationLabError):
    """Partition mesh is coarser than the epsilon scale of interest."""


class NotVolumePreservingError(FoliationLabError):
    """Jacobian determinant deviates from one at sampled points."""


class ConfigError(FoliationLabError):
    """Base class for experiment-configuration problems."""


class ConfigParseError(ConfigError):
    """Config file is not well-formed key = value text."""


class ConfigValidationError(ConfigError):
    """Config parsed but a key holds an invalid value."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class ClusterAmbiguityWarning(UserWarning):
    """A raw exponent gap fell near the clustering threshold."""
