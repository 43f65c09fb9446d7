"""Entropy along unstable-foliation hierarchies of torus diffeomorphisms.

The package computes Lyapunov spectra, certifies dominated splittings, grows
unstable leaf patches, estimates per-level foliation entropies by several
routes, and checks the Ruelle inequality and the Pesin-type entropy formula
on a catalog of torus systems.
"""

from .cocycle import (
    LyapunovSpectrum,
    SplittingAtPoint,
    hierarchy_indices,
    lyapunov_spectrum,
    minimal_norm,
    oseledec_splitting,
    principal_angle,
)
from .domination import DominationCertificate, certify_domination, domination_ratio
from .entropy import (
    BowenBallRecord,
    EntropyEstimate,
    GrowthCount,
    PowerRuleResult,
    bowen_ball_volume,
    counting_entropy,
    partition_conditional_entropy,
    power_rule_check,
    separated_count,
    spanning_count,
    volume_entropy,
)
from .leaf import (
    LeafPatch,
    affine_leaf_patch,
    graph_transform_step,
    grow_unstable_patch,
    leaf_distance,
    leaf_volume,
)
from .systems import (
    IteratedMap,
    TorusMap,
    TorusPoint,
    inverse_map,
    make_linear_system,
    make_perturbed_system,
    power_map,
    random_point,
    step,
    torus_distance,
)
from .verify import VerificationRow, pesin_check, ruelle_check, run_catalog

__version__ = "0.1.0"

__all__ = [
    "BowenBallRecord",
    "DominationCertificate",
    "EntropyEstimate",
    "GrowthCount",
    "IteratedMap",
    "LeafPatch",
    "LyapunovSpectrum",
    "PowerRuleResult",
    "SplittingAtPoint",
    "TorusMap",
    "TorusPoint",
    "VerificationRow",
    "affine_leaf_patch",
    "bowen_ball_volume",
    "certify_domination",
    "counting_entropy",
    "domination_ratio",
    "graph_transform_step",
    "grow_unstable_patch",
    "hierarchy_indices",
    "inverse_map",
    "leaf_distance",
    "leaf_volume",
    "lyapunov_spectrum",
    "make_linear_system",
    "make_perturbed_system",
    "minimal_norm",
    "oseledec_splitting",
    "partition_conditional_entropy",
    "pesin_check",
    "power_map",
    "power_rule_check",
    "principal_angle",
    "random_point",
    "ruelle_check",
    "run_catalog",
    "separated_count",
    "spanning_count",
    "step",
    "torus_distance",
    "volume_entropy",
]
