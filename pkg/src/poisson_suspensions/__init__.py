"""Poisson suspensions of nonsingular maps.

Seed-addressed sampling of Poisson point processes over a finite union of
box components, the suspension dynamics induced by measure-preserving base
maps, first-chaos integrals, and the Maharam skew product with certified
essential-value witnesses.
"""
from .chaos import (LevyMeasure, LevyTriplet, SimpleFunction, cf_idp, chaos1, chaos2_offdiag,
                    check_lower_bounded, levy_of, triplet_of)
from .dynamics import (AxisRule, GroupWord, MapSpec, ProductSystem, orbit_average, pair_correlation,
                       preimage_region, suspend)
from .intensity import (Box, Component, IntensityMeasure, RegionSet, measure_of, partition_window,
                        region_difference, region_intersection)
from .maharam import (EssentialValueWitness, NonsingularMap, NotFound, check_skew_preserves,
                      cube_witness, essential_value_search, maharam_extend, verify_witness)
from .rng import SeedSpec
from .sampler import Configuration, count, extend, restrict, sample, superpose
from .stats import (TestReport, chisq_poisson, empirical_cf, independence_test, limit_dispersion)

__all__ = [
    "AxisRule", "Box", "Component", "Configuration", "EssentialValueWitness", "GroupWord",
    "IntensityMeasure", "LevyMeasure", "LevyTriplet", "MapSpec", "NonsingularMap", "NotFound",
    "ProductSystem", "RegionSet", "SeedSpec", "SimpleFunction", "TestReport", "cf_idp", "chaos1",
    "chaos2_offdiag", "check_lower_bounded", "check_skew_preserves", "chisq_poisson", "count",
    "cube_witness", "empirical_cf", "essential_value_search", "extend", "independence_test",
    "levy_of", "limit_dispersion", "maharam_extend", "measure_of", "orbit_average",
    "pair_correlation", "partition_window", "preimage_region", "region_difference",
    "region_intersection", "restrict", "sample", "superpose", "suspend", "triplet_of",
    "verify_witness",
]
