"""Periodic-orbit constructions with vanishing center exponent for step skew products."""
from .analysis import (BallCounter, GridPartition, MassBound, SupportEstimate, density_radius,
                       mass_lower_bound, topological_limit_estimate)
from .approximation import (ApproximationCertificate, SequenceHypothesisReport, best_certificate,
                            check_sequence_conditions, verify_certificate)
from .builder import (ConstructionResult, SearchExhausted, StageParameters, StageRecord,
                      run_construction, seed_orbit)
from .dynsys import (PeriodicOrbit, Point, SkewProductSystem, Word, metric_dist, model_a,
                     periodic_orbit_from_word)
from .measures import (AtomicMeasure, TestFamily, center_exponent_orbit, discrepancy, n_measure,
                       orbit_measure)

__version__ = "0.1.0"

__all__ = [
    "ApproximationCertificate", "AtomicMeasure", "BallCounter", "ConstructionResult",
    "GridPartition", "MassBound", "PeriodicOrbit", "Point", "SearchExhausted",
    "SequenceHypothesisReport", "SkewProductSystem", "StageParameters", "StageRecord",
    "SupportEstimate", "TestFamily", "Word", "best_certificate", "center_exponent_orbit",
    "check_sequence_conditions", "density_radius", "discrepancy", "mass_lower_bound",
    "metric_dist", "model_a", "n_measure", "orbit_measure", "periodic_orbit_from_word",
    "run_construction", "seed_orbit", "topological_limit_estimate", "verify_certificate",
]
