"""Tsuji's iteration for Kaehler-Einstein metrics on canonically polarised hypersurfaces."""
from .variety import Hypersurface, VarietyPoint, VarietyError, parse_hypersurface, canonical_power_basis
from .sampling import SampleSet, sample_fs, curve_chart_quadrature, mc_integrate
from .weights import WeightSpec, make_weight, normalize_weight_sup
from .iteration import MetricState, init_state, step, run_chain, eval_B, eta_ratio, functional_L

__version__ = "0.1.0"
