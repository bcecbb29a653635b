from .curvature_algebra import coefficients, invariants, pinching_report
from .equivariant_flow import EquivariantRun, init_profile
from .equivariant_flow import run as run_equivariant
from .estimate_monitor import check_estimates, convexity_frontier
from .homogeneous_flows import ancient_hyperparallel, clifford_flow, hyperparallel_flow
from .main import cli
from .poincare_verifier import clifford_ray_witness, min_ratio, multiplicity_gap_check
from .scenario import load_scenario, run_scenario
from .singularity_rescaler import classify_type, pick_type_II_points, rescale_type_I
from .types import PinchingParams, ShapeSpectrum, SymmetryType

__version__ = "0.1.0"
