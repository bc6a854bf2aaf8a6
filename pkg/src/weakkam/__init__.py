"""Discrete weak KAM computations on the flat torus T^d, d in {1, 2}.

Typical use::

    from weakkam import HamiltonianModel, TorusGrid, VelocityGrid, legendre_transform
    from weakkam import solve_forward, build_action_kernel, compute_peierls, build_lp, solve_lp
"""

from ._accel import USE_NUMBA, backend_name
from .barrier import (AubrySet, BarrierResult, MinPlusKernel, aubry_set, barrier_symmetry_check,
                      build_action_kernel, compute_ht, compute_peierls, minplus_eigenvalue, minplus_product)
from .config import RunConfig, load_config
from .discounted import (Policy, SolverParams, ValueField, bellman_update, check_domination,
                         extract_calibrated_curve, solve_discounted_backward, solve_forward)
from .expr import evaluate, parse_expression, to_text
from .limits import (ConjugacyReport, LambdaSchedule, LimitResult, conjugacy_report, critical_value_ergodic,
                     representation_backward, representation_forward, subsolution_family_check,
                     vanishing_discount_backward, vanishing_discount_forward)
from .mather import (DiscreteClosedMeasure, LPProblem, MatherResult, build_lp, critical_value_lp,
                     optimize_over_mather_face, reflect_measure, solve_lp)
from .model import HamiltonianModel, LagrangianTable, TorusGrid, VelocityGrid, legendre_transform, symmetric_dual
from .pipeline import ReportBundle, run_pipeline

__version__ = "0.1.0"
