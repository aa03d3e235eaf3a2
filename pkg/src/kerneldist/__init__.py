"""Kernel distance between weighted point sets.

Exact evaluation, a WSPD estimator, random Fourier and Taylor feature maps,
random coresets and translation / rigid alignment search. The hot loops run
in a compiled extension when it is built and fall back to NumPy otherwise;
``kerneldist._backend.backend_name()`` reports which one is active.
"""
from importlib import resources

from .align import (AlignmentResult, RigidMotion, best_rigid_motion, best_rigid_motion_coreset,
                    best_translation, best_translation_coreset, rotation_grid, translation_grid)
from .core import (GaussianKernel, TrivialKernel, WeightedPoint, WeightedPointSet, kappa_exact,
                   kernel_distance_exact, kernel_distance_sq_exact, kernel_eval, lipschitz_bound,
                   tail_radius)
from .coreset import (Coreset, DiscrepancyReport, ball_discrepancy, coreset_feature_bound,
                      coreset_feature_verified, coreset_random, coreset_size_feature,
                      coreset_size_random, discrepancy_report, kernel_discrepancy)
from .errors import (BasisMismatchError, BudgetExceededError, DimensionMismatchError,
                     InvalidParameterError, KernelDistError, NumericalInstabilityError,
                     ParseError, UnsupportedDimensionError)
from .features import (FeatureVector, FourierBasis, TaylorBasis, draw_frequencies, embed,
                       ifgt_choose_tau, ifgt_embed, ifgt_error_bound, kernel_distance_features,
                       make_taylor_basis, multiindex_enumerate, nn_query, rff_dimension,
                       rff_dimension_domain, rff_embed)
from .reduce import (OrientedPointSet, grid_compress, kappa_oriented, kernel_distance_sq_oriented,
                     sample_discretize, split_orientation)
from .wspd import (WspdDecomposition, build_wspd, kappa_wspd, kernel_distance_wspd,
                   wspd_estimate)

__version__ = "0.1.0"


def sample_path(name: str = "sample_p.csv") -> str:
    """Path of a bundled sample file (``sample_p.csv`` or ``sample_q.csv``).

    Both hold 500 unit-mass points in the plane.
    """
    return str(resources.files(__package__).joinpath("data", name))
