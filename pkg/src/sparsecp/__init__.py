"""Mirror-corrected Mallows's Cp for selection without shrinkage.

Tree-structured change-point detection through the adaptive unbalanced Haar
transform, and sparse Gaussian graphical models by nodewise lasso selection
followed by constrained maximum likelihood.
"""

from .criteria import (CriterionCurve, DofTable, FitSummary, ReplicateError, Selection,
                       fixed_selector, gcv, gcv_curve, mallows_cp, mc_dof, naive_cp_curve,
                       refined_cp_curve, soft_threshold, threshold_selector)
from .treeselect import (CycleError, Forest, MassSpec, SubtreePath, best_subtrees,
                         brute_force_subtrees, subtree_masses, tree_selector)
from .auht import (ChangepointResult, ContrastSpec, RefinementTree, auht_selector, build_auht,
                   changepoint_dof, detail_variances, forward, inverse, pilot_intensity,
                   select_changepoints)
from .lasso import (LassoPath, SingularDesignError, lasso_cd, lasso_path, lasso_selector,
                    ols_refit, pilot_sigma2, sigma2_from_sse, standardize_columns)
from .graph import (DofConfig, EdgeSelection, NodewiseFit, NotAscentError, PrecisionEstimate,
                    SampleCov, constrained_ml, line_search, loglik, nodewise_coefficients,
                    nodewise_fit, nodewise_select, symmetrize)
from .simulate import (BlocksSpec, GeoGraphSpec, blocks_intensity, blocks_poisson, edges_of,
                       evaluate_changepoints, evaluate_edges, geo_graph, oracle_pe_curve,
                       true_pe_curve)

__version__ = "0.1.0"
