"""Dynamic pricing with online product clustering.

Simulation library and CLI for contextual dynamic pricing policies that
cluster products on the fly (confidence-ball neighborhoods or k-means) and
price with a semi-myopic rule, benchmarked against single-product and
single-cluster baselines on synthetic generalized-linear demand.
"""

from .clustering import KMeansResult, Neighborhood, build_neighborhood, kmeans
from .config import ExperimentConfig, InstanceSpec, RunSpec, list_presets, \
    load_preset
from .demand import ClusterInstance, CovariateMode, Link, \
    MisspecCoefficients, ThetaVector, generate_cluster_instance, \
    purchase_probability, sample_arrival, sample_context, sample_purchase
from .errors import ConfigError, EstimationError, MetricError, PricesimError
from .estimation import EstimateWithBound, ProductHistory, SalesRecord, \
    alpha_hat_ridge, beta_hat_linear, confidence_bound_glm, \
    confidence_bound_linear, covariate_variation_check, glm_mle, \
    min_eigenvalue
from .harness import ExperimentSummary, RegretTrace, aggregate, oracle_price, \
    percentage_revenue_loss, run_experiment, run_replication
from .kernels import BACKEND as KERNEL_BACKEND
from .policy import PolicyConfig, PolicyKind, PolicyState, perturbation, \
    policy_price, policy_update, price_optimize, project_price

__version__ = "0.1.0"
