"""Fair sheaf diffusion: topology-encoded fairness constraints for classifiers."""

from .data import (
    Dataset,
    SimulationConfig,
    SplitPlan,
    generate_simulation,
    load_csv,
    make_split,
    save_csv,
)
from .diffusion import (
    Continuous,
    DiffusionConfig,
    Discrete,
    diffuse,
    diffusion_matrix,
    kernel_projection,
)
from .errors import (
    ConfigurationError,
    DataError,
    DegenerateDataError,
    DivergenceError,
    FairSheafError,
    GroupSupportError,
    IngestionError,
    MetricNotApplicable,
    PartitionError,
    SelectionError,
    ShapeError,
    SizeCapError,
    SplitError,
)
from .experiments import (
    GridSpec,
    ParetoPoint,
    RunConfig,
    RunResult,
    emit_report,
    enumerate_configs,
    pareto_front,
    run_german_direction_check,
    run_grid,
    select_best,
)
from .explain import Attribution, aggregate_importance, shap_diffused, shap_linear
from .metrics import (
    FairnessReport,
    accuracy,
    balanced_accuracy,
    compute_report,
    consistency,
    generalized_entropy,
    independence,
    lipschitz,
    separation,
    sufficiency,
)
from .model import (
    LogisticModel,
    ProcessorMode,
    TrainConfig,
    classify,
    fit_logistic,
    load_model,
    predict_scores,
    run_pipeline,
    save_model,
)
from .sheaf import (
    Coboundary,
    IdentitySheaf,
    SheafLaplacian,
    VectorSheaf,
    build_coboundary,
    build_sheaf_laplacian,
    combine_laplacians,
    dirichlet_energy,
    normalize,
)
from .topology import (
    FairGraph,
    Partition,
    build_knn_graph,
    build_subset_graph,
    build_unit_ball_graph,
    partition_by_sensitive,
    quantile_distance,
    union_graphs,
)

__version__ = "0.1.0"
