"""Feature-density OOD detection: a vector Glow flow over classifier features."""

import os


def _cap_threads() -> None:
    # honor FLOWOOD_THREADS before numpy/BLAS spin up their pools
    n = os.environ.get("FLOWOOD_THREADS")
    if not n:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, n)


_cap_threads()

from .errors import (  # noqa: E402
    FlowOodError,
    FormatError,
    NonFiniteError,
    ShapeError,
    ValidationError,
)
from .features import (  # noqa: E402
    FeatureSet,
    SyntheticSpec,
    generate_synthetic,
    l2_normalize,
    load_feature_set,
    save_feature_set,
    split,
)
from .flow import (  # noqa: E402
    FlowModel,
    TrainConfig,
    TrainHistory,
    deserialize,
    load_model,
    save_model,
    serialize,
    train,
)
from .metrics import (  # noqa: E402
    EvalReport,
    GeometryReport,
    auroc,
    evaluate,
    geometry_report,
    histogram,
    tolerance,
    uniformity,
)
from .scores import (  # noqa: E402
    ScoreVector,
    energy_score,
    fde_score,
    fit_react_threshold,
    msp_score,
    react_energy_score,
)

__version__ = "0.1.0"

__all__ = [
    "FlowOodError",
    "FormatError",
    "NonFiniteError",
    "ShapeError",
    "ValidationError",
    "FeatureSet",
    "SyntheticSpec",
    "generate_synthetic",
    "l2_normalize",
    "load_feature_set",
    "save_feature_set",
    "split",
    "FlowModel",
    "TrainConfig",
    "TrainHistory",
    "deserialize",
    "load_model",
    "save_model",
    "serialize",
    "train",
    "EvalReport",
    "GeometryReport",
    "auroc",
    "evaluate",
    "geometry_report",
    "histogram",
    "tolerance",
    "uniformity",
    "ScoreVector",
    "energy_score",
    "fde_score",
    "fit_react_threshold",
    "msp_score",
    "react_energy_score",
]
