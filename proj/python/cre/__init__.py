"""Classification-reconstruction encoders: training harness, PCN reference,
PCA/random-projection baselines and reporting, backed by the C++ core."""

from ._cre import (
    CreError,
    Model,
    PcnModel,
    RunConfig,
    canonical_lambdas,
    derive_seed,
    describe,
    fit_pca,
    load_idx,
    plot_scaling,
    plot_tradeoff,
    random_projection,
    train,
)

__all__ = [
    "CreError",
    "Model",
    "PcnModel",
    "RunConfig",
    "canonical_lambdas",
    "derive_seed",
    "describe",
    "fit_pca",
    "load_idx",
    "plot_scaling",
    "plot_tradeoff",
    "random_projection",
    "train",
]
