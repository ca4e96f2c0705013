"""Python bindings for the rope dynamics library."""

from ._core import (
    Dataset,
    EnvConfig,
    Model,
    collect,
    cosine_sim,
    evaluate,
    forward_nce_loss,
    geom_error,
    gradcheck,
    imitate,
    init_model,
    inverse_nce_loss,
    make_demo,
    make_goal,
    plan_episode,
    reset,
    run_cli,
    sample_action,
    step,
    train,
)

__all__ = [
    "Dataset",
    "EnvConfig",
    "Model",
    "collect",
    "cosine_sim",
    "evaluate",
    "forward_nce_loss",
    "geom_error",
    "gradcheck",
    "imitate",
    "init_model",
    "inverse_nce_loss",
    "make_demo",
    "make_goal",
    "plan_episode",
    "reset",
    "run_cli",
    "sample_action",
    "step",
    "train",
]
