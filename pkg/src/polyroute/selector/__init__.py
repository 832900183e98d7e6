"""Learned per-query configuration selector."""

from polyroute.selector.model import (
    HeadParams,
    build_input,
    head_forward,
    init_head,
    mse_dense,
    mse_sparse,
    predict,
    selection_mask,
)
from polyroute.selector.select import (
    argmax_index,
    select_offline,
    select_online,
    selector_metrics,
    softmax_probs,
    topk_indices,
)
from polyroute.selector.train import (
    Backbone,
    Hyper,
    TrainState,
    backward_and_step,
    evaluate,
    fit_offline,
    fit_online,
    train_offline,
    train_online,
)

__all__ = [
    "HeadParams",
    "build_input",
    "head_forward",
    "init_head",
    "mse_dense",
    "mse_sparse",
    "predict",
    "selection_mask",
    "argmax_index",
    "select_offline",
    "select_online",
    "selector_metrics",
    "softmax_probs",
    "topk_indices",
    "Backbone",
    "Hyper",
    "TrainState",
    "backward_and_step",
    "evaluate",
    "fit_offline",
    "fit_online",
    "train_offline",
    "train_online",
]
