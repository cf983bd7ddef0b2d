"""Vectorized query-based driving model with intra-instance masked self-attention."""

from ._core import (
    Error,
    Model,
    RuntimeFailure,
    ValidationError,
    __version__,
    boxes_intersect,
    evaluate,
    generate_dataset,
    hungarian,
    intra_instance_mask,
    masked_softmax,
    op_gradient_errors,
    render_svg,
    train,
)

__all__ = [
    "Error",
    "Model",
    "RuntimeFailure",
    "ValidationError",
    "__version__",
    "boxes_intersect",
    "evaluate",
    "generate_dataset",
    "hungarian",
    "intra_instance_mask",
    "masked_softmax",
    "op_gradient_errors",
    "render_svg",
    "train",
]
