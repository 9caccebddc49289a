from .tape import (
    DimensionError,
    RecordingError,
    Tape,
    Var,
    Workspace,
    WorkspaceError,
    cos,
    exp,
    forward_eval,
    jacobian_dense,
    log,
    record,
    reverse_vjp,
    sin,
    vjp_batched,
)

__all__ = [
    "DimensionError",
    "RecordingError",
    "Tape",
    "Var",
    "Workspace",
    "WorkspaceError",
    "cos",
    "exp",
    "forward_eval",
    "jacobian_dense",
    "log",
    "record",
    "reverse_vjp",
    "sin",
    "vjp_batched",
]
