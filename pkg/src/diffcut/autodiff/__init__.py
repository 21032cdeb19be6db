"""Runtime reverse-mode differentiation."""

from diffcut.autodiff.tape import (
    DEFAULT_MEMORY_BUDGET,
    Gradients,
    Tape,
    TapeMemoryError,
    Var,
    is_var,
    tape_of,
    value,
)

__all__ = [
    "DEFAULT_MEMORY_BUDGET",
    "Gradients",
    "Tape",
    "TapeMemoryError",
    "Var",
    "is_var",
    "tape_of",
    "value",
]
