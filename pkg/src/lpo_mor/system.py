"""The linear-dynamics, polynomial-output (LPO) system data model."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cp_tensor import CPVector, cp_eval
from .errors import ValidationError
from .lyapunov import check_stable

__all__ = ["LPOSystem"]


@dataclass(frozen=True)
class LPOSystem:
    """``x' = A x + B u``, ``y = sum_k c_k^T (x (x) ... (x) x)``.

    ``outputs[k - 1]`` is the order-``k`` coefficient ``c_k``; pass ``None``
    for an absent degree (it is replaced by the zero CP vector).
    """

    A: np.ndarray
    B: np.ndarray
    outputs: tuple = field(default=())
    check_stability: bool = True

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        B = np.array(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValidationError(f"A must be square, got shape {A.shape}")
        n = A.shape[0]
        if B.ndim != 2 or B.shape[0] != n:
            raise ValidationError(f"B must have {n} rows, got shape {B.shape}")
        outs = []
        for k, c in enumerate(self.outputs, start=1):
            if c is None:
                c = CPVector.zero(k, n)
            if not isinstance(c, CPVector):
                raise ValidationError(f"output c_{k} must be a CPVector")
            if c.order != k or c.dim != n:
                raise ValidationError(
                    f"output c_{k} has order {c.order} and dim {c.dim}, "
                    f"expected order {k} and dim {n}")
            outs.append(c)
        if not outs:
            raise ValidationError("at least one output coefficient is required")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "outputs", tuple(outs))
        if self.check_stability:
            check_stable(A)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def d(self) -> int:
        return len(self.outputs)

    def output(self, x: np.ndarray) -> float | np.ndarray:
        """Output map ``y(x)``; ``x`` may be a batch of shape ``(N, n)``."""
        return sum(cp_eval(c, x) for c in self.outputs)

    def with_outputs(self, outputs: Sequence[CPVector]) -> "LPOSystem":
        return LPOSystem(self.A, self.B, tuple(outputs), self.check_stability)
