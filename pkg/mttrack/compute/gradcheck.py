"""
Finite-difference verification of reverse-mode gradients.

`f` must be deterministic and scalar-valued; with a non-deterministic `f`
the reported error is meaningless. The check perturbs the inputs' buffers in
place and restore them afterwards, so run checks in fp64.
"""
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from mttrack.compute.tensor import Tensor, no_grad
from mttrack.core.exceptions import ContractError

Inputs = Union[Tensor, Sequence[Tensor]]


def _as_list(x: Inputs) -> List[Tensor]:
    return [x] if isinstance(x, Tensor) else list(x)


def grad_check(
    f: Callable[..., Tensor],
    x: Inputs,
    eps: float = 1e-5,
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> float:
    """
    Max over checked coordinates of |analytic - central difference| / max(1, |central difference|).

    `x` may be one tensor or a list of tensors; `f` is called with `x` unchanged.
    `max_coords` limits the number of checked coordinates per tensor (seeded sample).
    """
    inputs = _as_list(x)
    for t in inputs:
        t.requires_grad = True
        t.grad = None

    out = f(x)
    if out.size != 1:
        raise ContractError(
            user_message=f"grad_check needs a scalar-valued function, got shape {out.shape}.",
        )
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for t, grad in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            for i in coords:
                original = flat[i]
                flat[i] = original + eps
                plus = f(x).item()
                flat[i] = original - eps
                minus = f(x).item()
                flat[i] = original
                numeric = (plus - minus) / (2.0 * eps)
                err = abs(grad.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
                worst = max(worst, float(err))
    return worst
