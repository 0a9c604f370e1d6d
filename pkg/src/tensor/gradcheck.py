import logging
from typing import Callable, Optional

import numpy as np

from src.errors import ConfigError, NumericError
from src.tensor.core import Tensor, backward, no_grad

logger = logging.getLogger(__name__)

DENOMINATOR_FLOOR = 1e-8


def grad_check(
    fn: Callable[[Tensor], Tensor],
    inp: Tensor,
    step: float = 1e-5,
    wrt: Optional[Tensor] = None,
    max_points: Optional[int] = None,
    seed: int = 0,
) -> float:
    """
    Largest componentwise relative error between the tape gradient and
    central finite differences.

    The output is reduced to a scalar through a fixed random projection, so
    every output element contributes. `wrt` selects a parameter instead of the
    input; `max_points` limits the number of perturbed components.
    """
    if step <= 0:
        raise ConfigError(f"finite-difference step must be positive, got {step}")
    checked = inp if wrt is None else wrt
    checked.data = np.ascontiguousarray(checked.data)
    saved_flag = checked.requires_grad
    checked.requires_grad = True
    try:
        out = fn(inp)
        rng = np.random.default_rng(seed)
        projection = rng.standard_normal(out.shape).astype(out.dtype)
        analytic = backward(out, projection)[checked]
    finally:
        checked.requires_grad = saved_flag
    if not np.all(np.isfinite(out.data)) or not np.all(np.isfinite(analytic)):
        raise NumericError("non-finite value in forward output or analytic gradient")

    flat = checked.data.reshape(-1)
    indices = np.arange(flat.size)
    if max_points is not None and flat.size > max_points:
        indices = np.sort(rng.choice(flat.size, size=max_points, replace=False))

    worst = 0.0
    analytic_flat = analytic.reshape(-1)
    with no_grad():
        for index in indices:
            original = flat[index]
            flat[index] = original + step
            plus = fn(inp).data
            flat[index] = original - step
            minus = fn(inp).data
            flat[index] = original
            numeric = float(np.sum((plus - minus) * projection) / (2.0 * step))
            if not np.isfinite(numeric):
                raise NumericError(f"non-finite finite difference at component {index}")
            a = float(analytic_flat[index])
            error = abs(a - numeric) / max(abs(a), abs(numeric), DENOMINATOR_FLOOR)
            worst = max(worst, error)
    logger.debug(f"grad_check over {len(indices)} components: max relative error {worst:.3e}")
    return worst
