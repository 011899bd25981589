"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Optional

import numpy as np

from src.autodiff.tensor import Tensor, backward, no_grad

# Below this magnitude the relative error turns into |a - n| / SMALL_GRADIENT,
# i.e. an absolute tolerance of tolerance * SMALL_GRADIENT.
SMALL_GRADIENT = 1e-3
_REFINE_FACTOR = 1e-2


@dataclass
class GradCheckResult:
    max_relative_error: float
    per_parameter: dict[str, float]
    checked_entries: int
    refined_entries: int = 0

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_relative_error <= tolerance


def relative_error(analytic: float, numeric: float, floor: float = SMALL_GRADIENT) -> float:
    """
    |a - n| / (|a| + |n|). When both gradients are smaller than `floor` the
    denominator is held at `floor`, so near-zero entries are compared on an
    absolute scale instead of amplifying round-off.
    """
    return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), floor)


def _central_difference(loss_fn: Callable[[], Tensor], p: Tensor, idx: tuple, step: float) -> float:
    original = p.data[idx]
    with no_grad():
        p.data[idx] = original + step
        plus = loss_fn().item()
        p.data[idx] = original - step
        minus = loss_fn().item()
    p.data[idx] = original
    return (plus - minus) / (2.0 * step)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    step: float = 1e-4,
    max_entries_per_param: Optional[int] = None,
    seed: int = 0,
    refine_above: float = 1e-5,
) -> GradCheckResult:
    """
    Compare `backward` gradients of `loss_fn()` with central differences.

    `loss_fn` must rebuild the loss from the current parameter values on
    every call. Large parameters can be spot-checked with
    `max_entries_per_param` (entries chosen with a seeded generator).

    An entry whose error exceeds `refine_above` is measured again with a
    step 100x smaller and keeps the better of the two; a stencil that
    straddles a ReLU kink disagrees at `step` only, a wrong analytic
    gradient disagrees at both.
    """
    for p in params.values():
        p.zero_grad()
    backward(loss_fn())
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in params.items()}

    rng = np.random.default_rng(seed)
    errors: dict[str, float] = {}
    checked = refined = 0
    for name, p in params.items():
        flat_indices = np.arange(p.size)
        if max_entries_per_param is not None and p.size > max_entries_per_param:
            flat_indices = np.sort(rng.choice(p.size, size=max_entries_per_param, replace=False))
        worst = 0.0
        for flat in flat_indices:
            idx = np.unravel_index(flat, p.shape)
            expected = float(analytic[name][idx])
            error = relative_error(expected, _central_difference(loss_fn, p, idx, step))
            if error > refine_above:
                fine = relative_error(expected, _central_difference(loss_fn, p, idx, step * _REFINE_FACTOR))
                error = min(error, fine)
                refined += 1
            worst = max(worst, error)
            checked += 1
        errors[name] = worst
    return GradCheckResult(
        max_relative_error=max(errors.values(), default=0.0),
        per_parameter=errors,
        checked_entries=checked,
        refined_entries=refined,
    )
