"""Central-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from ..errors import GradError
from .autodiff import Variable, backward
from .params import ParamStore


def grad_check(f: Callable[[], Variable], store: ParamStore, eps: float = 1e-5,
               max_coords: int = 200, rng: np.random.Generator | None = None,
               param_names: Iterable[str] | None = None) -> float:
    """Compare analytic gradients of ``f`` against central differences.

    ``f`` must rebuild its graph on every call, be deterministic given
    fixed seeds, and leave no side effects (no stat updates, no power
    iterations). Per parameter, up to ``max_coords`` coordinates are
    sampled (all coordinates when the tensor is small). Returns the
    maximum relative error with denominator max(|analytic|, |numeric|,
    1e-8).
    """
    rng = rng or np.random.default_rng(0)
    names = sorted(param_names) if param_names is not None else store.names()

    store.zero_grads()
    out = f()
    if not np.isfinite(out.data).all():
        raise GradError("objective is non-finite")
    backward(out)
    analytic = {n: (np.array(store.params[n].grad, copy=True)
                    if store.params[n].grad is not None
                    else np.zeros_like(store.params[n].data))
                for n in names}
    store.zero_grads()

    worst = 0.0
    for name in names:
        p = store.params[name]
        flat = p.data.reshape(-1)
        size = flat.size
        if size <= max_coords:
            coords = np.arange(size)
        else:
            coords = rng.choice(size, size=max_coords, replace=False)
        a_flat = analytic[name].reshape(-1)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + eps
            f_plus = f().item()
            flat[idx] = orig - eps
            f_minus = f().item()
            flat[idx] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise GradError(f"non-finite objective while perturbing {name}[{idx}]")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = a_flat[idx]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if rel > worst:
                worst = rel
    return worst
