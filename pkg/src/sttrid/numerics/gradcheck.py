"""Central finite-difference verification of backward rules."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tape, Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def finite_difference_check(
    f: Callable[..., Tensor],
    x: Sequence[np.ndarray | Parameter] | np.ndarray,
    h: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Largest relative error between backward-pass and central-difference gradients.

    ``f`` receives one tensor per entry of ``x`` and must return a scalar.
    Entries that are already :class:`Parameter` objects are perturbed in
    place, so ``f`` may also close over them (model weights).  When
    ``max_coords`` is set, at most that many coordinates per input are probed,
    chosen by ``seed``.
    """
    if isinstance(x, np.ndarray):
        x = [x]
    params = [p if isinstance(p, Parameter) else Parameter(np.array(p, dtype=float), name=f"x{i}")
              for i, p in enumerate(x)]
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        out = f(*params)
    tape.backward(out)
    analytic = [p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            up = float(f(*params).data)
            flat[i] = orig - h
            down = float(f(*params).data)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            worst = max(worst, float(relative_error(a.reshape(-1)[i], numeric)))
    for p in params:
        p.zero_grad()
    return worst
