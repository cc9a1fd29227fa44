"""Shared test oracles.

The finite-difference checker only ever calls the forward path, so it
stays independent of the backward code it is used to verify.
"""

from __future__ import annotations

import numpy as np

from medrek.autodiff import Tensor

FD_H = 1e-5


def finite_difference(f, param: Tensor, h: float = FD_H, coords=None) -> dict[tuple, float]:
    """Central-difference derivative of scalar f() w.r.t. selected coords.

    f must recompute the forward pass from current parameter values on
    every call. Returns {index: d f / d param[index]}.
    """
    if coords is None:
        coords = list(np.ndindex(param.data.shape))
    out = {}
    for idx in coords:
        orig = param.data[idx]
        param.data[idx] = orig + h
        f_plus = f()
        param.data[idx] = orig - h
        f_minus = f()
        param.data[idx] = orig
        out[idx] = (f_plus - f_minus) / (2.0 * h)
    return out


def sample_coords(rng: np.random.Generator, shape: tuple[int, ...], limit: int) -> list[tuple]:
    """Deterministic subsample of tensor coordinates for spot checks."""
    all_coords = list(np.ndindex(shape))
    if len(all_coords) <= limit:
        return all_coords
    picks = rng.choice(len(all_coords), size=limit, replace=False)
    return [all_coords[int(i)] for i in picks]


def rel_err(a: float, b: float, floor: float = 1e-7) -> float:
    """Relative error with a floor so near-zero pairs compare as equal."""
    scale = max(abs(a), abs(b))
    if scale < floor:
        return 0.0
    return abs(a - b) / scale


def max_grad_rel_err(analytic: np.ndarray, f, param: Tensor, coords=None, h: float = FD_H) -> float:
    fd = finite_difference(f, param, h=h, coords=coords)
    return max(rel_err(float(analytic[idx]), val) for idx, val in fd.items())
