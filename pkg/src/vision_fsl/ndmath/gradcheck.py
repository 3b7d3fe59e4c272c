"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .value import no_grad


def _scalar(v) -> float:
    return v.item() if hasattr(v, "item") else float(v)


def numeric_grad(loss_fn, arr: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """d loss_fn() / d arr by central differences, perturbing ``arr`` in place."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = _scalar(loss_fn())
            flat[i] = orig - step
            down = _scalar(loss_fn())
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - n| / max(|a|, |n|, floor) over entries, measured against the largest entry scale.

    Entries are compared relative to ``max(||a||_inf, ||n||_inf)`` so that
    near-zero components do not blow up the ratio.
    """
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)
