"""Shared oracles for gradient certification."""

import numpy as np


def finite_difference_grad(loss_fn, vec, h=1e-5):
    """Central-difference gradient of loss_fn at vec, one coordinate at a time."""
    grad = np.zeros_like(vec)
    for i in range(vec.size):
        up, down = vec.copy(), vec.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (loss_fn(up) - loss_fn(down)) / (2.0 * h)
    return grad


def max_rel_error(analytic, numeric, floor=1e-5):
    """Worst-case relative disagreement; tiny magnitudes compare against the floor."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
