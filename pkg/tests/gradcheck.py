"""Finite-difference check of the ranking-loss gradients on small random models."""

import numpy as np

from lecseg.embedder import batch_loss, init_params
from lecseg.embedder.model import PARAM_ORDER, embed_clips, embed_texts, hinge_arguments

from oracles import finite_difference

KINK_TOL = 1e-6
STEP = 1e-5


def random_problem(seed, embed_dim=8, dim=4, batch=4, ocr_proj_dim=4):
    rng = np.random.default_rng(seed)
    params = init_params(dim, dim, dim, dim, embed_dim=embed_dim, ocr_proj_dim=ocr_proj_dim, seed=seed)
    for name in PARAM_ORDER:
        arr = getattr(params, name)
        if name.startswith("b"):
            arr[:] = 0.1 * rng.standard_normal(arr.shape)
    inputs = [rng.standard_normal((batch, dim)) for _ in range(4)]
    return params, inputs


def hinge_args(params, inputs, margin):
    v2d, v3d, ocr, text = inputs
    f = embed_clips(params, v2d, v3d, ocr)
    g = embed_texts(params, text)
    f = f / np.linalg.norm(f, axis=1, keepdims=True)
    g = g / np.linalg.norm(g, axis=1, keepdims=True)
    a, b = hinge_arguments(f @ g.T, margin)
    off = ~np.eye(a.shape[0], dtype=bool)
    return np.concatenate([a[off], b[off]])


def gradient_errors(seed, margin=0.1, floor=1e-12):
    """Per-coordinate relative errors ``|a - n| / max(|a|, |n|, floor)``.

    Coordinates where a perturbation by ``STEP`` brings any hinge argument
    within ``KINK_TOL`` of zero, or flips its sign, are skipped. Returns
    ``(errors, n_checked, n_skipped, loss)``.
    """
    params, inputs = random_problem(seed)
    loss, grads = batch_loss(params, *inputs, margin=margin)
    errors, skipped = [], 0

    def loss_fn():
        return batch_loss(params, *inputs, margin=margin, with_grad=False)[0]

    for name in PARAM_ORDER:
        arr = getattr(params, name)
        analytic = getattr(grads, name)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + STEP
            up = hinge_args(params, inputs, margin)
            arr[idx] = old - STEP
            down = hinge_args(params, inputs, margin)
            arr[idx] = old
            if np.any(np.abs(up) < KINK_TOL) or np.any(np.abs(down) < KINK_TOL) or np.any(np.sign(up) != np.sign(down)):
                skipped += 1
                continue
            numeric = finite_difference(loss_fn, _view(arr, idx), STEP)[0]
            a = analytic[idx]
            errors.append(abs(a - numeric) / max(abs(a), abs(numeric), floor))
    return np.array(errors), len(errors), skipped, loss


def _view(arr, idx):
    """1-element view of ``arr[idx]`` so :func:`finite_difference` perturbs it in place."""
    flat = np.ravel_multi_index(idx, arr.shape) if arr.ndim else 0
    return arr.reshape(-1)[flat: flat + 1]
