"""Finite-difference check of reverse-mode gradients."""

from __future__ import annotations

import numpy as np
import torch

from ..errors import LightDiffusionError, ValidationError


def _leaves(params):
    if isinstance(params, torch.nn.Module):
        return [p for p in params.parameters()]
    return list(params)


def grad_check(forward, params, inputs, loss=None, n_samples: int = 100,
               step: float = 1e-4, seed: int = 0) -> float:
    """Max relative error between autograd and central differences.

    Parameters
    ----------
    forward : callable
        ``forward(*inputs) -> Tensor``.
    params : nn.Module or sequence of leaf tensors
        Tensors to differentiate with respect to (inputs may be included).
        All must be float64.
    inputs : tuple of tensors
    loss : callable, optional
        Maps the forward output to a scalar.  Defaults to the squared error
        against a fixed random target, which is smooth in the output.
    n_samples : int
        Number of scalar entries, drawn uniformly over all parameters.
    """
    leaves = _leaves(params)
    if any(p.dtype != torch.float64 for p in leaves):
        raise ValidationError("grad_check needs float64 parameters")
    if not isinstance(inputs, (tuple, list)):
        inputs = (inputs,)
    for p in leaves:
        p.requires_grad_(True)

    if loss is None:
        with torch.no_grad():
            out0 = forward(*inputs)
        gen = torch.Generator().manual_seed(seed + 1)
        target = torch.rand(out0.shape, generator=gen, dtype=torch.float64)

        def loss(out):
            return ((out - target) ** 2).sum()

    for p in leaves:
        p.grad = None
    value = loss(forward(*inputs))
    grads = torch.autograd.grad(value, leaves)
    if not all(torch.all(torch.isfinite(g)) for g in grads):
        raise LightDiffusionError("non-finite gradient")

    sizes = np.array([p.numel() for p in leaves])
    rng = np.random.default_rng(seed)
    flat_ids = rng.choice(sizes.sum(), size=min(n_samples, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    with torch.no_grad():
        for fid in flat_ids:
            li = int(np.searchsorted(offsets, fid, side="right") - 1)
            idx = int(fid - offsets[li])
            p = leaves[li].view(-1)
            orig = p[idx].item()
            p[idx] = orig + step
            lp = loss(forward(*inputs)).item()
            p[idx] = orig - step
            lm = loss(forward(*inputs)).item()
            p[idx] = orig
            g_fd = (lp - lm) / (2 * step)
            g_ad = grads[li].reshape(-1)[idx].item()
            if not np.isfinite(g_fd):
                raise LightDiffusionError("non-finite finite-difference estimate")
            rel = abs(g_ad - g_fd) / max(abs(g_ad), abs(g_fd), 1e-8)
            worst = max(worst, rel)
    return worst
