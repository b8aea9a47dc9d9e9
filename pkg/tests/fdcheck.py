"""Central finite-difference oracle for gradient tests (float64 only)."""

import torch


def directional_errors(loss_fn, params, n_dirs=2, eps=1e-6, seed=0, floor=1e-6):
    """Relative error between autograd and central differences along random
    directions, per named parameter group.

    ``loss_fn()`` must recompute the loss from the current values of
    ``params`` (an iterable of (name, tensor) with requires_grad). The
    denominator is floored at ``floor`` times the largest directional
    derivative seen, so groups whose true gradient is zero (e.g. a softmax
    key bias) are judged on absolute error instead of noise ratios.
    """
    params = list(params)
    for _, p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    grads = {name: p.grad.detach().clone() for name, p in params}
    gen = torch.Generator().manual_seed(seed)
    pairs = {}
    with torch.no_grad():
        for name, p in params:
            pairs[name] = []
            for _ in range(n_dirs):
                d = torch.randn(p.shape, generator=gen, dtype=p.dtype)
                analytic = float((grads[name] * d).sum())
                p.add_(eps * d)
                up = float(loss_fn())
                p.sub_(2 * eps * d)
                down = float(loss_fn())
                p.add_(eps * d)
                pairs[name].append((analytic, (up - down) / (2 * eps)))
    top = max(max(abs(a), abs(n)) for vals in pairs.values() for a, n in vals)
    return {
        name: max(abs(a - n) / max(abs(a), abs(n), floor * top, 1e-300) for a, n in vals)
        for name, vals in pairs.items()
    }


def elementwise_error(fn, x, eps=1e-6):
    """Max relative error of d fn / d x over every element of ``x``."""
    x = x.detach().clone().requires_grad_(True)
    fn(x).backward()
    analytic = x.grad.detach().clone()
    numeric = torch.zeros_like(x)
    with torch.no_grad():
        flat = x.view(-1)
        for i in range(flat.numel()):
            flat[i] += eps
            up = float(fn(x))
            flat[i] -= 2 * eps
            down = float(fn(x))
            flat[i] += eps
            numeric.view(-1)[i] = (up - down) / (2 * eps)
    scale = torch.maximum(analytic.abs().max(), numeric.abs().max())
    return float((analytic - numeric).abs().max() / scale)
