"""Central finite-difference oracle for whole-model parameter gradients.

Every scalar parameter is perturbed independently; batches of perturbed
parameter sets are evaluated with ``torch.func.vmap`` so a few tens of
thousands of coordinates fit in a couple of minutes on one CPU core.

Step size rule, chosen from the finite-difference values only: a step of
``1e-6`` everywhere, and for coordinates whose estimate is below ``1e-5`` in
magnitude a second estimate with step ``1e-4`` replaces it. At ``1e-6`` one
ulp of an O(1) loss already contributes ~1e-10 of error, which is too coarse
for gradients near 1e-6; a larger step is safe for those weakly coupled
coordinates.
"""

import torch
from torch.func import functional_call, vmap

SMALL_STEP = 1e-6
LARGE_STEP = 1e-4
SMALL_GRAD = 1e-5
CHUNK = 128


def _central(loss_of, params, name, coords, h):
    p = params[name]
    n = p.numel()

    def f(delta):
        q = dict(params)
        q[name] = p + delta.view_as(p)
        return loss_of(q)

    vf = vmap(f, randomness="same")
    out = torch.empty(len(coords), dtype=p.dtype)
    for s in range(0, len(coords), CHUNK):
        idx = coords[s:s + CHUNK]
        d = torch.zeros(len(idx), n, dtype=p.dtype)
        d[torch.arange(len(idx)), idx] = h
        out[s:s + CHUNK] = (vf(d) - vf(-d)) / (2 * h)
    return out


def finite_difference_grads(model, loss_fn):
    """``{name: flat FD gradient}`` of ``loss_fn(output)`` w.r.t. every parameter of ``model``.

    ``loss_fn`` receives the model itself and a parameter dict to call it with
    via ``functional_call``.
    """
    params = {k: v.detach() for k, v in model.named_parameters()}

    def loss_of(q):
        return loss_fn(lambda *a, **kw: functional_call(model, q, a, kw))

    result = {}
    for name, p in params.items():
        coords = torch.arange(p.numel())
        fd = _central(loss_of, params, name, coords, SMALL_STEP)
        small = torch.nonzero(fd.abs() < SMALL_GRAD).view(-1)
        if len(small):
            fd[small] = _central(loss_of, params, name, coords[small], LARGE_STEP)
        result[name] = fd
    return result


def max_relative_error(analytic, numeric, abs_floor=1e-6, abs_tol=1e-3, rel_tol=1e-4):
    """Worst error as a multiple of its tolerance (<= 1 passes) and the offending index."""
    scale = torch.maximum(analytic.abs(), numeric.abs())
    err = (analytic - numeric).abs()
    ratio = torch.where(scale < abs_floor, err / abs_tol, err / (rel_tol * scale))
    i = int(torch.argmax(ratio))
    return float(ratio[i]), i
