import pytest
import torch

torch.set_num_threads(1)

# gradients below this magnitude are compared in absolute terms, so exact
# structural zeros (e.g. attention key biases) are held to |error| < 1e-10
REL_FLOOR = 1e-5


@pytest.fixture
def sched():
    from lightgrad.diffusion import NoiseSchedule
    return NoiseSchedule()


@pytest.fixture
def rng():
    import numpy as np
    return np.random.default_rng(1234)


def _five_point(f_at, h):
    """Fourth-order central difference of a scalar function of one offset."""
    return (8 * (f_at(h) - f_at(-h)) - (f_at(2 * h) - f_at(-2 * h))) / (12 * h)


def finite_difference_check(fn, params, h=1e-4, coords_per_tensor=4, directions=2, seed=0):
    """Compare autograd gradients of scalar ``fn()`` with finite differences.

    Checks a random subset of coordinates of every tensor plus a few random
    directional derivatives over all of them; returns the worst relative error.
    The five-point stencil keeps truncation error at O(h^4).
    """
    gen = torch.Generator().manual_seed(seed)
    for p in params:
        p.grad = None
    fn().backward()
    # parameters the loss never reaches have no .grad; their gradient is zero
    grads = [torch.zeros_like(p) if p.grad is None else p.grad.detach().clone() for p in params]
    worst = 0.0

    def rel(a, b):
        return abs(a - b) / max(abs(a), abs(b), REL_FLOOR)

    with torch.no_grad():
        for p, g in zip(params, grads):
            flat, gflat = p.data.view(-1), g.view(-1)
            k = min(coords_per_tensor, flat.numel())
            for i in torch.randperm(flat.numel(), generator=gen)[:k].tolist():
                old = float(flat[i])

                def at(off):
                    flat[i] = old + off
                    val = float(fn())
                    flat[i] = old
                    return val
                worst = max(worst, rel(_five_point(at, h), float(gflat[i])))
        for _ in range(directions):
            dirs = [torch.randn(p.shape, generator=gen, dtype=p.dtype) for p in params]
            norm = torch.sqrt(sum((d ** 2).sum() for d in dirs))
            dirs = [d / norm for d in dirs]
            analytic = float(sum((g * d).sum() for g, d in zip(grads, dirs)))
            base = [p.data.clone() for p in params]

            def along(off):
                for p, b, d in zip(params, base, dirs):
                    p.data.copy_(b + off * d)
                val = float(fn())
                for p, b in zip(params, base):
                    p.data.copy_(b)
                return val
            worst = max(worst, rel(_five_point(along, h), analytic))
    return worst


@pytest.fixture
def fd_check():
    return finite_difference_check
