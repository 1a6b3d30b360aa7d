"""Reverse-time samplers for the mean-reverting diffusion.

Three integrators are provided over a decreasing time grid from ``T`` to
``t_min``:

* ``sde-euler``: Euler-Maruyama on the reverse SDE,
* ``ode-euler``: explicit Euler on the probability-flow ODE,
* ``dpm-solver-1``: the first-order exponential integrator, which solves
  the linear part of the centered ODE exactly and freezes the network term
  over each step.

The score callable has the signature ``score(x, mu, t) -> tensor``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from .diffusion import NoiseSchedule, lambda_inverse
from .errors import ConfigError, DomainError

ScoreFn = Callable[[torch.Tensor, torch.Tensor, float], torch.Tensor]

METHODS = ("sde-euler", "ode-euler", "dpm-solver-1")
SPACINGS = ("uniform-t", "uniform-lambda")
DEFAULT_SPACING = {
    "sde-euler": "uniform-t",
    "ode-euler": "uniform-t",
    "dpm-solver-1": "uniform-lambda",
}


@dataclass(frozen=True)
class TimeGrid:
    points: tuple[float, ...]
    nfe: int
    spacing: str


def make_grid(sched: NoiseSchedule, nfe: int, spacing: str = "uniform-t") -> TimeGrid:
    if nfe < 1:
        raise ConfigError("nfe must be at least 1")
    T, t_min = sched.horizon_T, sched.t_min
    if spacing == "uniform-t":
        pts = [T - (T - t_min) * i / nfe for i in range(nfe + 1)]
    elif spacing == "uniform-lambda":
        lam_T, lam_min = sched.lam(T), sched.lam(t_min)
        pts = [lambda_inverse(sched, lam_T + (lam_min - lam_T) * i / nfe) for i in range(nfe + 1)]
    else:
        raise ConfigError(f"unknown grid spacing {spacing!r}")
    pts[0], pts[-1] = T, t_min
    return TimeGrid(points=tuple(pts), nfe=nfe, spacing=spacing)


@dataclass(frozen=True)
class SamplerConfig:
    method: str = "dpm-solver-1"
    temperature: float = 1.5
    nfe: int = 4
    spacing: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown sampler method {self.method!r}")
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive")
        if self.nfe < 1:
            raise ConfigError("nfe must be at least 1")
        if self.spacing is not None and self.spacing not in SPACINGS:
            raise ConfigError(f"unknown grid spacing {self.spacing!r}")

    def grid(self, sched: NoiseSchedule) -> TimeGrid:
        return make_grid(sched, self.nfe, self.spacing or DEFAULT_SPACING[self.method])


def _check_step(s, h):
    if not h > 0:
        raise DomainError(f"step size must be positive, got {h!r}")


def sde_euler_step(sched: NoiseSchedule, x_s, mu, score, s: float, h: float, z):
    _check_step(s, h)
    b = sched.beta(s)
    return x_s - h * b * (0.5 * (mu - x_s) - score) + math.sqrt(b * h) * z


def ode_euler_step(sched: NoiseSchedule, x_s, mu, score, s: float, h: float):
    _check_step(s, h)
    return x_s - h * 0.5 * sched.beta(s) * ((mu - x_s) - score)


def dpm_solver1_step(sched: NoiseSchedule, y_s, mu, score_net: ScoreFn, s: float, t: float):
    """One exponential-integrator step on the centered state ``y = x - mu``."""
    if t > s:
        raise DomainError(f"target time {t!r} must not exceed start time {s!r}")
    if t == s:
        return y_s
    ratio = math.exp(0.5 * (sched.rho(t) - sched.rho(s)))
    coef = sched.sigma(t) * math.expm1(sched.lam(t) - sched.lam(s)) * sched.sigma(s)
    return ratio * y_s + coef * score_net(y_s + mu, mu, s)


def noise_generator(seed: int, index: int = 0) -> torch.Generator:
    """Independent torch generator for the stream ``(seed, index)``."""
    state = np.random.SeedSequence([int(seed), int(index)]).generate_state(1, dtype=np.uint64)[0]
    gen = torch.Generator()
    gen.manual_seed(int(state))
    return gen


def _randn(shape, dtype, gen):
    return torch.randn(shape, generator=gen, dtype=dtype)


def sample(score_net: ScoreFn, mu: torch.Tensor, cfg: SamplerConfig,
           sched: NoiseSchedule | None = None, index: int = 0,
           grid: TimeGrid | None = None) -> torch.Tensor:
    """Integrate from ``X_T = mu + z / sqrt(temperature)`` down to ``t_min``.

    Noise comes from the stream ``(cfg.seed, index)``; the result is a pure
    function of its arguments.
    """
    sched = sched or NoiseSchedule()
    grid = grid or cfg.grid(sched)
    gen = noise_generator(cfg.seed, index)
    z = _randn(mu.shape, mu.dtype, gen)
    x = mu + z / math.sqrt(cfg.temperature)
    pts = grid.points
    with torch.no_grad():
        for s, t in zip(pts[:-1], pts[1:]):
            if cfg.method == "dpm-solver-1":
                x = dpm_solver1_step(sched, x - mu, mu, score_net, s, t) + mu
            elif cfg.method == "ode-euler":
                x = ode_euler_step(sched, x, mu, score_net(x, mu, s), s, s - t)
            else:
                noise = _randn(mu.shape, mu.dtype, gen)
                x = sde_euler_step(sched, x, mu, score_net(x, mu, s), s, s - t, noise)
    return x


class GaussianTestbed:
    """Data distributed as N(m, gamma^2) per element, so every score is analytic.

    Under the forward process the marginal at time t is
    N((1 - a) mu + a m, a^2 gamma^2 + 1 - a^2) with a = alpha_t, and the
    probability-flow ODE is affine in x.
    """

    def __init__(self, sched: NoiseSchedule, m: float, gamma: float):
        self.sched = sched
        self.m = m
        self.gamma = gamma

    def marginal(self, mu, t):
        a = self.sched.alpha(t)
        return (1 - a) * mu + a * self.m, a * a * self.gamma ** 2 + 1 - a * a

    def score(self, x, mu, t):
        mean, var = self.marginal(mu, t)
        return -(x - mean) / var

    def ode_drift(self, x, mu, t):
        """dx/dt of the probability-flow ODE."""
        return 0.5 * self.sched.beta(t) * ((mu - x) - self.score(x, mu, t))

    def rk4_reference(self, x_T, mu, t_from: float | None = None, t_to: float | None = None,
                      steps: int = 10_000):
        """Classical RK4 on a uniform grid, integrating backward in time."""
        t0 = self.sched.horizon_T if t_from is None else t_from
        t1 = self.sched.t_min if t_to is None else t_to
        h = (t1 - t0) / steps
        x = x_T
        for i in range(steps):
            t = t0 + i * h
            k1 = self.ode_drift(x, mu, t)
            k2 = self.ode_drift(x + 0.5 * h * k1, mu, t + 0.5 * h)
            k3 = self.ode_drift(x + 0.5 * h * k2, mu, t + 0.5 * h)
            k4 = self.ode_drift(x + h * k3, mu, t + h)
            x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        return x

    def endpoint_error(self, method: str, nfe: int, x_T, mu, reference=None,
                       spacing: str | None = None) -> float:
        """Max abs deviation of a deterministic solve from the RK4 endpoint."""
        if method == "sde-euler":
            raise ConfigError("endpoint error is defined for deterministic methods only")
        grid = make_grid(self.sched, nfe, spacing or DEFAULT_SPACING[method])
        ref = self.rk4_reference(x_T, mu) if reference is None else reference
        x = x_T
        for s, t in zip(grid.points[:-1], grid.points[1:]):
            if method == "dpm-solver-1":
                x = dpm_solver1_step(self.sched, x - mu, mu, self.score, s, t) + mu
            else:
                x = ode_euler_step(self.sched, x, mu, self.score(x, mu, s), s, s - t)
        return float(torch.max(torch.abs(x - ref)))


def solver_error_table(testbed: GaussianTestbed, nfes: Sequence[int], x_T, mu,
                       methods: Sequence[str] = ("ode-euler", "dpm-solver-1")):
    """Rows ``(method, nfe, error)`` against a single shared RK4 reference."""
    ref = testbed.rk4_reference(x_T, mu)
    return [(m, n, testbed.endpoint_error(m, n, x_T, mu, reference=ref))
            for m in methods for n in nfes]
