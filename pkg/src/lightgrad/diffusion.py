"""Mean-reverting forward diffusion and the score-matching objective.

The forward process drifts data toward a prior mean ``mu`` with a linear
rate schedule ``beta(t) = beta0 + (beta1 - beta0) * t / T``.  Conditioned on
``x0`` the marginal at time ``t`` is Gaussian::

    x_t ~ N((1 - alpha_t) * mu + alpha_t * x0, (1 - alpha_t**2) I)

with ``rho(t) = -int_0^t beta``, ``alpha_t = exp(rho / 2)``,
``sigma_t = sqrt(1 - exp(rho))`` and ``lambda_t = log(alpha_t / sigma_t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import DomainError, ShapeError


@dataclass(frozen=True)
class NoiseSchedule:
    beta0: float = 0.05
    beta1: float = 20.0
    horizon_T: float = 1.0
    t_min: float = 1e-3

    def __post_init__(self):
        if self.beta0 < 0 or self.beta1 < 0:
            raise DomainError("noise schedule rates must be non-negative")
        if self.beta0 == 0 and self.beta1 == 0:
            raise DomainError("noise schedule is identically zero")
        if not 0 < self.t_min < self.horizon_T:
            raise DomainError("need 0 < t_min < horizon_T")

    def beta(self, t):
        return self.beta0 + (self.beta1 - self.beta0) * (t / self.horizon_T)

    def rho(self, t):
        """Closed form of -int_0^t beta(s) ds; accepts floats or tensors."""
        return -(self.beta0 * t + (self.beta1 - self.beta0) * t * t / (2.0 * self.horizon_T))

    def alpha(self, t):
        r = self.rho(t)
        return torch.exp(0.5 * r) if torch.is_tensor(r) else math.exp(0.5 * r)

    def var(self, t):
        r = self.rho(t)
        return -torch.expm1(r) if torch.is_tensor(r) else -math.expm1(r)

    def sigma(self, t):
        v = self.var(t)
        return torch.sqrt(v) if torch.is_tensor(v) else math.sqrt(v)

    def lam(self, t):
        # log(alpha/sigma) = rho/2 - log(-expm1(rho))/2
        r = self.rho(t)
        if torch.is_tensor(r):
            return 0.5 * r - 0.5 * torch.log(-torch.expm1(r))
        return 0.5 * r - 0.5 * math.log(-math.expm1(r))

    def check_time(self, t: float) -> None:
        if not (self.t_min <= t <= self.horizon_T):
            raise DomainError(f"t={t!r} outside [{self.t_min}, {self.horizon_T}]")


@dataclass(frozen=True)
class ScheduleEval:
    t: float
    beta: float
    rho: float
    alpha: float
    sigma: float
    lambda_: float
    var: float


def schedule_eval(sched: NoiseSchedule, t: float) -> ScheduleEval:
    sched.check_time(t)
    rho = sched.rho(t)
    var = -math.expm1(rho)
    return ScheduleEval(
        t=t,
        beta=sched.beta(t),
        rho=rho,
        alpha=math.exp(0.5 * rho),
        sigma=math.sqrt(var),
        lambda_=0.5 * rho - 0.5 * math.log(var),
        var=var,
    )


def lambda_inverse(sched: NoiseSchedule, lam: float) -> float:
    """Time at which the half log-SNR equals ``lam``."""
    lo, hi = sched.lam(sched.horizon_T), sched.lam(sched.t_min)
    # endpoints are accepted with a few ulps of slack so grids built from lam() round-trip
    tol = 8 * math.ulp(max(abs(lo), abs(hi)))
    if not (lo - tol <= lam <= hi + tol):
        raise DomainError(f"lambda={lam!r} outside [{lo}, {hi}]")
    # exp(rho) = e^{2 lam} / (1 + e^{2 lam})  =>  -rho = log1p(e^{-2 lam})
    x = -2.0 * lam
    neg_rho = x + math.log1p(math.exp(-x)) if x > 0 else math.log1p(math.exp(x))
    # beta0 t + k t^2 = -rho, k = (beta1 - beta0) / 2T; cancellation-free positive root
    k = (sched.beta1 - sched.beta0) / (2.0 * sched.horizon_T)
    disc = sched.beta0 * sched.beta0 + 4.0 * k * neg_rho
    if disc < 0:
        raise DomainError(f"lambda={lam!r} not attained by this schedule")
    denom = sched.beta0 + math.sqrt(disc)
    t = 2.0 * neg_rho / denom
    return min(max(t, sched.t_min), sched.horizon_T)


def _same_shape(*tensors):
    shape = tensors[0].shape
    for other in tensors[1:]:
        if other.shape != shape:
            raise ShapeError(f"shape mismatch: {tuple(shape)} vs {tuple(other.shape)}")


def _per_item(value, like: torch.Tensor):
    """Broadcast a scalar or per-batch-item tensor of times against ``like``."""
    if torch.is_tensor(value) and value.dim() > 0:
        return value.reshape(value.shape + (1,) * (like.dim() - value.dim())).to(like)
    return value


def forward_sample(sched: NoiseSchedule, x0, mu, t, eps):
    """Draw x_t given x0 using caller-provided standard normal noise.

    ``t`` is a float or a tensor with one time per leading batch item.
    """
    _same_shape(x0, mu, eps)
    if torch.is_tensor(t):
        if torch.any(t < sched.t_min) or torch.any(t > sched.horizon_T):
            raise DomainError("t outside the valid time range")
    else:
        sched.check_time(t)
    rho = _per_item(sched.rho(t), x0)
    if torch.is_tensor(rho):
        alpha = torch.exp(0.5 * rho)
        std = torch.sqrt(-torch.expm1(rho))
    else:
        alpha = math.exp(0.5 * rho)
        std = math.sqrt(-math.expm1(rho))
    return (1.0 - alpha) * mu + alpha * x0 + std * eps


def score_target(eps, se: ScheduleEval):
    """Conditional score of x_t given x0, expressed through the noise draw."""
    if se.var <= 0:
        raise DomainError("score undefined where the conditional variance is zero")
    return -eps / math.sqrt(se.var)


def diffusion_loss(net, x0, mu, t, eps, sched: NoiseSchedule | None = None):
    """Mean squared error of ``sqrt(var_t) * score + eps`` over all elements.

    ``net`` is called as ``net(x_t, mu, t)``.
    """
    sched = sched or NoiseSchedule()
    xt = forward_sample(sched, x0, mu, t, eps)
    var = sched.var(t)
    std = torch.sqrt(_per_item(var, x0)) if torch.is_tensor(var) else math.sqrt(var)
    score = net(xt, mu, t)
    _same_shape(score, eps)
    return torch.mean((std * score + eps) ** 2)
