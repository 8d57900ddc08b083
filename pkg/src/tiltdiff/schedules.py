"""Noise schedules, time grids, and per-step DDIM noise levels.

Convention: t=0 is clean data, t=1 is pure noise. A schedule maps t in [0, 1]
to coefficients (alpha_t, sigma_t) of the interpolation
x_t = alpha_t * x_0 + sigma_t * x_1 with x_1 ~ N(0, I).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateTimeError, DomainError

# Smallest positive time used anywhere; keeps 1/sigma_t and the final
# 1/alpha_t division of the sampler bounded.
T_MIN = 1e-3

_COSINE_OFFSET = 0.008
_COSINE_F0 = math.cos((_COSINE_OFFSET / (1.0 + _COSINE_OFFSET)) * math.pi / 2.0) ** 2


def _checked_time(t):
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
        raise DomainError(f"time must lie in [0, 1], got {t!r}")
    return t_arr


def cosine_schedule(t):
    """Cosine schedule: alpha(t)^2 = f(t)/f(0), f(t) = cos^2(((t+s)/(1+s)) * pi/2), s=0.008.

    Variance preserving: alpha^2 + sigma^2 = 1. Returns (alpha, sigma),
    elementwise for array input.
    """
    t_arr = _checked_time(t)
    f = np.cos(((t_arr + _COSINE_OFFSET) / (1.0 + _COSINE_OFFSET)) * (np.pi / 2.0)) ** 2
    alpha_sq = np.clip(f / _COSINE_F0, 0.0, 1.0)
    alpha = np.sqrt(alpha_sq)
    sigma = np.sqrt(1.0 - alpha_sq)
    if np.ndim(t) == 0:
        return float(alpha), float(sigma)
    return alpha, sigma


def linear_schedule(t):
    """Straight-line interpolation between data and noise: (alpha, sigma) = (1-t, t)."""
    t_arr = _checked_time(t)
    if np.ndim(t) == 0:
        return float(1.0 - t_arr), float(t_arr)
    return 1.0 - t_arr, t_arr.copy()


_SCHEDULE_FNS = {"cosine": cosine_schedule, "linear": linear_schedule}


@dataclass(frozen=True)
class NoiseSchedule:
    """Evaluable pair (alpha_t, sigma_t) with alpha(0)=1, sigma(0)=0, alpha(1)=0, sigma(1)=1."""

    kind: str = "cosine"

    def __post_init__(self):
        if self.kind not in _SCHEDULE_FNS:
            raise ConfigError(f"unknown schedule kind {self.kind!r}; choose from {sorted(_SCHEDULE_FNS)}")

    def alpha_sigma(self, t):
        return _SCHEDULE_FNS[self.kind](t)

    def alpha(self, t):
        return self.alpha_sigma(t)[0]

    def sigma(self, t):
        return self.alpha_sigma(t)[1]


@dataclass(frozen=True)
class TimeGrid:
    """Increasing times (t_0, ..., t_K) with t_0 = 0, t_K = 1 and t_1 >= t_min > 0."""

    times: np.ndarray
    t_min: float = T_MIN

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        times.setflags(write=False)
        object.__setattr__(self, "times", times)
        if times.ndim != 1 or times.size < 3:
            raise ConfigError("time grid needs at least the knots (0, t_min, 1)")
        if times[0] != 0.0 or times[-1] != 1.0:
            raise ConfigError("time grid must start at 0 and end at 1")
        if np.any(np.diff(times) <= 0.0):
            raise ConfigError("time grid must be strictly increasing")
        if not 0.0 < self.t_min <= times[1]:
            raise ConfigError(f"t_min must satisfy 0 < t_min <= t_1, got t_min={self.t_min}, t_1={times[1]}")

    @property
    def num_steps(self):
        """Number of reverse transitions, i.e. K for knots t_0..t_K."""
        return self.times.size - 1


def uniform_time_grid(num_steps, t_min=T_MIN):
    """Grid t_0=0, t_k = t_min + (k-1)(1-t_min)/(K-1) for k=1..K, so t_1=t_min, t_K=1."""
    if num_steps < 2:
        raise ConfigError(f"need at least 2 reverse steps, got {num_steps}")
    if not 0.0 < t_min < 1.0 / num_steps:
        raise ConfigError(f"t_min must satisfy 0 < t_min < 1/K, got t_min={t_min}, K={num_steps}")
    inner = t_min + (np.arange(num_steps) / (num_steps - 1)) * (1.0 - t_min)
    inner[-1] = 1.0
    times = np.concatenate([[0.0], inner])
    return TimeGrid(times=times, t_min=t_min)


def eta_for_step(schedule, t_lo, t_hi, eta_hat):
    """Noise level injected when stepping t_hi -> t_lo.

    eta = eta_hat * sigma(t_lo) * sqrt(1 - alpha(t_hi)^2 / alpha(t_lo)^2),
    which never exceeds sigma(t_lo); eta_hat=1 matches the ancestral DDPM
    amount, eta_hat=0 is the deterministic sampler.
    """
    if not 0.0 < t_lo <= t_hi <= 1.0:
        raise DomainError(f"need 0 < t_lo <= t_hi <= 1, got t_lo={t_lo}, t_hi={t_hi}")
    if not 0.0 <= eta_hat <= 1.0:
        raise DomainError(f"eta_hat must lie in [0, 1], got {eta_hat}")
    alpha_lo, sigma_lo = schedule.alpha_sigma(t_lo)
    alpha_hi, _ = schedule.alpha_sigma(t_hi)
    if alpha_lo <= 1e-12:
        raise DegenerateTimeError(f"alpha(t_lo) ~ 0 at t_lo={t_lo}; step is degenerate")
    ratio_sq = min((alpha_hi / alpha_lo) ** 2, 1.0)
    return eta_hat * sigma_lo * math.sqrt(1.0 - ratio_sq)


@dataclass(frozen=True)
class EtaSchedule:
    """Per-step noise levels for a grid; values[k-1] applies to the step down to times[k]."""

    eta_hat: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if np.any(values < 0.0):
            raise ConfigError("eta values must be nonnegative")


def eta_schedule(schedule, grid, eta_hat):
    """EtaSchedule for all reverse transitions of `grid` (destinations t_1..t_{K-1})."""
    times = grid.times
    values = [
        eta_for_step(schedule, times[k], times[k + 1], eta_hat)
        for k in range(1, grid.num_steps)
    ]
    return EtaSchedule(eta_hat=float(eta_hat), values=np.asarray(values))
