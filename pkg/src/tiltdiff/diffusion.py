"""Base-model training by denoising score matching and DDIM sample generation."""

import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DegenerateTimeError,
    DomainError,
    NumericalFaultError,
    ScheduleViolationError,
    TrainingFaultError,
)
from .model import init_optimizer, optimizer_step
from .rngs import BASE_TRAIN_STREAM, child_rng
from .schedules import T_MIN

_ALPHA_FLOOR = 1e-8
_VALIDATION_FRACTION = 0.1


@dataclass(frozen=True)
class TrainConfig:
    """Base-training knobs; early stopping watches a 10% holdout."""

    epochs: int = 200
    batch_size: int = 128
    patience: int = 50
    dataset_size: int = 30_000
    seed: int = 0
    learning_rate: float = 1e-3
    t_min: float = T_MIN

    def __post_init__(self):
        for name in ("epochs", "batch_size", "patience", "dataset_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.patience > self.epochs:
            raise ConfigError("patience cannot exceed epochs")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float


def dsm_loss(model, batch, rng, t_min=T_MIN):
    """Monte-Carlo denoising score-matching loss on one batch.

    Per example: t ~ Unif[t_min, 1], x1 ~ N(0, I), x_t = a x0 + s x1;
    the loss is the mean squared noise-prediction error.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    if batch.shape[0] < 1:
        raise DomainError("batch must be non-empty")
    n = batch.shape[0]
    t = rng.uniform(t_min, 1.0, size=n)
    x1 = rng.standard_normal(batch.shape)
    alpha, sigma = model.schedule.alpha_sigma(t)
    xt = alpha[:, None] * batch + sigma[:, None] * x1
    eps = model.predict_eps(xt, t)
    return float(np.mean(np.sum((eps - x1) ** 2, axis=1)))


def train_base(dataset, model, config):
    """Mini-batch denoising score matching with early stopping on a holdout.

    Returns (model, trace); the model carries the best-validation parameters
    seen during the run, and the trace has one EpochStats per completed epoch.
    """
    dataset = np.atleast_2d(np.asarray(dataset, dtype=float))
    if dataset.shape[0] < config.batch_size:
        raise ConfigError(
            f"dataset size {dataset.shape[0]} smaller than batch size {config.batch_size}"
        )
    rng = child_rng(config.seed, BASE_TRAIN_STREAM)
    n = dataset.shape[0]
    n_val = max(1, round(_VALIDATION_FRACTION * n))
    perm = rng.permutation(n)
    val_x0 = dataset[perm[:n_val]]
    train_x0 = dataset[perm[n_val:]]

    # Frozen validation pairs keep the early-stopping signal comparable
    # across epochs.
    val_t = rng.uniform(config.t_min, 1.0, size=n_val)
    val_noise = rng.standard_normal(val_x0.shape)
    val_a, val_s = model.schedule.alpha_sigma(val_t)
    val_xt = val_a[:, None] * val_x0 + val_s[:, None] * val_noise

    params = model.parameters()
    optimizer = init_optimizer(params, learning_rate=config.learning_rate)
    best_val = math.inf
    best_params = [p.copy() for p in params]
    stale = 0
    trace = []

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(train_x0.shape[0])
        epoch_losses = []
        for start in range(0, train_x0.shape[0], config.batch_size):
            idx = order[start:start + config.batch_size]
            x0 = train_x0[idx]
            t = rng.uniform(config.t_min, 1.0, size=len(idx))
            noise = rng.standard_normal(x0.shape)
            alpha, sigma = model.schedule.alpha_sigma(t)
            xt = alpha[:, None] * x0 + sigma[:, None] * noise
            try:
                loss, grads = model.loss_and_grad(xt, t, noise)
            except NumericalFaultError as exc:
                raise TrainingFaultError(f"training diverged at epoch {epoch}: {exc}") from exc
            optimizer_step(optimizer, params, grads)
            epoch_losses.append(loss)

        val_loss = model.loss_value(val_xt, val_t, val_noise)
        if not math.isfinite(val_loss):
            raise TrainingFaultError(f"validation loss diverged at epoch {epoch}")
        trace.append(EpochStats(epoch, float(np.mean(epoch_losses)), val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best_params = [p.copy() for p in params]
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    model.set_parameters(best_params)
    return model, trace


def ddim_step(model, x, t_hi, t_lo, eta, z):
    """One reverse transition t_hi -> t_lo.

    Predicts the noise, reconstructs the clean estimate, and recombines:
    a_lo x0_hat + sqrt(s_lo^2 - eta^2) x1_hat + eta z. z is ignored when
    eta = 0.
    """
    if not t_lo < t_hi <= 1.0:
        raise DomainError(f"need t_lo < t_hi <= 1, got t_lo={t_lo}, t_hi={t_hi}")
    alpha_hi, sigma_hi = model.schedule.alpha_sigma(t_hi)
    alpha_lo, sigma_lo = model.schedule.alpha_sigma(t_lo)
    if alpha_hi <= _ALPHA_FLOOR:
        raise DegenerateTimeError(f"alpha(t_hi) ~ 0 at t_hi={t_hi}; cannot reconstruct x0")
    if eta > sigma_lo + 1e-12:
        raise ScheduleViolationError(f"eta={eta} exceeds sigma(t_lo)={sigma_lo}")
    x = np.asarray(x, dtype=float)
    x1_hat = model.predict_eps(x, t_hi)
    x0_hat = (x - sigma_hi * x1_hat) / alpha_hi
    drift = alpha_lo * x0_hat + math.sqrt(max(sigma_lo**2 - eta**2, 0.0)) * x1_hat
    if eta == 0.0:
        return drift
    return drift + eta * np.asarray(z, dtype=float)


def ddim_sample(model, grid, etas, n, rng):
    """Reverse chain from N(0, I) down the grid, plus the final clean projection.

    The first transition leaves t=1, where alpha vanishes for both schedules
    and the x0 reconstruction is ill-posed; there the state *is* the noise,
    so the step uses x1_hat = x and a zero clean estimate. Every later step
    re-estimates x0 from the current state, which absorbs the O(alpha) start-up
    bias.
    """
    if n < 1:
        raise DomainError(f"need n >= 1, got {n}")
    times = grid.times
    k_top = grid.num_steps
    x = rng.standard_normal((n, model.dim))

    for k in range(k_top - 1, 0, -1):
        t_hi, t_lo = times[k + 1], times[k]
        eta = etas.values[k - 1]
        z = rng.standard_normal((n, model.dim))
        if k == k_top - 1 and model.schedule.alpha(t_hi) <= _ALPHA_FLOOR:
            _, sigma_lo = model.schedule.alpha_sigma(t_lo)
            x = math.sqrt(max(sigma_lo**2 - eta**2, 0.0)) * x + eta * z
        else:
            x = ddim_step(model, x, t_hi, t_lo, eta, z)

    t1 = times[1]
    alpha1, sigma1 = model.schedule.alpha_sigma(t1)
    if alpha1 <= _ALPHA_FLOOR:
        raise DegenerateTimeError(f"alpha(t_1) ~ 0 at t_1={t1}; final denoising is degenerate")
    out = (x - sigma1 * model.predict_eps(x, t1)) / alpha1
    if not np.all(np.isfinite(out)):
        raise NumericalFaultError("sampler produced non-finite values")
    return out


def timed_ddim_sample(model, grid, etas, n, rng):
    """ddim_sample plus wall-clock seconds, for runtime accounting."""
    start = time.perf_counter()
    out = ddim_sample(model, grid, etas, n, rng)
    return out, time.perf_counter() - start
