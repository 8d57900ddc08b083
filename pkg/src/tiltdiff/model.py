"""Score network built from scratch: an MLP over [x, fourier(t)] that predicts
the noise component, with hand-written reverse-mode gradients and an Adam
optimizer. No autodiff framework; the backward pass covers exactly this graph.
"""

import copy
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ContractError, DegenerateTimeError, DomainError, NumericalFaultError
from .rngs import child_rng

_SCORE_SIGMA_FLOOR = 1e-8


def _silu(z):
    return z * expit(z)


def _silu_grad(z):
    s = expit(z)
    return s * (1.0 + z * (1.0 - s))


class ScoreModel:
    """MLP denoiser: input [x | fourier time embedding] -> hidden stack -> noise estimate.

    The Fourier frequency table is fixed at construction and never trained.
    The score is the noise estimate divided by -sigma_t, so the model and its
    schedule travel together.
    """

    def __init__(self, schedule, frequencies, layer_weights, layer_biases, seed):
        self.schedule = schedule
        self.frequencies = np.asarray(frequencies, dtype=float).copy()
        self.frequencies.setflags(write=False)
        self.layer_weights = [np.array(w, dtype=float) for w in layer_weights]
        self.layer_biases = [np.array(b, dtype=float) for b in layer_biases]
        self.seed = seed
        self.dim = self.layer_weights[-1].shape[1]

    @classmethod
    def create(cls, dim, schedule, seed, hidden_width=256, depth=5, fourier_dim=128,
               fourier_scale=16.0):
        """Seeded init: uniform fan-in scaling for hidden layers, zero final layer.

        The zero final layer makes the initial noise estimate (hence score)
        identically zero.
        """
        if fourier_dim % 2 != 0:
            raise ContractError("fourier_dim must be even (sin/cos pairs)")
        rng = child_rng(seed, 0)
        freqs = rng.normal(0.0, fourier_scale, size=fourier_dim // 2)
        sizes = [dim + fourier_dim] + [hidden_width] * depth + [dim]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        weights[-1][:] = 0.0
        biases[-1][:] = 0.0
        return cls(schedule, freqs, weights, biases, seed)

    # -- embeddings and forward pass ------------------------------------

    def fourier_embed(self, t):
        """[sin(2 pi f_j t) | cos(2 pi f_j t)] for the fixed frequency table."""
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
            raise DomainError(f"time must lie in [0, 1], got {t!r}")
        angles = 2.0 * np.pi * np.multiply.outer(t_arr, self.frequencies)
        emb = np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)
        return emb

    def _inputs(self, x, t):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        t_arr = np.broadcast_to(np.asarray(t, dtype=float), (pts.shape[0],))
        h = np.concatenate([pts, self.fourier_embed(t_arr)], axis=1)
        return h, single, t_arr

    def _forward(self, h):
        """Returns (output, caches); caches hold per-layer (input, pre-activation)."""
        caches = []
        n_hidden = len(self.layer_weights) - 1
        for i in range(n_hidden):
            z = h @ self.layer_weights[i] + self.layer_biases[i]
            caches.append((h, z))
            h = _silu(z)
        out = h @ self.layer_weights[-1] + self.layer_biases[-1]
        caches.append((h, None))
        return out, caches

    def predict_eps(self, x, t):
        """Noise estimate at (x, t); deterministic in the parameters."""
        h, single, _ = self._inputs(x, t)
        out, _ = self._forward(h)
        if not np.all(np.isfinite(out)):
            raise NumericalFaultError("non-finite activation in forward pass")
        return out[0] if single else out

    def score(self, x, t):
        """Score estimate -predict_eps(x, t) / sigma_t."""
        sigma = self.schedule.sigma(t)
        sigma_arr = np.asarray(sigma, dtype=float)
        if np.any(sigma_arr < _SCORE_SIGMA_FLOOR):
            raise DegenerateTimeError(f"sigma(t) below {_SCORE_SIGMA_FLOOR} at t={t!r}")
        eps = self.predict_eps(x, t)
        if sigma_arr.ndim > 0 and eps.ndim > 1:
            return -eps / sigma_arr[:, None]
        return -eps / sigma_arr

    # -- training support ------------------------------------------------

    def loss_value(self, x, t, targets, weights=None):
        """Weighted noise-regression loss mean_i w_i ||eps(x_i, t_i) - y_i||^2."""
        eps = self.predict_eps(x, t)
        resid = np.atleast_2d(eps) - np.atleast_2d(targets)
        sq = np.sum(resid * resid, axis=1)
        if weights is not None:
            sq = sq * np.asarray(weights, dtype=float)
        return float(np.mean(sq))

    def loss_and_grad(self, x, t, targets, weights=None):
        """Loss plus its exact reverse-mode gradient for every parameter.

        Returns (loss, grads) with grads interleaved like `parameters()`.
        """
        h, _, _ = self._inputs(x, t)
        out, caches = self._forward(h)
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        if targets.shape != out.shape:
            raise ContractError(f"target shape {targets.shape} != output shape {out.shape}")
        n = out.shape[0]
        resid = out - targets
        sq = np.sum(resid * resid, axis=1)
        if weights is not None:
            w = np.asarray(weights, dtype=float)
            loss = float(np.mean(sq * w))
            grad_out = (2.0 / n) * resid * w[:, None]
        else:
            loss = float(np.mean(sq))
            grad_out = (2.0 / n) * resid
        if not np.isfinite(loss):
            raise NumericalFaultError("non-finite loss")

        # Walk the layers backwards; entering iteration i, g holds the loss
        # gradient w.r.t. that layer's pre-activation (the raw output for the
        # final linear layer).
        grads = [None] * (2 * len(self.layer_weights))
        g = grad_out
        for i in range(len(self.layer_weights) - 1, -1, -1):
            h_in = caches[i][0]
            grads[2 * i] = h_in.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = g @ self.layer_weights[i].T
                g = g * _silu_grad(caches[i - 1][1])
        return loss, grads

    # -- parameter access --------------------------------------------------

    def parameters(self):
        """Live parameter arrays, interleaved [W0, b0, W1, b1, ...]."""
        out = []
        for w, b in zip(self.layer_weights, self.layer_biases):
            out.extend([w, b])
        return out

    def set_parameters(self, params):
        own = self.parameters()
        if len(params) != len(own):
            raise ContractError("parameter list length mismatch")
        for dst, src in zip(own, params):
            if dst.shape != np.shape(src):
                raise ContractError(f"parameter shape mismatch: {dst.shape} vs {np.shape(src)}")
            dst[...] = src

    def parameters_flat(self):
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_parameters_flat(self, flat):
        flat = np.asarray(flat, dtype=float)
        own = self.parameters()
        total = sum(p.size for p in own)
        if flat.size != total:
            raise ContractError(f"expected {total} parameters, got {flat.size}")
        offset = 0
        for p in own:
            p[...] = flat[offset:offset + p.size].reshape(p.shape)
            offset += p.size

    def clone_frozen(self):
        """Deep copy; the copy and the original evolve independently."""
        return ScoreModel(
            self.schedule,
            self.frequencies,
            [w.copy() for w in self.layer_weights],
            [b.copy() for b in self.layer_biases],
            self.seed,
        )

    def architecture(self):
        """Static description used by checkpointing."""
        return {
            "dim": self.dim,
            "hidden_width": int(self.layer_weights[0].shape[1]) if len(self.layer_weights) > 1 else 0,
            "depth": len(self.layer_weights) - 1,
            "fourier_dim": 2 * self.frequencies.size,
            "schedule_kind": self.schedule.kind,
            "seed": self.seed,
        }


@dataclass
class OptimizerState:
    """Adam accumulators; moment shapes mirror the parameter shapes."""

    first_moment: list
    second_moment: list
    step_count: int
    learning_rate: float
    beta1: float
    beta2: float
    epsilon: float


def init_optimizer(params, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
    return OptimizerState(
        first_moment=[np.zeros_like(p) for p in params],
        second_moment=[np.zeros_like(p) for p in params],
        step_count=0,
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )


def optimizer_step(state, params, grads):
    """One bias-corrected Adam update, in place; returns (params, state)."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ContractError("params/grads/state length mismatch")
    state.step_count += 1
    correct1 = 1.0 - state.beta1**state.step_count
    correct2 = 1.0 - state.beta2**state.step_count
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape:
            raise ContractError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.learning_rate * (m / correct1) / (np.sqrt(v / correct2) + state.epsilon)
    return params, state


def clone_frozen(model):
    """Module-level alias for ScoreModel.clone_frozen."""
    return model.clone_frozen()
