"""Exact Gaussian-mixture machinery.

Everything the rest of the package treats as ground truth lives here:
mixture sampling and densities, the closed-form quadratic tilt, noised
marginals and their scores, the forward-kernel score, and a quadrature
oracle for the posterior covariance between kernel score and reward.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import logsumexp

from .errors import ContractError, DegenerateTimeError, NotNormalizableError, OracleError

_LOG_2PI = np.log(2.0 * np.pi)
_SIGMA_FLOOR = 1e-8


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture sum_i weights[i] * N(means[i], covariances[i]).

    weights: (K,) on the simplex; means: (K, d); covariances: (K, d, d) SPD.
    Instances are immutable; operations return new mixtures.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        mu = np.atleast_2d(np.array(self.means, dtype=float))
        cov = np.array(self.covariances, dtype=float)
        if cov.ndim == 2:
            cov = cov[None, :, :]
        if w.ndim != 1 or mu.ndim != 2 or cov.ndim != 3:
            raise ContractError("weights must be (K,), means (K, d), covariances (K, d, d)")
        k, d = mu.shape
        if w.shape != (k,) or cov.shape != (k, d, d):
            raise ContractError(f"inconsistent mixture shapes: {w.shape}, {mu.shape}, {cov.shape}")
        if np.any(w < 0.0) or abs(w.sum() - 1.0) > 1e-12:
            raise ContractError("weights must be nonnegative and sum to 1 within 1e-12")
        if np.max(np.abs(cov - np.transpose(cov, (0, 2, 1)))) > 1e-12:
            raise ContractError("covariances must be symmetric within 1e-12")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ContractError("every covariance must be positive definite") from exc
        for arr in (w, mu, cov):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)

    @property
    def num_components(self):
        return self.weights.size

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def mean(self):
        """Overall mean sum_i weights[i] * means[i]."""
        return self.weights @ self.means


@dataclass(frozen=True)
class QuadraticReward:
    """Reward r(x) = 0.5 x^T curvature x + linear^T x + constant."""

    curvature: np.ndarray
    linear: np.ndarray
    constant: float = 0.0

    def __post_init__(self):
        a = np.atleast_2d(np.array(self.curvature, dtype=float))
        b = np.atleast_1d(np.array(self.linear, dtype=float))
        d = b.size
        if a.shape != (d, d):
            raise ContractError(f"curvature must be ({d}, {d}), got {a.shape}")
        if np.max(np.abs(a - a.T)) > 1e-12:
            raise ContractError("curvature matrix must be symmetric within 1e-12")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "curvature", a)
        object.__setattr__(self, "linear", b)
        object.__setattr__(self, "constant", float(self.constant))

    @property
    def dim(self):
        return self.linear.size

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        quad = 0.5 * np.einsum("...i,ij,...j->...", x, self.curvature, x)
        return quad + x @ self.linear + self.constant


def zero_reward(dim):
    """Reward that is identically zero in `dim` dimensions."""
    return QuadraticReward(np.zeros((dim, dim)), np.zeros(dim), 0.0)


def sample_mixture(gm, n, rng):
    """Draw n i.i.d. points: categorical component, then Gaussian via Cholesky."""
    if n < 1:
        raise ContractError(f"need n >= 1, got {n}")
    comps = rng.choice(gm.num_components, size=n, p=gm.weights)
    out = np.empty((n, gm.dim))
    for i in range(gm.num_components):
        mask = comps == i
        count = int(mask.sum())
        if count == 0:
            continue
        chol = np.linalg.cholesky(gm.covariances[i])
        z = rng.standard_normal((count, gm.dim))
        out[mask] = gm.means[i] + z @ chol.T
    return out


def _component_log_densities(gm, x):
    """Per-component log(w_i N(x; mu_i, Sigma_i)) for x of shape (n, d); returns (n, K)."""
    n = x.shape[0]
    out = np.empty((n, gm.num_components))
    for i in range(gm.num_components):
        chol = np.linalg.cholesky(gm.covariances[i])
        diff = x - gm.means[i]
        y = solve_triangular(chol, diff.T, lower=True)
        maha = np.sum(y * y, axis=0)
        log_det = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, i] = np.log(gm.weights[i]) - 0.5 * (gm.dim * _LOG_2PI + log_det + maha)
    return out


def log_density(gm, x):
    """log of the mixture density at x, via log-sum-exp over components."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    vals = logsumexp(_component_log_densities(gm, pts), axis=1)
    return float(vals[0]) if single else vals


def _spd_inverse(mat):
    """Inverse of an SPD matrix through its Cholesky factor; raises LinAlgError if not PD."""
    chol = np.linalg.cholesky(mat)
    inv = cho_solve((chol, True), np.eye(mat.shape[0]))
    return 0.5 * (inv + inv.T), 2.0 * np.sum(np.log(np.diag(chol)))


def _tilted_components(gm, reward, scale):
    """Per-component parameters and log mass of exp(scale * r(x)) * component_i(x)."""
    curv = scale * reward.curvature
    lin = scale * reward.linear
    const = scale * reward.constant
    means, covs, log_terms = [], [], []
    for i in range(gm.num_components):
        prec, neg_log_det_old = _spd_inverse(gm.covariances[i])
        new_prec = 0.5 * ((prec - curv) + (prec - curv).T)
        try:
            new_cov, neg_log_det_new = _spd_inverse(new_prec)
        except np.linalg.LinAlgError as exc:
            raise NotNormalizableError(
                f"tilt not normalizable: component {i} precision minus reward curvature "
                "is not positive definite"
            ) from exc
        new_mean = new_cov @ (prec @ gm.means[i] + lin)
        # neg_log_det_* hold log|precision| = -log|covariance|.
        log_det_ratio = 0.5 * (neg_log_det_old - neg_log_det_new)
        quad_new = new_mean @ new_prec @ new_mean
        quad_old = gm.means[i] @ prec @ gm.means[i]
        log_terms.append(
            np.log(gm.weights[i]) + log_det_ratio + 0.5 * (quad_new - quad_old) + const
        )
        means.append(new_mean)
        covs.append(new_cov)
    return np.asarray(means), np.asarray(covs), np.asarray(log_terms)


def tilt_quadratic(gm, reward, scale=1.0):
    """Mixture proportional to exp(scale * r(x)) * gm(x), weights renormalized.

    Component covariances become (Sigma^-1 - scale*A)^-1 and means shift to
    Sigma' (Sigma^-1 mu + scale*b); weights pick up the closed-form mass ratio.
    """
    means, covs, log_terms = _tilted_components(gm, reward, scale)
    weights = np.exp(log_terms - logsumexp(log_terms))
    weights = weights / weights.sum()
    return GaussianMixture(weights=weights, means=means, covariances=covs)


def log_normalizing_constant(gm, reward, scale=1.0):
    """log integral of exp(scale * r(x)) * gm(x) dx."""
    _, _, log_terms = _tilted_components(gm, reward, scale)
    return float(logsumexp(log_terms))


def noised_mixture(gm, schedule, t):
    """Marginal of x_t = alpha_t x_0 + sigma_t x_1: components N(a mu_i, a^2 Sigma_i + s^2 I)."""
    alpha, sigma = schedule.alpha_sigma(float(t))
    eye = np.eye(gm.dim)
    means = alpha * gm.means
    covs = alpha**2 * gm.covariances + sigma**2 * eye
    return GaussianMixture(weights=gm.weights, means=means, covariances=covs)


def exact_score(gm, schedule, t, x):
    """Gradient of log p_t at x, where p_t is the noised marginal of gm.

    t may be a scalar or a per-row array matching x; x may be a single point
    (d,) or a batch (n, d).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    n, d = pts.shape
    t_arr = np.broadcast_to(np.asarray(t, dtype=float), (n,))
    alpha, sigma = schedule.alpha_sigma(t_arr)

    means = alpha[:, None, None] * gm.means[None, :, :]
    covs = (alpha**2)[:, None, None, None] * gm.covariances[None, :, :, :] + (
        sigma**2
    )[:, None, None, None] * np.eye(d)
    diff = pts[:, None, :] - means
    solved = np.linalg.solve(covs, diff[..., None])[..., 0]
    maha = np.einsum("nkd,nkd->nk", diff, solved)
    _, log_det = np.linalg.slogdet(covs)
    log_comp = np.log(gm.weights)[None, :] - 0.5 * (d * _LOG_2PI + log_det + maha)
    log_norm = logsumexp(log_comp, axis=1, keepdims=True)
    resp = np.exp(log_comp - log_norm)
    score = -np.einsum("nk,nkd->nd", resp, solved)
    return score[0] if single else score


def forward_kernel_score(x0, xt, schedule, t):
    """Score of the forward kernel N(xt; alpha_t x0, sigma_t^2 I) in xt: (a x0 - xt)/s^2."""
    alpha, sigma = schedule.alpha_sigma(t)
    sigma_arr = np.asarray(sigma, dtype=float)
    if np.any(sigma_arr < _SIGMA_FLOOR):
        raise DegenerateTimeError(f"sigma(t) ~ 0 at t={t!r}; forward kernel is degenerate")
    x0 = np.asarray(x0, dtype=float)
    xt = np.asarray(xt, dtype=float)
    if np.ndim(sigma) > 0 and x0.ndim > 1:
        alpha = np.asarray(alpha)[:, None]
        sigma_arr = sigma_arr[:, None]
    return (alpha * x0 - xt) / sigma_arr**2


def posterior_mixture(gm, schedule, t, xt):
    """Law of the clean sample given its noised value xt at time t.

    For a Gaussian-mixture prior this is again a mixture: per-component
    Gaussian posteriors weighted by the noised-mixture responsibilities.
    """
    alpha, sigma = schedule.alpha_sigma(float(t))
    if sigma < _SIGMA_FLOOR:
        raise DegenerateTimeError(f"sigma(t) ~ 0 at t={t}; posterior is a point mass")
    xt = np.asarray(xt, dtype=float)
    d = gm.dim
    eye = np.eye(d)
    kernel_prec = (alpha / sigma) ** 2

    means, covs = [], []
    for i in range(gm.num_components):
        prior_prec, _ = _spd_inverse(gm.covariances[i])
        post_cov, _ = _spd_inverse(prior_prec + kernel_prec * eye)
        post_mean = post_cov @ (prior_prec @ gm.means[i] + (alpha / sigma**2) * xt)
        means.append(post_mean)
        covs.append(post_cov)

    noised = noised_mixture(gm, schedule, float(t))
    log_resp = _component_log_densities(noised, xt[None, :])[0]
    resp = np.exp(log_resp - logsumexp(log_resp))
    resp = resp / resp.sum()
    return GaussianMixture(weights=resp, means=np.asarray(means), covariances=np.asarray(covs))


_QUADRATURE_PLANS = {1: (256, 8), 2: (128, 5), 3: (32, 4)}


def posterior_tilt_covariance_oracle(gm, reward, schedule, t, xt, rel_tol=1e-6):
    """Cov under the posterior p(x0 | xt) between the kernel score in xt and r(x0).

    Evaluated by midpoint quadrature on a tensor grid covering every posterior
    component mean +- 8 posterior standard deviations, refined until the value
    is stable to rel_tol. Test oracle only; restricted to dim <= 3.
    """
    d = gm.dim
    if d > 3:
        raise OracleError(f"quadrature oracle supports dim <= 3, got dim={d}")
    xt = np.asarray(xt, dtype=float)
    alpha, sigma = schedule.alpha_sigma(float(t))
    post = posterior_mixture(gm, schedule, t, xt)

    spread = 8.0 * np.sqrt(np.einsum("kii->ki", post.covariances))
    lo = np.min(post.means - spread, axis=0)
    hi = np.max(post.means + spread, axis=0)

    base_res, refinements = _QUADRATURE_PLANS[d]
    prev = None
    for level in range(refinements + 1):
        res = base_res * 2**level
        axes = [lo[j] + (np.arange(res) + 0.5) * (hi[j] - lo[j]) / res for j in range(d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)

        log_w = log_density(gm, pts) - 0.5 * np.sum((xt - alpha * pts) ** 2, axis=1) / sigma**2
        w = np.exp(log_w - log_w.max())
        w /= w.sum()

        rewards = reward(pts)
        mean_x = w @ pts
        mean_r = w @ rewards
        mean_xr = (w * rewards) @ pts
        # Kernel score is affine in x0, so Cov(g, r) = (alpha/sigma^2) Cov(x0, r).
        cov = (alpha / sigma**2) * (mean_xr - mean_x * mean_r)

        if prev is not None and np.linalg.norm(cov - prev) <= rel_tol * max(1.0, np.linalg.norm(cov)):
            return cov
        prev = cov
    raise OracleError(
        f"quadrature did not stabilize to {rel_tol} within {refinements} refinements"
    )


class MixtureEpsOracle:
    """Exact denoiser for a known mixture: noise prediction -sigma_t * true score.

    Drop-in for the learned model anywhere only `predict_eps`/`score`/`dim`
    are used; isolates sampler behaviour from model quality.
    """

    def __init__(self, mixture, schedule):
        self.mixture = mixture
        self.schedule = schedule

    @property
    def dim(self):
        return self.mixture.dim

    def score(self, x, t):
        return exact_score(self.mixture, self.schedule, t, x)

    def predict_eps(self, x, t):
        x = np.asarray(x, dtype=float)
        _, sigma = self.schedule.alpha_sigma(t)
        s = exact_score(self.mixture, self.schedule, t, x)
        if np.ndim(sigma) > 0 and x.ndim > 1:
            return -np.asarray(sigma)[:, None] * s
        return -sigma * s
