"""Regularized modal regression over the sample-dependent hypothesis space.

The estimator maximizes

    J(alpha) = (1/(m sigma)) * sum_i phi((y_i - K_i^T alpha)/sigma) - lam*||alpha||_q^q

where K_i is column i of the gram matrix.  For Gaussian-family phi the
maximization runs as half-quadratic (HQ) alternation; for the other
representing functions a proximal gradient-ascent solver is provided.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .errors import InputError, LineSearchFailed, NonGaussianPhi, SingularSystem
from .kernels import (
    HypothesisKernel,
    RepresentingFunction,
    as_covariate_array,
    hypothesis_kernel,
    representing_function,
)

__all__ = [
    "RmrConfig",
    "RmrModel",
    "objective",
    "fit_hq",
    "fit_gradient",
    "fit_data",
    "predict",
    "schedule_theorem2",
    "save_model",
    "load_model",
]

# phi(u) = coeff * exp(-u^2 / (2 * a_sq)); the pair (coeff, a_sq) per kind
_GAUSSIAN_FAMILY = {
    "gaussian": (1.0 / math.sqrt(2.0 * math.pi), 1.0),
    "correntropy": (1.0, 0.5),
}

_DIRECT_SOLVE_LIMIT = 600  # above this, the HQ inner solve switches to CG


@dataclass(frozen=True)
class RmrConfig:
    """Solver knobs: modal bandwidth, penalty weight/exponent, iteration caps."""

    sigma: float
    lam: float
    q: int = 2
    phi: RepresentingFunction = field(default_factory=lambda: representing_function("gaussian"))
    max_hq_iters: int = 200
    tol: float = 1e-8
    inner_max_iters: int = 20

    def __post_init__(self):
        if self.sigma <= 0:
            raise InputError("sigma must be positive")
        if self.lam < 0:
            raise InputError("lambda must be nonnegative")
        if self.q not in (1, 2):
            raise InputError("q must be 1 or 2")
        if self.max_hq_iters < 1:
            raise InputError("max_hq_iters must be at least 1")
        if self.tol <= 0:
            raise InputError("tol must be positive")
        if self.inner_max_iters < 1:
            raise InputError("inner_max_iters must be at least 1")


@dataclass(frozen=True)
class RmrModel:
    """Fitted coefficients over the training inputs plus everything needed
    to evaluate f(x) = sum_i alpha_i K(x_i, x)."""

    alpha: np.ndarray
    train_inputs: np.ndarray | None
    kernel: HypothesisKernel | None
    config: RmrConfig
    objective_trace: tuple

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float)
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        if self.train_inputs is not None:
            ti = as_covariate_array(self.train_inputs)
            if ti.shape[0] != alpha.shape[0]:
                raise InputError("alpha length must equal the number of training inputs")
            ti.setflags(write=False)
            object.__setattr__(self, "train_inputs", ti)

    @property
    def m(self) -> int:
        return self.alpha.shape[0]

    def coefficient_penalty(self) -> float:
        """||alpha||_q^q for the model's own q."""
        if self.config.q == 1:
            return float(np.sum(np.abs(self.alpha)))
        return float(np.sum(self.alpha * self.alpha))


def _check_problem(gram, y, alpha=None):
    gram = np.asarray(gram, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    m = y.shape[0]
    if gram.ndim != 2 or gram.shape != (m, m):
        raise InputError(f"gram must be {m}x{m} to match y, got {gram.shape}")
    if alpha is not None:
        alpha = np.asarray(alpha, dtype=float).ravel()
        if alpha.shape[0] != m:
            raise InputError(f"alpha has length {alpha.shape[0]}, expected {m}")
        return gram, y, alpha
    return gram, y


def _penalty(alpha: np.ndarray, q: int) -> float:
    if q == 1:
        return float(np.sum(np.abs(alpha)))
    return float(alpha @ alpha)


def objective(alpha, gram, y, phi: RepresentingFunction, config: RmrConfig) -> float:
    """Value of the regularized modal objective at alpha."""
    gram, y, alpha = _check_problem(gram, y, alpha)
    m = y.shape[0]
    residuals = y - gram.T @ alpha
    fit = float(np.sum(phi(residuals / config.sigma))) / (m * config.sigma)
    return fit - config.lam * _penalty(alpha, config.q)


def _hq_weights(residuals: np.ndarray, sigma: float, a_sq: float) -> np.ndarray:
    return np.exp(-(residuals * residuals) / (2.0 * a_sq * sigma * sigma))


def _solve_weighted_ridge(gram, w, y, kappa, alpha_guess):
    """argmin over alpha of sum_i w_i (y_i - K_i^T alpha)^2 + kappa ||alpha||^2.

    Normal equations (G W G^T + kappa I) alpha = G W y.  Direct solve for
    small systems; warm-started CG above _DIRECT_SOLVE_LIMIT.  CG keeps the
    HQ ascent property because it monotonically decreases this quadratic
    starting from the current iterate.
    """
    m = y.shape[0]
    b = gram @ (w * y)
    if m <= _DIRECT_SOLVE_LIMIT:
        A = (gram * w) @ gram.T
        A[np.diag_indices_from(A)] += kappa
        try:
            out = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            jitter = 1e-10 * np.trace(A) / m
            if jitter <= 0:
                raise SingularSystem("weighted system singular with zero trace") from None
            A[np.diag_indices_from(A)] += jitter
            try:
                out = np.linalg.solve(A, b)
            except np.linalg.LinAlgError:
                raise SingularSystem("weighted system singular after jitter") from None
        if not np.all(np.isfinite(out)):
            raise SingularSystem("weighted system produced non-finite coefficients")
        return out

    def matvec(v):
        return gram @ (w * (gram.T @ v)) + kappa * v

    op = LinearOperator((m, m), matvec=matvec, dtype=float)
    out, info = cg(op, b, x0=alpha_guess, rtol=1e-12, atol=0.0, maxiter=max(200, m // 4))
    if info < 0 or not np.all(np.isfinite(out)):
        raise SingularSystem(f"conjugate gradient failed with status {info}")
    return out


def _soft(value: float, threshold: float) -> float:
    if value > threshold:
        return value - threshold
    if value < -threshold:
        return value + threshold
    return 0.0


def _l1_coordinate_descent(gram, w, y, alpha, lam, tau, sweeps):
    """Cyclic soft-thresholding on (tau/2) sum_i w_i r_i^2 + lam ||alpha||_1.

    Each coordinate update is an exact 1-D minimization, so every sweep
    decreases this surrogate, preserving outer-loop ascent.
    """
    m = y.shape[0]
    alpha = alpha.copy()
    residual = y - gram.T @ alpha
    # quadratic coefficient per coordinate: tau * sum_i w_i G_ji^2
    quad = tau * ((gram * gram) @ w)
    for _ in range(sweeps):
        max_change = 0.0
        for j in range(m):
            gj = gram[j]
            old = alpha[j]
            lin = tau * (gj @ (w * residual)) + quad[j] * old
            new = _soft(lin, lam) / quad[j] if quad[j] > 0 else 0.0
            if new != old:
                residual += gj * (old - new)
                alpha[j] = new
                max_change = max(max_change, abs(new - old))
        if max_change <= 1e-15:
            break
    return alpha


def gaussian_family_params(phi: RepresentingFunction):
    """(coefficient, a^2) of phi(u) = c * exp(-u^2/(2 a^2)), or raise."""
    try:
        return _GAUSSIAN_FAMILY[phi.kind]
    except KeyError:
        raise NonGaussianPhi(
            f"half-quadratic updates need a Gaussian-family phi, got {phi.kind!r}"
        ) from None


def fit_hq(gram, y, config: RmrConfig, init=None, *, train_inputs=None, kernel=None) -> RmrModel:
    """Half-quadratic ascent for Gaussian-family representing functions.

    Alternates (a) weights w_i = exp(-r_i^2 / (2 a^2 sigma^2)) at the current
    coefficients with (b) the exact penalized weighted least-squares update
    (q=2) or cyclic soft-thresholding sweeps (q=1).  The objective trace is
    non-decreasing by construction; iteration stops once the objective gain
    drops below config.tol.

    The q=2 ridge constant comes from matching stationarity of the surrogate
    with the true objective: grad of the fit term is
    (c/(a^2 m sigma^3)) * G W r, and grad of lam||alpha||^2 is 2 lam alpha,
    so the inner problem is min sum w_i r_i^2 + kappa||alpha||^2 with
    kappa = 2 a^2 lam m sigma^3 / c.  For q=1 the same matching gives the
    scaling tau = c / (a^2 m sigma^3) on the quadratic part.
    """
    gram, y = _check_problem(gram, y)
    coeff, a_sq = gaussian_family_params(config.phi)
    m = y.shape[0]
    sigma = config.sigma
    if init is None:
        alpha = np.zeros(m)
    else:
        _, _, alpha = _check_problem(gram, y, init)
        alpha = alpha.copy()
    kappa = 2.0 * a_sq * config.lam * m * sigma**3 / coeff
    tau = coeff / (a_sq * m * sigma**3)
    trace = [objective(alpha, gram, y, config.phi, config)]
    for _ in range(config.max_hq_iters):
        residuals = y - gram.T @ alpha
        w = _hq_weights(residuals, sigma, a_sq)
        if config.q == 2:
            alpha = _solve_weighted_ridge(gram, w, y, kappa, alpha)
        else:
            alpha = _l1_coordinate_descent(
                gram, w, y, alpha, config.lam, tau, config.inner_max_iters
            )
        trace.append(objective(alpha, gram, y, config.phi, config))
        if abs(trace[-1] - trace[-2]) < config.tol:
            break
    return RmrModel(alpha, train_inputs, kernel, config, tuple(trace))


def _smooth_gradient(alpha, gram, y, phi, config):
    """Gradient of the fit term (and of the q=2 penalty, which is smooth)."""
    m = y.shape[0]
    residuals = y - gram.T @ alpha
    grad = -(gram @ phi.derivative(residuals / config.sigma)) / (m * config.sigma**2)
    if config.q == 2:
        grad = grad - 2.0 * config.lam * alpha
    return grad


def fit_gradient(
    gram,
    y,
    phi: RepresentingFunction,
    config: RmrConfig,
    init=None,
    max_iters: int | None = None,
    *,
    train_inputs=None,
    kernel=None,
) -> RmrModel:
    """Monotone (proximal) gradient ascent for any built-in phi.

    q=2 treats the penalty as part of the smooth objective; q=1 takes a
    gradient step on the fit term followed by soft-thresholding.  Steps are
    accepted only when the objective does not decrease, with up to 50
    halvings of the step size before LineSearchFailed.
    """
    gram, y = _check_problem(gram, y)
    cfg = replace(config, phi=phi)
    if init is None:
        alpha = np.zeros(y.shape[0])
    else:
        _, _, alpha = _check_problem(gram, y, init)
        alpha = alpha.copy()
    if max_iters is None:
        max_iters = max(cfg.max_hq_iters, 2000)
    current = objective(alpha, gram, y, phi, cfg)
    trace = [current]
    step = 1.0
    for _ in range(max_iters):
        grad = _smooth_gradient(alpha, gram, y, phi, cfg)
        step = min(step * 4.0, 1e8)
        for _halving in range(51):
            if cfg.q == 1:
                moved = alpha + step * grad
                candidate = np.sign(moved) * np.maximum(np.abs(moved) - step * cfg.lam, 0.0)
            else:
                candidate = alpha + step * grad
            value = objective(candidate, gram, y, phi, cfg)
            if value >= current:
                break
            step *= 0.5
        else:
            raise LineSearchFailed("no ascent step found after 50 halvings")
        gain = value - current
        alpha, current = candidate, value
        trace.append(current)
        if gain < cfg.tol:
            break
    return RmrModel(alpha, train_inputs, kernel, cfg, tuple(trace))


def fit_data(x, y, kernel: HypothesisKernel, config: RmrConfig, method: str = "hq") -> RmrModel:
    """Convenience wrapper: build the gram matrix from raw covariates and fit."""
    x = as_covariate_array(x)
    gram = kernel.cross(x, x)
    if method == "hq":
        return fit_hq(gram, y, config, train_inputs=x, kernel=kernel)
    if method == "gradient":
        return fit_gradient(gram, y, config.phi, config, train_inputs=x, kernel=kernel)
    raise InputError(f"unknown fit method {method!r}")


def predict(model: RmrModel, x):
    """f(x) = sum_i alpha_i K(x_i, x); scalar for a single covariate vector."""
    if model.train_inputs is None or model.kernel is None:
        raise InputError("model lacks training inputs / kernel; cannot predict")
    arr = np.asarray(x, dtype=float)
    single = arr.ndim < 2
    pts = as_covariate_array(np.atleast_2d(arr))
    if pts.shape[1] != model.train_inputs.shape[1]:
        raise InputError(
            f"covariate dimension {pts.shape[1]} does not match training dimension "
            f"{model.train_inputs.shape[1]}"
        )
    values = model.alpha @ model.kernel.cross(model.train_inputs, pts)
    return float(values[0]) if single else values


def schedule_theorem2(m: int, gamma_abs: float, beta: float, s: float):
    """Parameter schedule (theta, lambda, sigma) driven by the chain gap.

    theta = 2 beta / (8 beta + 5 s beta + 2 s + 4), with
    lambda = ((2 g - g^2) m)^(-theta/beta) and sigma = ((2 g - g^2) m)^(-theta/(2 beta))
    for g = gamma_abs.
    """
    if m < 1:
        raise InputError("m must be at least 1")
    if not 0.0 < gamma_abs <= 1.0:
        raise InputError("gamma_abs must lie in (0, 1]")
    if not 0.0 < beta <= 2.0:
        raise InputError("beta must lie in (0, 2]")
    if not 0.0 < s < 2.0:
        raise InputError("s must lie in (0, 2)")
    theta = 2.0 * beta / (8.0 * beta + 5.0 * s * beta + 2.0 * s + 4.0)
    discount = 2.0 * gamma_abs - gamma_abs * gamma_abs
    lam = discount ** (-theta / beta) * m ** (-theta / beta)
    sigma = discount ** (-theta / (2.0 * beta)) * m ** (-theta / (2.0 * beta))
    return theta, lam, sigma


def save_model(path, model: RmrModel) -> None:
    """Plain-text model file; floats are written with repr so the round trip
    is bit-faithful."""
    if model.train_inputs is None or model.kernel is None:
        raise InputError("only models with training inputs and kernel can be saved")
    m = model.m
    d = model.train_inputs.shape[1]
    cfg = model.config
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{m} {d}\n")
        params = " ".join(
            f"{k}={repr(float(v))}" for k, v in sorted(model.kernel.shape_params.items())
        )
        fh.write(f"kernel {model.kernel.kind} {params}\n".rstrip() + "\n")
        fh.write(f"phi {cfg.phi.kind}\n")
        fh.write(f"sigma {repr(float(cfg.sigma))}\n")
        fh.write(f"lambda {repr(float(cfg.lam))}\n")
        fh.write(f"q {cfg.q}\n")
        fh.write("alpha\n")
        for v in model.alpha:
            fh.write(repr(float(v)) + "\n")
        fh.write("inputs\n")
        for row in model.train_inputs:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_model(path) -> RmrModel:
    """Inverse of save_model.  The objective trace is a fit artifact and is
    not persisted; loaded models carry an empty trace."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    try:
        m, d = (int(t) for t in lines[0].split())
        kparts = lines[1].split()
        if kparts[0] != "kernel":
            raise InputError("expected kernel line")
        kkind = kparts[1]
        kparams = {}
        for tok in kparts[2:]:
            key, _, val = tok.partition("=")
            kparams[key] = float(val)
        phi_kind = lines[2].split()[1]
        sigma = float(lines[3].split()[1])
        lam = float(lines[4].split()[1])
        q = int(lines[5].split()[1])
        if lines[6] != "alpha":
            raise InputError("expected alpha section")
        alpha = np.array([float(lines[7 + i]) for i in range(m)])
        if lines[7 + m] != "inputs":
            raise InputError("expected inputs section")
        inputs = np.array(
            [[float(t) for t in lines[8 + m + i].split()] for i in range(m)]
        ).reshape(m, d)
    except (IndexError, ValueError) as exc:
        raise InputError(f"malformed model file {path}: {exc}") from exc
    config = RmrConfig(sigma=sigma, lam=lam, q=q, phi=representing_function(phi_kind))
    kernel = hypothesis_kernel(kkind, **kparams)
    return RmrModel(alpha, inputs, kernel, config, tuple())
