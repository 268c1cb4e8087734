"""Modal risk functionals for synthetic generators.

The synthetic data model is y = f*(x) + eps with mode(eps) = 0, covariates
riding a finite-state chain.  Because the covariate marginal is the chain's
stationary vector and the noise density is known, the true modal risk
R(f) = sum_s pi_s * p_eps(f(x_s) - f*(x_s)) is exact, the surrogate risk is
one quadrature per state, and the comparison-gap bound C1*sigma^2 can be
checked directly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .errors import InputError, NonSmoothNoise
from .kernels import RepresentingFunction
from .markov import TransitionKernel, stationary_distribution
from .solver import RmrModel, predict

__all__ = [
    "NoiseModel",
    "SyntheticTask",
    "gaussian_noise",
    "student_t_noise",
    "shifted_gamma_noise",
    "mixture_noise",
    "make_task",
    "empirical_modal_risk",
    "true_modal_risk",
    "surrogate_risk",
    "comparison_gap",
    "excess_risk",
]

log = logging.getLogger(__name__)

_MODE_GRID_POINTS = 10001


@dataclass(frozen=True)
class NoiseModel:
    """A noise distribution with density mode pinned at zero.

    ``grid_halfwidth`` is wide enough that the density carries all but 1e-4
    of its mass inside [-H, H]; heavy-tailed kinds therefore use grids much
    wider than 10x their nominal scale.  ``smooth`` records whether the
    density has a bounded second derivative (needed by comparison_gap).
    """

    kind: str
    params: dict
    grid_halfwidth: float
    smooth: bool
    components: tuple = field(default_factory=tuple)
    weights: tuple = field(default_factory=tuple)

    def density(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "gaussian":
            out = stats.norm.pdf(t, scale=self.params["scale"])
        elif self.kind == "student-t":
            out = stats.t.pdf(t, df=self.params["dof"], scale=self.params["scale"])
        elif self.kind == "shifted-gamma":
            k, theta = self.params["shape"], self.params["scale"]
            out = stats.gamma.pdf(t + (k - 1.0) * theta, k, scale=theta)
        elif self.kind == "mixture":
            out = sum(
                w * comp.density(t) for w, comp in zip(self.weights, self.components)
            )
        else:  # pragma: no cover - constructors prevent this
            raise InputError(f"unknown noise kind {self.kind!r}")
        return float(out) if np.ndim(out) == 0 else out

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.normal(0.0, self.params["scale"], size)
        if self.kind == "student-t":
            return rng.standard_t(self.params["dof"], size) * self.params["scale"]
        if self.kind == "shifted-gamma":
            k, theta = self.params["shape"], self.params["scale"]
            return rng.gamma(k, theta, size) - (k - 1.0) * theta
        if self.kind == "mixture":
            idx = rng.choice(len(self.weights), size=size, p=np.asarray(self.weights))
            out = np.empty(size)
            for c, comp in enumerate(self.components):
                mask = idx == c
                count = int(mask.sum())
                if count:
                    out[mask] = comp.sample(rng, count)
            return out
        raise InputError(f"unknown noise kind {self.kind!r}")  # pragma: no cover


def _validate_noise(model: NoiseModel) -> NoiseModel:
    """Grid check of the mode-at-zero and unit-mass requirements."""
    grid = np.linspace(-model.grid_halfwidth, model.grid_halfwidth, _MODE_GRID_POINTS)
    dens = model.density(grid)
    if not np.all(np.isfinite(dens)):
        raise InputError(f"{model.kind} density is not finite on its grid")
    step = grid[1] - grid[0]
    peak_at = grid[int(np.argmax(dens))]
    if abs(peak_at) > step * (1 + 1e-12):
        raise InputError(
            f"{model.kind} noise mode sits at {peak_at:.4g}, not at 0"
        )
    mass = float(np.trapezoid(dens, grid))
    if abs(mass - 1.0) > 1e-4:
        raise InputError(f"{model.kind} density mass on its grid is {mass:.6f}, not 1")
    return model


def gaussian_noise(scale: float = 1.0) -> NoiseModel:
    if scale <= 0:
        raise InputError("scale must be positive")
    return _validate_noise(
        NoiseModel("gaussian", {"scale": float(scale)}, 10.0 * scale, smooth=True)
    )


def student_t_noise(dof: float, scale: float = 1.0) -> NoiseModel:
    if dof <= 0 or scale <= 0:
        raise InputError("dof and scale must be positive")
    half = scale * max(10.0, float(stats.t.ppf(1.0 - 2.5e-5, dof)))
    return _validate_noise(
        NoiseModel("student-t", {"dof": float(dof), "scale": float(scale)}, half, smooth=True)
    )


def shifted_gamma_noise(shape: float, scale: float = 1.0) -> NoiseModel:
    """Gamma(shape, scale) shifted left by (shape-1)*scale so the mode is 0.

    An asymmetric noise whose conditional mean differs from its mode, which
    is the case modal regression targets and mean regression cannot.
    """
    if shape < 1.0:
        raise InputError("shape must be at least 1 for a finite mode at zero")
    if scale <= 0:
        raise InputError("scale must be positive")
    shift = (shape - 1.0) * scale
    right = float(stats.gamma.ppf(1.0 - 5e-5, shape, scale=scale)) - shift
    half = max(10.0 * scale, shift, right)
    return _validate_noise(
        NoiseModel(
            "shifted-gamma",
            {"shape": float(shape), "scale": float(scale)},
            half,
            smooth=shape >= 2.0,
        )
    )


def mixture_noise(weights, components) -> NoiseModel:
    w = tuple(float(v) for v in weights)
    comps = tuple(components)
    if len(w) != len(comps) or not comps:
        raise InputError("weights and components must be equal-length and nonempty")
    if any(v < 0 for v in w) or abs(sum(w) - 1.0) > 1e-12:
        raise InputError("weights must be a probability vector")
    half = max(c.grid_halfwidth for c in comps)
    return _validate_noise(
        NoiseModel(
            "mixture",
            {},
            half,
            smooth=all(c.smooth for c in comps),
            components=comps,
            weights=w,
        )
    )


@dataclass(frozen=True)
class SyntheticTask:
    """Ground-truth regression target, noise and covariate chain."""

    f_star: Callable
    M: float
    noise: NoiseModel
    chain: TransitionKernel
    pi: np.ndarray = None
    state_values: np.ndarray = None

    def __post_init__(self):
        pi = stationary_distribution(self.chain)
        values = np.array(
            [float(self.f_star(x)) for x in self.chain.state_embedding], dtype=float
        )
        if np.max(np.abs(values)) > self.M + 1e-12:
            raise InputError(
                f"|f*| reaches {np.max(np.abs(values)):.4g} on the states, above M={self.M}"
            )
        pi.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "state_values", values)


_TARGET_GRID = np.linspace(0.0, 1.0, 20001)
_TARGET_SCALE = float(np.max(np.abs(np.sin(2.0 * np.pi * _TARGET_GRID) * np.exp(-_TARGET_GRID))))


def default_target(x) -> float:
    """sin(2 pi x1) * exp(-x1), rescaled to sup-norm 1 on [0, 1]."""
    x1 = float(np.atleast_1d(x)[0])
    return math.sin(2.0 * math.pi * x1) * math.exp(-x1) / _TARGET_SCALE


def make_task(
    chain: TransitionKernel, noise: NoiseModel, f_star: Callable | None = None, M: float = 1.0
) -> SyntheticTask:
    return SyntheticTask(f_star or default_target, M, noise, chain)


def empirical_modal_risk(f_values, y, phi: RepresentingFunction, sigma: float) -> float:
    """(1/(m sigma)) sum_i phi((y_i - f(x_i))/sigma)."""
    f_values = np.asarray(f_values, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if f_values.shape != y.shape:
        raise InputError(f"f has length {f_values.shape[0]}, y has {y.shape[0]}")
    if sigma <= 0:
        raise InputError("sigma must be positive")
    m = y.shape[0]
    return float(np.sum(phi((y - f_values) / sigma))) / (m * sigma)


def _state_offsets(task: SyntheticTask, f_values_on_states) -> np.ndarray:
    f = np.asarray(f_values_on_states, dtype=float).ravel()
    if f.shape[0] != task.chain.n_states:
        raise InputError(
            f"need one value per state ({task.chain.n_states}), got {f.shape[0]}"
        )
    return f - task.state_values


def true_modal_risk(task: SyntheticTask, f_values_on_states) -> float:
    """R(f) = sum_s pi_s * p_eps(f(x_s) - f*(x_s)), exact for finite chains."""
    offsets = _state_offsets(task, f_values_on_states)
    return float(task.pi @ task.noise.density(offsets))


def surrogate_risk(
    task: SyntheticTask,
    f_values_on_states,
    phi: RepresentingFunction,
    sigma: float,
    quad_points: int = 20001,
) -> float:
    """Smoothed risk sum_s pi_s * int (1/sigma) phi((t - Delta_s)/sigma) p(t) dt.

    Composite trapezoid over a grid wide enough for both the noise mass and
    the shifted bumps.
    """
    if sigma <= 0:
        raise InputError("sigma must be positive")
    if quad_points < 3:
        raise InputError("quad_points too small for quadrature")
    offsets = _state_offsets(task, f_values_on_states)
    reach = phi.support_halfwidth if math.isfinite(phi.support_halfwidth) else 8.0
    half = task.noise.grid_halfwidth + float(np.max(np.abs(offsets))) + sigma * reach
    grid = np.linspace(-half, half, int(quad_points))
    dens = task.noise.density(grid)
    bumps = phi((grid[None, :] - offsets[:, None]) / sigma) / sigma
    per_state = np.trapezoid(bumps * dens[None, :], grid, axis=1)
    return float(task.pi @ per_state)


def comparison_gap(
    task: SyntheticTask,
    f_values_on_states,
    phi: RepresentingFunction,
    sigma: float,
    quad_points: int = 20001,
):
    """|R(f*) - R(f) - (R^s(f*) - R^s(f))| and its second-order bound.

    The bound is C1 * sigma^2 with C1 = sup|p''| * int u^2 phi(u) du; the
    density curvature is estimated by central differences on the noise grid.
    """
    if not task.noise.smooth:
        raise NonSmoothNoise(
            f"{task.noise.kind} noise lacks a bounded second derivative"
        )
    r_true_star = true_modal_risk(task, task.state_values)
    r_true_f = true_modal_risk(task, f_values_on_states)
    r_sur_star = surrogate_risk(task, task.state_values, phi, sigma, quad_points)
    r_sur_f = surrogate_risk(task, f_values_on_states, phi, sigma, quad_points)
    gap = abs(r_true_star - r_true_f - (r_sur_star - r_sur_f))
    grid = np.linspace(-task.noise.grid_halfwidth, task.noise.grid_halfwidth, int(quad_points))
    dens = task.noise.density(grid)
    step = grid[1] - grid[0]
    curvature = np.abs(dens[2:] - 2.0 * dens[1:-1] + dens[:-2]) / (step * step)
    bound = float(np.max(curvature)) * phi.second_moment * sigma * sigma
    return gap, bound


def excess_risk(task: SyntheticTask, model: RmrModel) -> float:
    """R(f*) - R(f_model), with model evaluated on the chain states."""
    preds = predict(model, task.chain.state_embedding)
    value = true_modal_risk(task, task.state_values) - true_modal_risk(task, preds)
    if value < -1e-9:
        log.warning("excess risk %.3e is negative beyond tolerance", value)
    return float(value)
