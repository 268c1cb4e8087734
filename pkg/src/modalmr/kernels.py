"""Smoothing kernels for the modal loss and kernels for the hypothesis space.

Two unrelated kinds of "kernel" live here and are kept deliberately distinct:

* ``RepresentingFunction`` is the symmetric, peaked-at-zero, unit-integral
  bump that turns mode seeking into a kernel-density-style objective.
* ``HypothesisKernel`` is the two-argument similarity K(x, x') whose sections
  K(x_i, .) span the sample-dependent hypothesis space.  It is not required
  to be symmetric or positive semi-definite, although all built-in kinds are
  symmetric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from .errors import InputError

__all__ = [
    "PHI_KINDS",
    "KERNEL_KINDS",
    "RepresentingFunction",
    "CalibrationReport",
    "HypothesisKernel",
    "representing_function",
    "hypothesis_kernel",
    "eval_phi",
    "check_calibration",
    "gram_matrix",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)

PHI_KINDS = ("gaussian", "epanechnikov", "quadratic", "triangular", "correntropy")
KERNEL_KINDS = ("gaussian-rbf", "laplacian", "polynomial")


@dataclass(frozen=True)
class RepresentingFunction:
    """A smoothing kernel phi with its frozen calibration constants.

    ``lipschitz_bound`` and ``second_moment`` are exact values for the
    built-in kinds; ``check_calibration`` re-derives them numerically.
    ``calibrated`` is False for the correntropy variant, whose integral is
    sqrt(pi) rather than 1 (it exists to reproduce the exp(-r^2/s) weight
    convention used by correntropy-style estimators).
    """

    kind: str
    peak_value: float
    lipschitz_bound: float
    second_moment: float
    support_halfwidth: float
    calibrated: bool = True

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "gaussian":
            out = np.exp(-0.5 * u * u) / _SQRT_2PI
        elif self.kind == "correntropy":
            out = np.exp(-(u * u))
        elif self.kind == "epanechnikov":
            out = np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)
        elif self.kind == "quadratic":
            t = 1.0 - u * u
            out = np.where(np.abs(u) <= 1.0, (15.0 / 16.0) * t * t, 0.0)
        elif self.kind == "triangular":
            out = np.where(np.abs(u) <= 1.0, 1.0 - np.abs(u), 0.0)
        else:  # pragma: no cover - factory prevents this
            raise InputError(f"unknown representing function kind {self.kind!r}")
        return float(out) if out.ndim == 0 else out

    def derivative(self, u):
        """phi'(u), using the zero subgradient at kink points."""
        u = np.asarray(u, dtype=float)
        if self.kind == "gaussian":
            out = -u * np.exp(-0.5 * u * u) / _SQRT_2PI
        elif self.kind == "correntropy":
            out = -2.0 * u * np.exp(-(u * u))
        elif self.kind == "epanechnikov":
            out = np.where(np.abs(u) <= 1.0, -1.5 * u, 0.0)
        elif self.kind == "quadratic":
            out = np.where(np.abs(u) <= 1.0, -(15.0 / 4.0) * u * (1.0 - u * u), 0.0)
        elif self.kind == "triangular":
            out = np.where(np.abs(u) <= 1.0, -np.sign(u), 0.0)
        else:  # pragma: no cover
            raise InputError(f"unknown representing function kind {self.kind!r}")
        return float(out) if out.ndim == 0 else out


# (peak, lipschitz, second moment, support halfwidth, calibrated)
_PHI_TABLE = {
    "gaussian": (1.0 / _SQRT_2PI, math.exp(-0.5) / _SQRT_2PI, 1.0, math.inf, True),
    "epanechnikov": (0.75, 1.5, 0.2, 1.0, True),
    # quartic polynomial from the same beta family as Epanechnikov
    "quadratic": (15.0 / 16.0, 5.0 * math.sqrt(3.0) / 6.0, 1.0 / 7.0, 1.0, True),
    "triangular": (1.0, 1.0, 1.0 / 6.0, 1.0, True),
    "correntropy": (1.0, math.sqrt(2.0 / math.e), math.sqrt(math.pi) / 2.0, math.inf, False),
}


def representing_function(kind: str) -> RepresentingFunction:
    """Build one of the built-in representing functions by name."""
    if kind not in _PHI_TABLE:
        raise InputError(f"unknown representing function {kind!r}; choose from {PHI_KINDS}")
    peak, lip, m2, half, calibrated = _PHI_TABLE[kind]
    return RepresentingFunction(kind, peak, lip, m2, half, calibrated)


def eval_phi(phi: RepresentingFunction, u) -> float:
    """Evaluate phi at u (0 outside the support for compact kinds)."""
    return phi(u)


@dataclass(frozen=True)
class CalibrationReport:
    """Numerical check of the representing-function requirements."""

    kind: str
    max_symmetry_violation: float
    max_excess_over_peak: float
    integral_error: float
    second_moment: float
    lipschitz_estimate: float

    def ok(self, integral_tol: float = 1e-6) -> bool:
        return (
            self.max_symmetry_violation < 1e-12
            and self.max_excess_over_peak <= 0.0
            and self.integral_error < integral_tol
            and math.isfinite(self.second_moment)
        )


def check_calibration(
    phi: RepresentingFunction, grid_halfwidth: float, grid_points: int
) -> CalibrationReport:
    """Verify symmetry, peak dominance, unit integral and moments on a grid.

    The grid should cover the support generously (halfwidth >= 8 for the
    Gaussian kind) and use enough points that Simpson quadrature resolves
    the bump; the kink points of the compact kinds land on grid nodes for
    any symmetric grid whose quarter points are nodes.
    """
    if grid_halfwidth <= 0:
        raise InputError("grid_halfwidth must be positive")
    if grid_points <= 2:
        raise InputError("grid_points must exceed 2")
    lin = np.linspace(-grid_halfwidth, grid_halfwidth, int(grid_points))
    grid = 0.5 * (lin - lin[::-1])  # exactly antisymmetric nodes
    vals = phi(grid)
    symmetry = float(np.max(np.abs(vals - vals[::-1])))
    excess = float(np.max(vals) - phi.peak_value)
    integral = float(simpson(vals, x=grid))
    second = float(simpson(grid * grid * vals, x=grid))
    step = grid[1] - grid[0]
    lipschitz = float(np.max(np.abs(np.diff(vals))) / step)
    return CalibrationReport(
        kind=phi.kind,
        max_symmetry_violation=symmetry,
        max_excess_over_peak=excess,
        integral_error=abs(integral - 1.0),
        second_moment=second,
        lipschitz_estimate=lipschitz,
    )


@dataclass(frozen=True)
class HypothesisKernel:
    """Two-argument kernel K(x, x') used to span the hypothesis space."""

    kind: str
    shape_params: dict = field(default_factory=dict)

    def cross(self, centers, points) -> np.ndarray:
        """Matrix with entry (i, p) = K(centers[i], points[p])."""
        c = as_covariate_array(centers)
        p = as_covariate_array(points)
        if c.shape[1] != p.shape[1]:
            raise InputError(
                f"covariate dimension mismatch: {c.shape[1]} versus {p.shape[1]}"
            )
        if self.kind == "gaussian-rbf":
            bw = self.shape_params["bandwidth"]
            sq = (
                np.sum(c * c, axis=1)[:, None]
                + np.sum(p * p, axis=1)[None, :]
                - 2.0 * (c @ p.T)
            )
            np.maximum(sq, 0.0, out=sq)
            return np.exp(-sq / (bw * bw))
        if self.kind == "laplacian":
            bw = self.shape_params["bandwidth"]
            l1 = np.sum(np.abs(c[:, None, :] - p[None, :, :]), axis=2)
            return np.exp(-l1 / bw)
        if self.kind == "polynomial":
            degree = self.shape_params["degree"]
            offset = self.shape_params["offset"]
            return (c @ p.T + offset) ** degree
        raise InputError(f"unknown hypothesis kernel kind {self.kind!r}")

    def pair(self, x, y) -> float:
        return float(self.cross(np.atleast_2d(x), np.atleast_2d(y))[0, 0])


_KERNEL_DEFAULTS = {
    "gaussian-rbf": {"bandwidth": 1.0},
    "laplacian": {"bandwidth": 1.0},
    "polynomial": {"degree": 2.0, "offset": 1.0},
}


def hypothesis_kernel(kind: str, **shape_params: float) -> HypothesisKernel:
    """Build a hypothesis kernel by name, filling default shape parameters."""
    if kind not in _KERNEL_DEFAULTS:
        raise InputError(f"unknown hypothesis kernel {kind!r}; choose from {KERNEL_KINDS}")
    params = dict(_KERNEL_DEFAULTS[kind])
    for key, value in shape_params.items():
        if key not in params:
            raise InputError(f"kernel {kind!r} has no shape parameter {key!r}")
        params[key] = float(value)
    if "bandwidth" in params and params["bandwidth"] <= 0:
        raise InputError("kernel bandwidth must be positive")
    return HypothesisKernel(kind, params)


def as_covariate_array(inputs) -> np.ndarray:
    """Coerce a list of covariate vectors to a float (m, d) array."""
    try:
        arr = np.asarray(inputs, dtype=float)
    except ValueError as exc:
        raise InputError(f"covariate vectors have mismatched dimensions: {exc}") from exc
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[1] < 1:
        raise InputError("covariates must form an (m, d) array with d >= 1")
    return arr


def gram_matrix(kernel: HypothesisKernel, inputs) -> np.ndarray:
    """Gram matrix with entry (j, i) = K(x_j, x_i) over the sample inputs."""
    x = as_covariate_array(inputs)
    return kernel.cross(x, x)
