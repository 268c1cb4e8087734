"""Finite-state Markov chains: construction, sampling, and mixing diagnostics.

State spaces are finite and embedded as grid points in [0,1]^d, so the
spectral quantities are exact eigendecompositions rather than estimates.
Three gaps are exposed: the reversible spectral gap (range [0, 2], since the
spectrum of a reversible chain lives in [-1, 1]), the absolute spectral gap
(range [0, 1]) and the pseudo spectral gap max_k gap((P*)^k P^k)/k.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, NonUniqueStationary, NotReversible, NotStochastic, ZeroMass

__all__ = [
    "TransitionKernel",
    "ChainDiagnostics",
    "transition_kernel",
    "stationary_distribution",
    "is_reversible",
    "adjoint_kernel",
    "absolute_spectral_gap",
    "spectral_gap_reversible",
    "pseudo_spectral_gap",
    "sample_chain",
    "tv_mixing_curve",
    "builtin_chain",
    "iid_chain",
    "two_state_chain",
    "lazy_random_walk",
    "metropolis_grid",
    "diagnose",
    "read_transition_file",
    "write_transition_file",
]

CHAIN_FAMILIES = ("iid", "two-state", "lazy-walk", "metropolis")

_SIMPLE_TOL = 1e-8  # |lambda - 1| below this counts as the unit eigenvalue
_ROW_TOL = 1e-12


@dataclass(frozen=True)
class TransitionKernel:
    """Row-stochastic transition matrix plus covariate embedding of states."""

    n_states: int
    P: np.ndarray
    state_embedding: np.ndarray

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        emb = np.array(self.state_embedding, dtype=float)
        if emb.ndim == 1:
            emb = emb[:, None]
        n = P.shape[0]
        if P.ndim != 2 or P.shape != (n, n):
            raise NotStochastic("transition matrix must be square")
        if n != self.n_states:
            raise NotStochastic(f"matrix is {n}x{n} but n_states={self.n_states}")
        if np.any(P < 0):
            raise NotStochastic("transition probabilities must be nonnegative")
        rows = P.sum(axis=1)
        if np.max(np.abs(rows - 1.0)) > _ROW_TOL:
            raise NotStochastic(f"row sums deviate from 1 by {np.max(np.abs(rows - 1.0)):.3e}")
        if emb.shape[0] != n:
            raise InputError("state_embedding must have one vector per state")
        if np.any(emb < 0) or np.any(emb > 1):
            raise InputError("state embedding coordinates must lie in [0, 1]")
        P.setflags(write=False)
        emb.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "state_embedding", emb)

    @property
    def dim(self) -> int:
        return self.state_embedding.shape[1]


def transition_kernel(P, state_embedding) -> TransitionKernel:
    P = np.asarray(P, dtype=float)
    return TransitionKernel(P.shape[0], P, state_embedding)


def _unit_eigen_indices(eigenvalues: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.abs(eigenvalues - 1.0) < _SIMPLE_TOL)


def stationary_distribution(kernel: TransitionKernel) -> np.ndarray:
    """Unique probability vector pi with pi P = pi.

    Raises NonUniqueStationary when eigenvalue 1 of P is not simple (for
    example the identity chain or a disconnected chain).
    """
    P = kernel.P
    vals, vecs = np.linalg.eig(P.T)
    unit = _unit_eigen_indices(vals)
    if len(unit) != 1:
        raise NonUniqueStationary(
            f"eigenvalue 1 has multiplicity {len(unit)}; stationary distribution not unique"
        )
    v = np.real(vecs[:, unit[0]])
    v = np.abs(v)
    pi = v / v.sum()
    residual = np.max(np.abs(pi @ P - pi))
    if residual > 1e-10:
        raise NonUniqueStationary(f"stationary residual {residual:.3e} exceeds tolerance")
    return pi


def is_reversible(kernel: TransitionKernel, pi: np.ndarray, tol: float = 1e-10) -> bool:
    """Detailed balance pi_i P_ij == pi_j P_ji within tol."""
    flow = pi[:, None] * kernel.P
    return bool(np.max(np.abs(flow - flow.T)) <= tol)


def adjoint_kernel(kernel: TransitionKernel, pi: np.ndarray) -> np.ndarray:
    """Time-reversed kernel P*_ij = pi_j P_ji / pi_i (row-stochastic)."""
    pi = np.asarray(pi, dtype=float)
    if np.any(pi <= 0):
        raise ZeroMass("adjoint requires a strictly positive stationary distribution")
    adj = (kernel.P.T * pi[None, :]) / pi[:, None]
    return adj


def absolute_spectral_gap(kernel: TransitionKernel) -> float:
    """1 - max |lambda| over non-unit eigenvalues; 0 if eigenvalue 1 repeats."""
    vals = np.linalg.eigvals(kernel.P)
    order = np.argsort(np.abs(vals - 1.0))
    rest = vals[order[1:]]
    if len(rest) == 0:
        return 1.0
    if np.any(np.abs(rest - 1.0) < _SIMPLE_TOL):
        return 0.0
    gap = 1.0 - float(np.max(np.abs(rest)))
    return max(gap, 0.0)


def _reversible_eigenvalues(P: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """Spectrum of a pi-reversible P via the symmetrized D^1/2 P D^-1/2."""
    if np.any(pi <= 0):
        raise ZeroMass("spectral decomposition requires positive stationary mass")
    root = np.sqrt(pi)
    sym = (root[:, None] * P) / root[None, :]
    sym = 0.5 * (sym + sym.T)
    return np.linalg.eigvalsh(sym)


def _gap_of_reversible(P: np.ndarray, pi: np.ndarray) -> float:
    vals = _reversible_eigenvalues(P, pi)
    order = np.argsort(np.abs(vals - 1.0))
    rest = vals[order[1:]]
    if len(rest) == 0:
        return 1.0
    if np.any(np.abs(rest - 1.0) < _SIMPLE_TOL):
        return 0.0
    return 1.0 - float(np.max(rest))


def spectral_gap_reversible(kernel: TransitionKernel) -> float:
    """1 - (largest eigenvalue below 1); lives in [0, 2] for reversible chains."""
    pi = stationary_distribution(kernel)
    if not is_reversible(kernel, pi):
        raise NotReversible("chain does not satisfy detailed balance")
    return _gap_of_reversible(kernel.P, pi)


def pseudo_spectral_gap(kernel: TransitionKernel, k_max: int) -> float:
    """max over k = 1..k_max of gap((P*)^k P^k) / k.

    (P*)^k P^k is self-adjoint in L2(pi) and positive, so its gap comes from
    the symmetrized eigendecomposition directly.  Non-decreasing in k_max.
    """
    if k_max < 1:
        raise InputError("k_max must be at least 1")
    pi = stationary_distribution(kernel)
    adj = adjoint_kernel(kernel, pi)
    best = 0.0
    forward = np.eye(kernel.n_states)
    backward = np.eye(kernel.n_states)
    for k in range(1, k_max + 1):
        forward = forward @ kernel.P
        backward = backward @ adj
        best = max(best, _gap_of_reversible(backward @ forward, pi) / k)
    return best


def sample_chain(kernel: TransitionKernel, m: int, seed: int, start="stationary") -> np.ndarray:
    """Length-m state-index path, reproducible for a given seed.

    ``start`` is either the string "stationary" (draw the first state from
    pi) or an explicit state index.
    """
    if m < 1:
        raise InputError("path length m must be at least 1")
    rng = np.random.default_rng(seed)
    n = kernel.n_states
    cum = np.cumsum(kernel.P, axis=1)
    cum[:, -1] = 1.0
    states = np.empty(m, dtype=np.int64)
    if isinstance(start, str):
        if start != "stationary":
            raise InputError(f"start must be 'stationary' or a state index, got {start!r}")
        pi = stationary_distribution(kernel)
        cpi = np.cumsum(pi)
        cpi[-1] = 1.0
        states[0] = int(np.searchsorted(cpi, rng.random(), side="right"))
    else:
        s0 = int(start)
        if not 0 <= s0 < n:
            raise InputError(f"start state {s0} outside [0, {n})")
        states[0] = s0
    draws = rng.random(m - 1)
    cur = states[0]
    for t in range(1, m):
        cur = int(np.searchsorted(cum[cur], draws[t - 1], side="right"))
        states[t] = cur
    return states


def tv_mixing_curve(kernel: TransitionKernel, start_state: int, t_max: int):
    """Total-variation distance of P^t(start, .) to pi for t = 1..t_max."""
    if t_max < 1:
        raise InputError("t_max must be at least 1")
    if not 0 <= start_state < kernel.n_states:
        raise InputError(f"start state {start_state} outside [0, {kernel.n_states})")
    pi = stationary_distribution(kernel)
    row = np.zeros(kernel.n_states)
    row[start_state] = 1.0
    curve = []
    for t in range(1, t_max + 1):
        row = row @ kernel.P
        curve.append((t, 0.5 * float(np.sum(np.abs(row - pi)))))
    return curve


def _grid_embedding(n: int, d: int) -> np.ndarray:
    """First n points of the row-major [0,1]^d lattice with side ceil(n^(1/d))."""
    if d < 1:
        raise InputError("embedding dimension d must be at least 1")
    if d == 1:
        return np.linspace(0.0, 1.0, n)[:, None]
    side = max(2, math.ceil(n ** (1.0 / d)))
    while side**d < n:
        side += 1
    axis = np.linspace(0.0, 1.0, side)
    pts = list(itertools.islice(itertools.product(axis, repeat=d), n))
    return np.array(pts, dtype=float)


def iid_chain(n: int, target=None, d: int = 1) -> TransitionKernel:
    """Chain whose every row equals the target distribution (gap 1)."""
    if n < 2:
        raise InputError("iid chain needs at least 2 states")
    pi = np.full(n, 1.0 / n) if target is None else np.asarray(target, dtype=float)
    if len(pi) != n or np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-12:
        raise InputError("target must be a length-n probability vector")
    P = np.tile(pi, (n, 1))
    return TransitionKernel(n, P, _grid_embedding(n, d))


def two_state_chain(p: float, q: float, d: int = 1) -> TransitionKernel:
    """Two states with flip probabilities p (0 -> 1) and q (1 -> 0)."""
    if not (0.0 <= p <= 1.0 and 0.0 <= q <= 1.0):
        raise InputError("flip probabilities must lie in [0, 1]")
    P = np.array([[1.0 - p, p], [q, 1.0 - q]])
    return TransitionKernel(2, P, _grid_embedding(2, d))


def lazy_random_walk(n: int, laziness: float, d: int = 1) -> TransitionKernel:
    """Lazy nearest-neighbour walk on a path of n states (reversible)."""
    if n < 2:
        raise InputError("walk needs at least 2 states")
    if not 0.0 <= laziness < 1.0:
        raise InputError("laziness must lie in [0, 1)")
    P = np.zeros((n, n))
    move = 1.0 - laziness
    for i in range(n):
        P[i, i] += laziness
        neighbours = [j for j in (i - 1, i + 1) if 0 <= j < n]
        for j in neighbours:
            P[i, j] += move / len(neighbours)
    return TransitionKernel(n, P, _grid_embedding(n, d))


def metropolis_grid(n: int, target=None, d: int = 1) -> TransitionKernel:
    """Metropolis walk on a path of n states targeting the given distribution."""
    if n < 2:
        raise InputError("metropolis chain needs at least 2 states")
    t = np.full(n, 1.0 / n) if target is None else np.asarray(target, dtype=float)
    if len(t) != n or np.any(t <= 0) or abs(t.sum() - 1.0) > 1e-12:
        raise InputError("target must be a strictly positive length-n probability vector")
    P = np.zeros((n, n))
    for i in range(n):
        for j in (i - 1, i + 1):
            if 0 <= j < n:
                P[i, j] = 0.5 * min(1.0, t[j] / t[i])
        P[i, i] = 1.0 - P[i].sum()
    return TransitionKernel(n, P, _grid_embedding(n, d))


def builtin_chain(family: str, d: int = 1, **params) -> TransitionKernel:
    """Dispatch on family name: iid, two-state, lazy-walk, metropolis."""
    if family == "iid":
        return iid_chain(int(params.pop("n", 2)), params.pop("target", None), d)
    if family == "two-state":
        return two_state_chain(float(params.pop("p")), float(params.pop("q")), d)
    if family == "lazy-walk":
        return lazy_random_walk(int(params.pop("n")), float(params.pop("laziness", 0.5)), d)
    if family == "metropolis":
        return metropolis_grid(int(params.pop("n")), params.pop("target", None), d)
    raise InputError(f"unknown chain family {family!r}; choose from {CHAIN_FAMILIES}")


@dataclass(frozen=True)
class ChainDiagnostics:
    """Stationary distribution, reversibility and the three gaps.

    ``gamma`` is NaN for non-reversible chains (the reversible gap is not
    defined there); note it can reach 2 for reversible chains with spectrum
    near -1, while ``gamma_abs`` always lies in [0, 1].
    """

    pi: np.ndarray
    reversible: bool
    gamma: float
    gamma_abs: float
    gamma_pseudo: float
    tv_decay: list


def diagnose(
    kernel: TransitionKernel, k_max: int = 5, t_max: int = 30, start_state: int = 0
) -> ChainDiagnostics:
    pi = stationary_distribution(kernel)
    reversible = is_reversible(kernel, pi)
    gamma = _gap_of_reversible(kernel.P, pi) if reversible else math.nan
    return ChainDiagnostics(
        pi=pi,
        reversible=reversible,
        gamma=gamma,
        gamma_abs=absolute_spectral_gap(kernel),
        gamma_pseudo=pseudo_spectral_gap(kernel, k_max),
        tv_decay=tv_mixing_curve(kernel, start_state, t_max),
    )


def read_transition_file(path) -> TransitionKernel:
    """Load the plain-text chain format.

    Line 1: ``n d``; then n rows of n transition probabilities; then n rows
    of d embedding coordinates.  Whitespace-separated decimals throughout.
    """
    with open(path, "r", encoding="utf-8") as fh:
        tokens = fh.read().split()
    if len(tokens) < 2:
        raise InputError(f"{path}: expected 'n d' header")
    n, d = int(tokens[0]), int(tokens[1])
    need = 2 + n * n + n * d
    if len(tokens) != need:
        raise InputError(f"{path}: expected {need} tokens for n={n}, d={d}, found {len(tokens)}")
    body = np.array([float(t) for t in tokens[2:]])
    P = body[: n * n].reshape(n, n)
    emb = body[n * n :].reshape(n, d)
    return TransitionKernel(n, P, emb)


def write_transition_file(path, kernel: TransitionKernel) -> None:
    n, d = kernel.n_states, kernel.dim
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{n} {d}\n")
        for row in kernel.P:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        for row in kernel.state_embedding:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
