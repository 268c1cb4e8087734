"""Regularized modal regression on Markov-dependent data.

Library layout:

* ``kernels`` -- representing functions for the modal loss and hypothesis-space
  kernels, with calibration checks.
* ``markov`` -- finite-state chains, sampling, stationary analysis and the
  spectral-gap triple.
* ``solver`` -- the regularized modal estimator (half-quadratic and gradient
  solvers), prediction and the gap-aware parameter schedule.
* ``risk`` -- empirical, surrogate and true modal risks plus the
  comparison-gap bound check.
* ``robustness`` -- breakdown statistic, bracket and contamination experiments.
* ``harness`` -- seeded synthetic experiments (learning curves, gap sweeps,
  robustness comparisons).
* ``cli`` -- the ``modalmr`` command-line front end.
"""

__version__ = "0.1.0"
