"""Residual accumulator and both readings of the feedback rule.

"paper" mode keeps adding each step's residual without ever consuming it,
which double-counts under persistent error and can grow without bound;
"ef-standard" stores only the newest residual (consume-on-apply).  Both
are exposed because the divergence behaviour of the additive rule is
itself something the harness reports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimError
from .linalg import matvec_t

MODES = ("paper", "ef-standard")
PROBES = ("exact", "none")


@dataclass(frozen=True)
class ErrorAccumulator:
    r: np.ndarray
    mode: str

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown accumulator mode {self.mode!r}")


@dataclass(frozen=True)
class DeltaEstimate:
    delta: np.ndarray  # estimate of g - g~
    exact: bool        # True iff computed from the materialized Jacobian


def zero_accumulator(d: int, mode: str = "ef-standard") -> ErrorAccumulator:
    return ErrorAccumulator(r=np.zeros(d), mode=mode)


def correct(g_tilde: np.ndarray, acc: ErrorAccumulator) -> np.ndarray:
    """g^ = g~ + r."""
    if g_tilde.shape != acc.r.shape:
        raise DimError(f"correct: {g_tilde.shape} vs {acc.r.shape}")
    return g_tilde + acc.r


def estimate_delta(j, delta, g_tilde: np.ndarray, probe: str) -> DeltaEstimate:
    """Residual estimate for this step.

    probe="exact" materializes the chain-rule gradient j.T @ delta (the
    desk scale affords it) and returns g - g~; probe="none" returns zeros,
    i.e. no feedback information at all.
    """
    if probe == "exact":
        g = matvec_t(j, delta)
        if g.shape != g_tilde.shape:
            raise DimError(f"estimate_delta: {g.shape} vs {g_tilde.shape}")
        return DeltaEstimate(delta=g - g_tilde, exact=True)
    if probe == "none":
        return DeltaEstimate(delta=np.zeros_like(g_tilde), exact=False)
    raise ValueError(f"unknown probe {probe!r}")


def update_accumulator(acc: ErrorAccumulator, est: DeltaEstimate) -> ErrorAccumulator:
    """paper: r' = r + delta (additive); ef-standard: r' = delta."""
    if acc.r.shape != est.delta.shape:
        raise DimError(f"update_accumulator: {acc.r.shape} vs {est.delta.shape}")
    if acc.mode == "paper":
        return ErrorAccumulator(r=acc.r + est.delta, mode=acc.mode)
    return ErrorAccumulator(r=est.delta.copy(), mode=acc.mode)
