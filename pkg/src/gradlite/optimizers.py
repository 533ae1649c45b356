"""The low-rank error-feedback step plus plain baselines.

All optimizers advance a mutable :class:`OptimizerState` owned by a
single run.  The per-step stochastic gradient is always the chain-rule
product jacobian.T @ error_signal with one error-signal draw per step, so
two optimizers driven by identically seeded problems see identical noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError, DivergedError, EmptyRunError
from .feedback import (ErrorAccumulator, correct, estimate_delta,
                       update_accumulator, zero_accumulator)
from .linalg import matvec_t
from .lowrank import (LowRankFactor, RefreshPolicy, approx_gradient,
                      factorize, maybe_refresh, projected_signal)
from .problems import Problem

DIVERGENCE_CAP = 1e12

EF_MODES = ("paper", "ef-standard", "off")
PROBES = ("exact", "none")
BASIS_MODES = ("svd", "random-projection")


@dataclass(frozen=True)
class GradLiteConfig:
    eta: float
    k: int
    tau: int = 10
    ef_mode: str = "ef-standard"
    probe: str = "exact"
    basis_mode: str = "svd"
    seed: int = 0

    def __post_init__(self):
        if not self.eta > 0.0:
            raise ConfigError(f"eta must be > 0, got {self.eta}")
        if self.k < 1:
            raise ConfigError(f"rank must be >= 1, got {self.k}")
        if self.tau < 1:
            raise ConfigError(f"tau must be >= 1, got {self.tau}")
        if self.ef_mode not in EF_MODES:
            raise ConfigError(f"ef_mode must be one of {EF_MODES}, got {self.ef_mode!r}")
        if self.probe not in PROBES:
            raise ConfigError(f"probe must be one of {PROBES}, got {self.probe!r}")
        if self.basis_mode not in BASIS_MODES:
            raise ConfigError(
                f"basis_mode must be one of {BASIS_MODES}, got {self.basis_mode!r}")

    def policy(self) -> RefreshPolicy:
        return RefreshPolicy(period=self.tau, mode=self.basis_mode)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class OptimizerState:
    theta: np.ndarray
    step: int = 0
    theta_sum: np.ndarray | None = None
    accumulators: list[ErrorAccumulator] | None = None
    factors: list[LowRankFactor] | None = None
    adam_m: np.ndarray | None = None
    adam_v: np.ndarray | None = None
    galore_basis: np.ndarray | None = None
    galore_window: list = field(default_factory=list)
    last_grad: np.ndarray | None = None

    def __post_init__(self):
        if self.theta_sum is None:
            self.theta_sum = np.zeros_like(self.theta)


@dataclass(frozen=True)
class StepTrace:
    """Every intermediate of one step, concatenated across blocks."""

    delta: np.ndarray        # error signal, length m
    delta_proj: np.ndarray   # compressed signal(s), length sum of block ranks
    g_tilde: np.ndarray      # approximate gradient, length d
    g_hat: np.ndarray        # corrected gradient actually applied
    big_delta: np.ndarray    # residual estimate
    g_exact: np.ndarray | None  # present iff the exact probe ran
    loss: float              # loss at the pre-update iterate


def _require_finite(vec: np.ndarray, step: int, what: str):
    if not np.all(np.isfinite(vec)):
        raise DivergedError(step, what)


def _check_theta(theta: np.ndarray, step: int):
    if not np.all(np.isfinite(theta)) or np.abs(theta).max() > DIVERGENCE_CAP:
        raise DivergedError(step, "theta")


def stochastic_gradient(problem: Problem, theta: np.ndarray, batch=None,
                        delta: np.ndarray | None = None) -> np.ndarray:
    """Chain-rule gradient for one error-signal draw, all blocks concatenated."""
    if delta is None:
        delta = problem.error_signal(theta, batch)
    parts = [matvec_t(problem.jacobian(theta, batch, b), delta)
             for b in range(problem.blocks)]
    return np.concatenate(parts)


def init_state(problem: Problem, theta0=None) -> OptimizerState:
    theta = problem.default_theta0() if theta0 is None else np.array(theta0, dtype=np.float64)
    if theta.shape != (problem.d,):
        raise ConfigError(f"theta0 length {theta.shape} != problem dimension {problem.d}")
    return OptimizerState(theta=theta)


def init_gradlite_state(problem: Problem, batch, cfg: GradLiteConfig,
                        theta0=None) -> OptimizerState:
    """Validate the rank per block and build the step-0 factors."""
    for b, width in enumerate(problem.block_dims):
        cap = min(problem.m, width)
        if cfg.k > cap:
            raise ConfigError(
                f"rank {cfg.k} exceeds min(m, d_block)={cap} for block {b}")
    state = init_state(problem, theta0)
    policy = cfg.policy()
    state.factors = [
        factorize(problem.jacobian(state.theta, batch, b), cfg.k, policy, 0, cfg.seed)
        for b in range(problem.blocks)
    ]
    mode = cfg.ef_mode if cfg.ef_mode != "off" else "ef-standard"
    state.accumulators = [zero_accumulator(w, mode) for w in problem.block_dims]
    return state


def gradlite_step(state: OptimizerState, problem: Problem, batch,
                  cfg: GradLiteConfig) -> tuple[OptimizerState, StepTrace]:
    """One full update: signal, projection, correction, residual, descent."""
    t = state.step
    theta = state.theta
    policy = cfg.policy()
    loss = problem.loss(theta, batch)
    delta = problem.error_signal(theta, batch)
    _require_finite(delta, t, "delta")

    slices = problem.block_slices()
    proj_parts, gt_parts, gh_parts, bd_parts = [], [], [], []
    for b in range(problem.blocks):
        due = (t - state.factors[b].birth_step) >= cfg.tau
        need_j = due or cfg.probe == "exact"
        j_b = problem.jacobian(theta, batch, b) if need_j else None
        if due:
            state.factors[b] = maybe_refresh(state.factors[b], j_b, t, policy, cfg.seed)
        dp = projected_signal(state.factors[b], delta)
        gt = approx_gradient(state.factors[b], delta, projected=dp)
        gh = correct(gt, state.accumulators[b]) if cfg.ef_mode != "off" else gt
        est = estimate_delta(j_b, delta, gt, cfg.probe)
        if cfg.ef_mode != "off":
            state.accumulators[b] = update_accumulator(state.accumulators[b], est)
        proj_parts.append(dp)
        gt_parts.append(gt)
        gh_parts.append(gh)
        bd_parts.append(est.delta)

    g_tilde = np.concatenate(gt_parts)
    g_hat = np.concatenate(gh_parts)
    big_delta = np.concatenate(bd_parts)
    _require_finite(g_tilde, t, "g_tilde")
    _require_finite(g_hat, t, "g_hat")
    # g~ + (g - g~) reconstructs the probed gradient to one rounding step.
    g_exact = g_tilde + big_delta if cfg.probe == "exact" else None

    theta_new = theta - cfg.eta * g_hat
    _check_theta(theta_new, t)
    state.theta = theta_new
    state.step = t + 1
    state.theta_sum = state.theta_sum + theta_new
    state.last_grad = g_exact
    trace = StepTrace(delta=delta, delta_proj=np.concatenate(proj_parts),
                      g_tilde=g_tilde, g_hat=g_hat, big_delta=big_delta,
                      g_exact=g_exact, loss=loss)
    return state, trace


def _descend(state: OptimizerState, update: np.ndarray, grad: np.ndarray):
    theta_new = state.theta - update
    _check_theta(theta_new, state.step)
    state.theta = theta_new
    state.step += 1
    state.theta_sum = state.theta_sum + theta_new
    state.last_grad = grad


def sgd_step(state: OptimizerState, problem: Problem, batch,
             eta: float) -> OptimizerState:
    g = stochastic_gradient(problem, state.theta, batch)
    _require_finite(g, state.step, "gradient")
    _descend(state, eta * g, g)
    return state


def adam_step(state: OptimizerState, problem: Problem, batch, eta: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> OptimizerState:
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ConfigError("betas must lie in [0, 1)")
    if not eps > 0.0:
        raise ConfigError("eps must be > 0")
    if state.adam_m is None:
        state.adam_m = np.zeros_like(state.theta)
        state.adam_v = np.zeros_like(state.theta)
    g = stochastic_gradient(problem, state.theta, batch)
    _require_finite(g, state.step, "gradient")
    t = state.step + 1
    state.adam_m = beta1 * state.adam_m + (1.0 - beta1) * g
    state.adam_v = beta2 * state.adam_v + (1.0 - beta2) * g * g
    m_hat = state.adam_m / (1.0 - beta1 ** t)
    v_hat = state.adam_v / (1.0 - beta2 ** t)
    _descend(state, eta * m_hat / (np.sqrt(v_hat) + eps), g)
    return state


def galore_like_step(state: OptimizerState, problem: Problem, batch,
                     eta: float, k: int, tau: int, seed: int) -> OptimizerState:
    """Project the exact gradient onto a basis of recent gradients.

    The basis is the top-k left singular subspace of a window of the last
    `tau` gradients, refreshed every `tau` steps; no residual is kept, so
    whatever the projection drops is simply lost.  k >= d short-circuits
    to the identity.
    """
    if k < 1 or tau < 1:
        raise ConfigError("k and tau must be >= 1")
    g = stochastic_gradient(problem, state.theta, batch)
    _require_finite(g, state.step, "gradient")
    state.galore_window.append(g)
    if len(state.galore_window) > tau:
        state.galore_window.pop(0)
    d = state.theta.shape[0]
    if k >= d:
        _descend(state, eta * g, g)
        return state
    if state.step % tau == 0:
        window = np.column_stack(state.galore_window)
        u, _, _ = np.linalg.svd(window, full_matrices=False)
        state.galore_basis = u[:, :min(k, u.shape[1])]
    basis = state.galore_basis
    pg = basis @ (basis.T @ g)
    _descend(state, eta * pg, g)
    return state


def averaged_iterate(state: OptimizerState) -> np.ndarray:
    """Mean of the post-update iterates seen so far."""
    if state.step == 0:
        raise EmptyRunError("no steps taken yet")
    return state.theta_sum / state.step
