"""Seeded experiments, scalar-count memory ledger, rate fits, ablation.

Everything here is deterministic in (specs, seed): problems, noise, and
sketch randomness are derived from the run seed through fixed salts, and
output files are written with pinned float formatting so reruns are
byte-identical.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DivergedError, NonPositiveGapError
from .optimizers import (GradLiteConfig, adam_step, averaged_iterate,
                         galore_like_step, gradlite_step,
                         init_gradlite_state, init_state, sgd_step)
from .problems import (Problem, finite_difference_gradient,
                       make_gaussian_logistic, make_lowrank_logistic,
                       make_mlp, make_quadratic)
from .linalg import matvec_t
from .rng import derive_seed

_PROBLEM_SALT = 0x4A12_0001
_NOISE_SALT = 0x4A12_0002
_OPT_SALT = 0x4A12_0003
_ABLATION_SALT = 0x4A12_0004
_CHECK_SALT = 0x4A12_0005

ETA_GRID = (1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0)
ABLATION_VARIANTS = ("full", "no-error-feedback", "random-projection")


def _fmt(x) -> str:
    return format(float(x), ".17g")


# -- spec registries -------------------------------------------------------

_PROBLEM_PARAMS = {
    "quadratic": {"d": 50, "cond": 100.0, "sigma": 0.0},
    "logistic": {"n": 200, "d": 50, "l2": 0.0},
    "lowrank-logistic": {"n": 512, "d": 128, "cond": 1e3},
    "mlp": {"layers": (8, 16, 1), "n": 32},
}

_OPTIMIZER_PARAMS = {
    "gradlite": {"eta": 0.05, "k": 8, "tau": 10, "ef_mode": "ef-standard",
                 "probe": "exact", "basis_mode": "svd"},
    "sgd": {"eta": 0.05},
    "adam": {"eta": 0.05, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
    "galore": {"eta": 0.05, "k": 8, "tau": 10},
}


def _resolve(spec: dict, table: dict, kind: str) -> tuple[str, dict]:
    if "name" not in spec:
        raise ConfigError(f"{kind} spec needs a 'name' key")
    name = spec["name"]
    if name not in table:
        raise ConfigError(f"unknown {kind} {name!r}; choose from {sorted(table)}")
    params = dict(table[name])
    for key, val in spec.items():
        if key == "name":
            continue
        if key not in params:
            raise ConfigError(f"unknown key {key!r} for {kind} {name!r}")
        params[key] = val
    return name, params


def build_problem(spec: dict, seed: int) -> Problem:
    """Instantiate the named problem; its data derives from the run seed."""
    name, p = _resolve(spec, _PROBLEM_PARAMS, "problem")
    pseed = derive_seed(seed, _PROBLEM_SALT)
    if name == "quadratic":
        return make_quadratic(int(p["d"]), float(p["cond"]), float(p["sigma"]), pseed)
    if name == "logistic":
        return make_gaussian_logistic(int(p["n"]), int(p["d"]), pseed,
                                      l2=float(p["l2"]), solve_optimum=True)
    if name == "lowrank-logistic":
        return make_lowrank_logistic(int(p["n"]), int(p["d"]), float(p["cond"]), pseed)
    return make_mlp([int(w) for w in p["layers"]], int(p["n"]), pseed)


def validate_optimizer(spec: dict) -> tuple[str, dict]:
    name, p = _resolve(spec, _OPTIMIZER_PARAMS, "optimizer")
    if name == "gradlite":
        GradLiteConfig(eta=float(p["eta"]), k=int(p["k"]), tau=int(p["tau"]),
                       ef_mode=p["ef_mode"], probe=p["probe"],
                       basis_mode=p["basis_mode"])
    else:
        if not float(p["eta"]) > 0.0:
            raise ConfigError("eta must be > 0")
        if name == "galore" and (int(p["k"]) < 1 or int(p["tau"]) < 1):
            raise ConfigError("k and tau must be >= 1")
    return name, p


# -- per-step metrics -------------------------------------------------------

@dataclass(frozen=True)
class StepRecord:
    step: int
    loss: float
    gap: float
    g_norm: float
    gtilde_norm: float
    r_norm: float
    delta_norm: float
    bwd_scalars: float
    opt_scalars: float


CSV_HEADER = "step,loss,gap,g_norm,gtilde_norm,r_norm,delta_norm,bwd_scalars,opt_scalars"


@dataclass
class RunMetrics:
    problem_spec: dict
    optimizer_spec: dict
    steps: int
    seed: int
    initial_loss: float
    records: list[StepRecord] = field(default_factory=list)
    diverged: bool = False
    diverged_step: int | None = None
    wall_time: float = 0.0

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss if self.records else self.initial_loss

    @property
    def final_gap(self) -> float:
        return self.records[-1].gap if self.records else float("nan")

    def write_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write(CSV_HEADER + "\n")
            for r in self.records:
                fh.write(",".join([str(r.step)] + [_fmt(v) for v in (
                    r.loss, r.gap, r.g_norm, r.gtilde_norm, r.r_norm,
                    r.delta_norm, r.bwd_scalars, r.opt_scalars)]) + "\n")

    def summary_dict(self) -> dict:
        return {
            "problem": dict(self.problem_spec),
            "optimizer": dict(self.optimizer_spec),
            "steps": self.steps,
            "seed": self.seed,
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
            "final_gap": self.final_gap,
            "completed_steps": len(self.records),
            "diverged": self.diverged,
            "diverged_step": self.diverged_step,
        }

    def write_summary(self, path):
        with open(path, "w", newline="\n") as fh:
            json.dump(self.summary_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _norm(vec) -> float:
    return float(np.linalg.norm(vec)) if vec is not None else float("nan")


def run_experiment(problem_spec: dict, optimizer_spec: dict, steps: int,
                   seed: int) -> RunMetrics:
    """Drive one seeded run, recording the full per-step time series.

    Divergence is data: the series is truncated at the diverging step and
    flagged, never raised past this function.
    """
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    opt_name, opt_params = validate_optimizer(optimizer_spec)
    problem = build_problem(problem_spec, seed)
    problem.reset_noise(derive_seed(seed, _NOISE_SALT))
    opt_seed = derive_seed(seed, _OPT_SALT)

    mem = memory_counts(problem.m, problem.d,
                        k=int(opt_params.get("k", 0)) or None,
                        tau=int(opt_params.get("tau", 0)) or None)[
        "gradlite" if opt_name == "gradlite" else
        "galore" if opt_name == "galore" else
        "adam" if opt_name == "adam" else "exact-sgd"]
    bwd = mem.activation + mem.signal + mem.factor
    opt_scalars = mem.accumulator + mem.optimizer_state

    cfg = None
    if opt_name == "gradlite":
        cfg = GradLiteConfig(eta=float(opt_params["eta"]), k=int(opt_params["k"]),
                             tau=int(opt_params["tau"]), ef_mode=opt_params["ef_mode"],
                             probe=opt_params["probe"],
                             basis_mode=opt_params["basis_mode"], seed=opt_seed)
        state = init_gradlite_state(problem, None, cfg)
    else:
        state = init_state(problem)

    metrics = RunMetrics(problem_spec=dict(problem_spec),
                         optimizer_spec=dict(optimizer_spec), steps=steps,
                         seed=seed, initial_loss=problem.loss(state.theta))
    t0 = time.perf_counter()
    for t in range(1, steps + 1):
        trace = None
        try:
            if opt_name == "gradlite":
                state, trace = gradlite_step(state, problem, None, cfg)
            elif opt_name == "sgd":
                state = sgd_step(state, problem, None, float(opt_params["eta"]))
            elif opt_name == "adam":
                state = adam_step(state, problem, None, float(opt_params["eta"]),
                                  float(opt_params["beta1"]),
                                  float(opt_params["beta2"]),
                                  float(opt_params["eps"]))
            else:
                state = galore_like_step(state, problem, None,
                                         float(opt_params["eta"]),
                                         int(opt_params["k"]),
                                         int(opt_params["tau"]), opt_seed)
        except DivergedError as err:
            metrics.diverged = True
            metrics.diverged_step = err.step
            break
        loss = problem.loss(state.theta)
        if problem.loss_star is not None:
            gap = problem.loss(averaged_iterate(state)) - problem.loss_star
        else:
            gap = float("nan")
        if trace is not None:
            r_norm = _norm(np.concatenate([a.r for a in state.accumulators]))
            gtilde_norm = _norm(trace.g_tilde)
            delta_norm = _norm(trace.big_delta)
        else:
            r_norm = gtilde_norm = delta_norm = float("nan")
        metrics.records.append(StepRecord(
            step=t, loss=loss, gap=gap, g_norm=_norm(state.last_grad),
            gtilde_norm=gtilde_norm, r_norm=r_norm, delta_norm=delta_norm,
            bwd_scalars=bwd, opt_scalars=opt_scalars))
    metrics.wall_time = time.perf_counter() - t0
    return metrics


# -- scalar-count memory ledger ---------------------------------------------

class MethodMemory(NamedTuple):
    """Float64 slots a method must retain per optimization step.

    Parameters themselves are excluded (common to every method); transient
    per-element streams are not counted.  The exact-backprop baseline holds
    the forward activation cache (m) plus the backward error signal (m);
    the low-rank method holds only the k-dim compressed signal, the factor
    pair amortized over its refresh period, and the residual accumulator.
    Verification probes are instrumentation, not method storage.
    """

    activation: float
    signal: float
    factor: float
    accumulator: float
    optimizer_state: float

    @property
    def total(self) -> float:
        return sum(self)


def memory_counts(m: int, d: int, k: int | None = None,
                  tau: int | None = None) -> dict[str, MethodMemory]:
    if m < 1 or d < 1:
        raise ConfigError(f"dims m={m}, d={d} must be >= 1")
    out = {
        "exact-sgd": MethodMemory(m, m, 0, 0, 0),
        "adam": MethodMemory(m, m, 0, 0, 2 * d),
    }
    if k is not None and tau is not None:
        if k < 1 or tau < 1:
            raise ConfigError("k and tau must be >= 1")
        out["galore"] = MethodMemory(m, m, d * k, 0, d * tau)
        out["gradlite"] = MethodMemory(0, k, (m + d) * k / tau, d, 0)
    return out


@dataclass(frozen=True)
class MemoryReport:
    m: int
    d: int
    k: int
    tau: int
    methods: dict

    @property
    def signal_ratio(self) -> float:
        return self.methods["gradlite"].signal / self.methods["exact-sgd"].signal

    def savings_vs_exact(self, method: str = "gradlite") -> float:
        exact = self.methods["exact-sgd"].total
        return 1.0 - self.methods[method].total / exact

    def to_dict(self) -> dict:
        return {
            "m": self.m, "d": self.d, "k": self.k, "tau": self.tau,
            "methods": {name: {"activation": mm.activation, "signal": mm.signal,
                               "factor": mm.factor, "accumulator": mm.accumulator,
                               "optimizer_state": mm.optimizer_state,
                               "total": mm.total}
                        for name, mm in self.methods.items()},
            "signal_ratio": self.signal_ratio,
            "gradlite_savings_vs_exact": self.savings_vs_exact(),
        }

    def to_text(self) -> str:
        lines = [f"scalar counts per step (m={self.m}, d={self.d}, "
                 f"k={self.k}, tau={self.tau}); parameters excluded",
                 f"{'method':<12}{'activation':>11}{'signal':>9}{'factor':>9}"
                 f"{'accum':>7}{'opt':>7}{'total':>10}"]
        for name in ("exact-sgd", "adam", "galore", "gradlite"):
            mm = self.methods[name]
            lines.append(f"{name:<12}{mm.activation:>11g}{mm.signal:>9g}"
                         f"{mm.factor:>9g}{mm.accumulator:>7g}"
                         f"{mm.optimizer_state:>7g}{mm.total:>10g}")
        lines.append(f"signal ratio gradlite/exact: {self.signal_ratio:g}")
        lines.append(f"gradlite total vs exact-backprop: "
                     f"{100.0 * self.savings_vs_exact():.1f}% lower")
        return "\n".join(lines) + "\n"


def memory_account(problem_spec: dict, optimizer_spec: dict) -> MemoryReport:
    """Ledger for a concrete problem/optimizer pairing."""
    _, p = _resolve(optimizer_spec, _OPTIMIZER_PARAMS, "optimizer")
    problem = build_problem(problem_spec, seed=0)
    k, tau = int(p.get("k", 8)), int(p.get("tau", 10))
    return memory_report(problem.m, problem.d, k, tau)


def memory_report(m: int, d: int, k: int, tau: int) -> MemoryReport:
    return MemoryReport(m=m, d=d, k=k, tau=tau,
                        methods=memory_counts(m, d, k=k, tau=tau))


# -- convergence-rate fit ----------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    error_floor: float
    r_squared: float
    t_grid: tuple
    mean_gaps: tuple
    c: float
    k: int

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept,
                "error_floor": self.error_floor, "r_squared": self.r_squared,
                "t_grid": list(self.t_grid), "mean_gaps": list(self.mean_gaps),
                "c": self.c, "k": self.k}


def _lean_gradlite_run(problem: Problem, cfg: GradLiteConfig, steps: int):
    state = init_gradlite_state(problem, None, cfg)
    for _ in range(steps):
        state, _ = gradlite_step(state, problem, None, cfg)
    return state


def rate_check(problem_spec: dict, k: int, t_grid, seeds, c: float,
               gradlite_overrides: dict | None = None,
               reference: tuple | None = None) -> RateFit:
    """Fit the log-log slope of the averaged-iterate gap over a T grid.

    The learning rate is c / sqrt(T) per grid point; gaps are averaged
    over the seeds.  The error floor is the excess of the largest-T gap
    over a fitted trend: by default this config's own fit, or, when
    `reference` = (slope, intercept) is given, an external trend (the
    exact method's fit), which measures the bias plateau directly even
    when this config's own curve is flat.
    """
    t_grid = sorted(int(t) for t in t_grid)
    seeds = list(seeds)
    if len(t_grid) < 4:
        raise ConfigError("rate fit needs at least 4 values of T")
    if len(seeds) < 1:
        raise ConfigError("rate fit needs at least one seed")
    probe_problem = build_problem(problem_spec, seed=0)
    if probe_problem.loss_star is None:
        raise NonPositiveGapError(
            f"problem {problem_spec.get('name')!r} has no known optimal loss")
    overrides = dict(gradlite_overrides or {})
    mean_gaps = []
    for t_steps in t_grid:
        eta = c / np.sqrt(t_steps)
        gaps = []
        for seed in seeds:
            problem = build_problem(problem_spec, seed=0)
            problem.reset_noise(derive_seed(seed, _NOISE_SALT))
            cfg = GradLiteConfig(eta=float(eta), k=k,
                                 tau=int(overrides.get("tau", 10)),
                                 ef_mode=overrides.get("ef_mode", "ef-standard"),
                                 probe=overrides.get("probe", "exact"),
                                 basis_mode=overrides.get("basis_mode", "svd"),
                                 seed=derive_seed(seed, _OPT_SALT))
            state = _lean_gradlite_run(problem, cfg, t_steps)
            gaps.append(problem.loss(averaged_iterate(state)) - problem.loss_star)
        mean_gaps.append(float(np.mean(gaps)))
    xs = np.log10(np.asarray(t_grid, dtype=np.float64))
    ys = np.log10(np.maximum(np.asarray(mean_gaps), 1e-300))
    slope, intercept = np.polyfit(xs, ys, 1)
    fit = intercept + slope * xs
    ss_res = float(np.sum((ys - fit) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    ref_slope, ref_intercept = reference if reference is not None \
        else (float(slope), float(intercept))
    floor = mean_gaps[-1] - 10.0 ** (ref_intercept + ref_slope * xs[-1])
    return RateFit(slope=float(slope), intercept=float(intercept),
                   error_floor=float(floor), r_squared=r_squared,
                   t_grid=tuple(t_grid), mean_gaps=tuple(mean_gaps),
                   c=float(c), k=k)


def rate_sweep(t_grid=(400, 1600, 6400, 25600), seeds=(0, 1, 2, 3, 4),
               k_grid=(2, 8, 32, 50), c: float = 0.3, d: int = 50,
               cond: float = 100.0, sigma: float = 0.5) -> dict:
    """Rate fits and bias floors for a rank sweep on the noisy quadratic.

    The slope comes from the full-rank fit, where the residual is zero
    and the feedback loop is inert.  The per-rank floors come from runs
    with the feedback disabled (where rank truncation leaves a permanent
    bias, the regime in which the plateau is observable at all) measured
    against the full-rank trend; with feedback on, the floors collapse
    toward zero, which the ef-standard comparison entry documents.
    """
    spec = {"name": "quadratic", "d": d, "cond": cond, "sigma": sigma}
    no_feedback = {"ef_mode": "off", "probe": "none"}
    full = rate_check(spec, d, t_grid, seeds, c, gradlite_overrides=no_feedback)
    ref = (full.slope, full.intercept)
    fits = {}
    for k in k_grid:
        if int(k) == d:
            fits[d] = full
        else:
            fits[int(k)] = rate_check(spec, int(k), t_grid, seeds, c,
                                      gradlite_overrides=no_feedback,
                                      reference=ref)
    mid_k = int(sorted(k_grid)[1]) if len(k_grid) > 1 else int(k_grid[0])
    with_feedback = rate_check(spec, mid_k, t_grid, seeds, c,
                               gradlite_overrides={"ef_mode": "ef-standard",
                                                   "probe": "exact"},
                               reference=ref)
    return {
        "problem": spec, "c": c, "t_grid": list(t_grid), "seeds": list(seeds),
        "fits": {str(k): f.to_dict() for k, f in fits.items()},
        "full_rank_slope": full.slope,
        "error_floors": {str(k): fits[int(k)].error_floor for k in k_grid},
        "ef_comparison": {"k": mid_k,
                          "floor_no_feedback": fits[mid_k].error_floor,
                          "floor_ef_standard": with_feedback.error_floor},
    }


# -- ablation ---------------------------------------------------------------

@dataclass(frozen=True)
class AblationRow:
    variant: str
    seed: int
    final_loss: float
    final_gap: float
    diverged: bool


@dataclass(frozen=True)
class AblationResult:
    rows: tuple
    eta: float
    config: dict

    def write_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write("variant,seed,final_loss,final_gap\n")
            for r in self.rows:
                fh.write(f"{r.variant},{r.seed},{_fmt(r.final_loss)},"
                         f"{_fmt(r.final_gap)}\n")

    def by_seed(self) -> dict:
        out: dict[int, dict[str, AblationRow]] = {}
        for r in self.rows:
            out.setdefault(r.seed, {})[r.variant] = r
        return out


def _variant_config(variant: str, eta: float, k: int, tau: int, seed: int) -> GradLiteConfig:
    if variant == "full":
        return GradLiteConfig(eta=eta, k=k, tau=tau, ef_mode="ef-standard",
                              probe="exact", basis_mode="svd", seed=seed)
    if variant == "no-error-feedback":
        return GradLiteConfig(eta=eta, k=k, tau=tau, ef_mode="off",
                              probe="exact", basis_mode="svd", seed=seed)
    if variant == "random-projection":
        return GradLiteConfig(eta=eta, k=k, tau=tau, ef_mode="ef-standard",
                              probe="exact", basis_mode="random-projection",
                              seed=seed)
    raise ConfigError(f"unknown ablation variant {variant!r}")


def _final_loss_of(problem: Problem, cfg: GradLiteConfig, steps: int):
    problem.reset_noise(derive_seed(cfg.seed, _NOISE_SALT))
    state = init_gradlite_state(problem, None, cfg)
    try:
        for _ in range(steps):
            state, _ = gradlite_step(state, problem, None, cfg)
    except DivergedError:
        return float("inf"), True
    return problem.loss(state.theta), False


def _ablation_problem(seed: int, n: int, d: int, cond: float) -> Problem:
    return make_lowrank_logistic(n, d, cond,
                                 seed=derive_seed(seed, _ABLATION_SALT))


def tune_eta(seed: int, steps: int, k: int, tau: int, n: int, d: int,
             cond: float, grid=ETA_GRID) -> float:
    """Coarse grid search on the full variant only; ablations inherit it."""
    problem = _ablation_problem(seed, n, d, cond)
    best_eta, best_loss = None, float("inf")
    for eta in grid:
        cfg = _variant_config("full", float(eta), k, tau,
                              derive_seed(seed, _OPT_SALT))
        loss, _ = _final_loss_of(problem, cfg, steps)
        if loss < best_loss:
            best_eta, best_loss = float(eta), loss
    if best_eta is None:
        raise ConfigError("every learning rate on the tuning grid diverged")
    return best_eta


def ablation_suite(seeds=(0, 1, 2), steps: int = 3000, k: int = 8,
                   tau: int = 10, n: int = 512, d: int = 128,
                   cond: float = 1e3, eta: float | None = None) -> AblationResult:
    """Full method vs no-feedback vs static random basis, paired by seed."""
    seeds = sorted(int(s) for s in seeds)
    if not seeds:
        raise ConfigError("ablation needs at least one seed")
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    if eta is None:
        eta = tune_eta(seeds[0], steps, k, tau, n, d, cond)
    rows = []
    for variant in ABLATION_VARIANTS:
        for seed in seeds:
            problem = _ablation_problem(seed, n, d, cond)
            cfg = _variant_config(variant, eta, k, tau,
                                  derive_seed(seed, _OPT_SALT))
            loss, diverged = _final_loss_of(problem, cfg, steps)
            gap = loss - problem.loss_star if problem.loss_star is not None \
                else float("nan")
            rows.append(AblationRow(variant=variant, seed=seed,
                                    final_loss=loss, final_gap=gap,
                                    diverged=diverged))
    rows.sort(key=lambda r: (ABLATION_VARIANTS.index(r.variant), r.seed))
    config = {"steps": steps, "k": k, "tau": tau, "n": n, "d": d,
              "cond": cond, "eta": eta, "seeds": seeds}
    return AblationResult(rows=tuple(rows), eta=eta, config=config)


# -- gradient checks ----------------------------------------------------------

@dataclass(frozen=True)
class CheckRow:
    problem: str
    block: int
    check: str
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


@dataclass(frozen=True)
class GradCheckReport:
    rows: tuple

    @property
    def total_checks(self) -> int:
        return len(self.rows)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def failures(self) -> list:
        return [r for r in self.rows if not r.passed]

    def to_text(self) -> str:
        lines = []
        for r in self.rows:
            mark = "ok  " if r.passed else "FAIL"
            lines.append(f"{mark} {r.problem} block {r.block} {r.check}: "
                         f"max rel err {r.max_rel_err:.3e} (tol {r.tol:g})")
        lines.append(f"{self.total_checks} checks, "
                     f"{len(self.failures())} failures")
        return "\n".join(lines) + "\n"


def default_check_problems() -> list:
    return [
        make_quadratic(12, 10.0, 0.0, seed=101),
        make_gaussian_logistic(40, 12, seed=102),
        make_mlp([6, 10, 1], 12, seed=103),
        make_mlp([8, 1], 20, seed=104),  # linear net, the least-squares case
    ]


def _check_thetas(problem: Problem, count: int, spread: float = 0.5):
    from .rng import SplitMix64
    stream = SplitMix64(derive_seed(problem.seed, _CHECK_SALT))
    base = problem.default_theta0()
    return [base + spread * stream.normals(problem.d) for _ in range(count)]


def grad_check_suite(problems=None, chain_draws: int = 100,
                     fd_draws: int = 3, h: float = 1e-5) -> GradCheckReport:
    """Chain-rule and finite-difference checks over every problem family."""
    if problems is None:
        problems = default_check_problems()
    rows = []
    for problem in problems:
        fd_tol = 1e-4 if problem.name == "mlp" else 1e-5
        thetas = _check_thetas(problem, chain_draws)
        slices = problem.block_slices()
        worst = [0.0] * problem.blocks
        for theta in thetas:
            delta = problem.error_signal(theta)  # sigma=0 instances: noiseless
            g = problem.exact_gradient(theta)
            for b in range(problem.blocks):
                gb = matvec_t(problem.jacobian(theta, block=b), delta)
                err = float(np.linalg.norm(gb - g[slices[b]]))
                worst[b] = max(worst[b], err / (1.0 + float(np.linalg.norm(g))))
        for b in range(problem.blocks):
            rows.append(CheckRow(problem=problem.name, block=b,
                                 check="chain-rule", max_rel_err=worst[b],
                                 tol=1e-10))
        worst_fd = [0.0] * problem.blocks
        for theta in thetas[:fd_draws]:
            fd = finite_difference_gradient(problem, theta, h)
            g = problem.exact_gradient(theta)
            denom = max(float(np.linalg.norm(g)), 1e-12)
            for b in range(problem.blocks):
                err = float(np.linalg.norm(fd[slices[b]] - g[slices[b]])) / denom
                worst_fd[b] = max(worst_fd[b], err)
        for b in range(problem.blocks):
            rows.append(CheckRow(problem=problem.name, block=b,
                                 check="finite-difference",
                                 max_rel_err=worst_fd[b], tol=fd_tol))
    return GradCheckReport(rows=tuple(rows))
