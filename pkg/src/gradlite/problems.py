"""Desk-scale objectives exposing the (jacobian, error-signal) split.

Every problem satisfies the chain-rule contract
``exact_gradient == jacobian.T @ error_signal`` (noiselessly, per block)
and declares a smoothness constant.  Problems are full batch: `batch`
exists in the signatures for symmetry with the optimizer API but only
``None`` is accepted.  Stochasticity enters through the error signal's
noise stream, which is the only mutable part of a problem and is owned by
one run at a time.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DataError, DimError, SpdError
from .rng import SplitMix64, derive_seed

_NOISE_SALT = 0x0151_0001
_MATRIX_SALT = 0x0151_0002
_DATA_SALT = 0x0151_0003
_LABEL_SALT = 0x0151_0004
_THETA0_SALT = 0x0151_0005
_SMOOTH_SALT = 0x0151_0006


def _expit(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _log1pexp(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def _check_batch(batch):
    if batch is not None:
        raise ConfigError("desk problems are full-batch; batch must be None")


class Dataset:
    """Feature matrix plus a target vector, reproducible from its seed."""

    def __init__(self, x, y, seed: int = 0):
        self.x = np.asarray(x, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        self.seed = seed
        if self.x.ndim != 2 or self.y.ndim != 1 or self.x.shape[0] != self.y.shape[0]:
            raise DimError(f"dataset shapes {self.x.shape} / {self.y.shape}")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise DataError("dataset contains non-finite values")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def to_csv(self, path):
        cols = [f"x{j}" for j in range(self.d)] + ["target"]
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(cols) + "\n")
            for i in range(self.n):
                row = [format(v, ".17g") for v in self.x[i]] + \
                      [format(self.y[i], ".17g")]
                fh.write(",".join(row) + "\n")

    @classmethod
    def from_csv(cls, path, seed: int = 0) -> "Dataset":
        with open(path, newline="\n") as fh:
            header = fh.readline().strip().split(",")
            if not header or header[-1] != "target":
                raise DataError(f"{path}: last column must be 'target'")
            d = len(header) - 1
            xs, ys = [], []
            for line in fh:
                parts = line.strip().split(",")
                if len(parts) != d + 1:
                    raise DataError(f"{path}: row width {len(parts)} != {d + 1}")
                vals = [float(p) for p in parts]
                xs.append(vals[:d])
                ys.append(vals[d])
        return cls(np.array(xs), np.array(ys), seed=seed)


def synth_dataset(seed: int, n: int, d: int, kind: str) -> Dataset:
    """Deterministic synthetic data.

    gaussian-logistic: iid N(0,1) features, Bernoulli {0,1} labels from a
    hidden linear scorer.  low-rank-regression: features with a geometric
    singular-value decay of condition 1e3, real targets from a hidden
    linear map plus small noise.
    """
    if n < 1 or d < 1:
        raise ConfigError(f"dataset dims n={n}, d={d} must be >= 1")
    feat = SplitMix64(derive_seed(seed, _DATA_SALT))
    lab = SplitMix64(derive_seed(seed, _LABEL_SALT))
    if kind == "gaussian-logistic":
        x = feat.normal_matrix(n, d)
        w = lab.normals(d) / np.sqrt(d) * 2.0
        p = _expit(x @ w)
        y = (lab.uniforms(n) < p).astype(np.float64)
        return Dataset(x, y, seed=seed)
    if kind == "low-rank-regression":
        x = _lowrank_design(feat, n, d, cond=1e3, top_sv=10.0)
        w = lab.normals(d) / np.sqrt(d)
        y = x @ w + 0.1 * lab.normals(n)
        return Dataset(x, y, seed=seed)
    raise ConfigError(f"unknown dataset kind {kind!r}")


def _lowrank_design(stream: SplitMix64, n: int, d: int, cond: float,
                    top_sv: float) -> np.ndarray:
    """n x d matrix with exact geometric singular values top_sv..top_sv/cond."""
    r = min(n, d)
    qu, _ = np.linalg.qr(stream.normal_matrix(n, r))
    qv, _ = np.linalg.qr(stream.normal_matrix(d, r))
    if r == 1:
        s = np.array([top_sv])
    else:
        s = top_sv * (1.0 / cond) ** (np.arange(r) / (r - 1))
    return (qu * s[None, :]) @ qv.T


class Problem:
    """Shared plumbing; subclasses fill in the math."""

    m: int
    block_dims: tuple[int, ...]
    smoothness: float
    noise_sigma: float = 0.0
    theta_star: np.ndarray | None = None
    loss_star: float | None = None
    name: str = "problem"

    def _init_noise(self, seed: int):
        self.seed = seed
        self._noise = SplitMix64(derive_seed(seed, _NOISE_SALT))

    def reset_noise(self, seed: int):
        """Attach a fresh noise stream; each run owns its own."""
        self._noise = SplitMix64(seed)

    @property
    def d(self) -> int:
        return int(sum(self.block_dims))

    @property
    def blocks(self) -> int:
        return len(self.block_dims)

    def block_slices(self) -> list[slice]:
        out, at = [], 0
        for w in self.block_dims:
            out.append(slice(at, at + w))
            at += w
        return out

    def _noise_vec(self) -> np.ndarray:
        if self.noise_sigma > 0.0:
            return self.noise_sigma * self._noise.normals(self.m)
        return np.zeros(self.m)

    def loss(self, theta, batch=None) -> float:
        raise NotImplementedError

    def error_signal(self, theta, batch=None) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, theta, batch=None, block: int = 0) -> np.ndarray:
        raise NotImplementedError

    def exact_gradient(self, theta, batch=None) -> np.ndarray:
        raise NotImplementedError

    def default_theta0(self) -> np.ndarray:
        raise NotImplementedError


class QuadraticProblem(Problem):
    """0.5 (theta - t*)' A (theta - t*) with jacobian sqrt(A).

    The error signal is sqrt(A)(theta - t*) plus optional Gaussian noise
    of scale sigma per draw, so stochasticity passes through the same
    projection pipeline as the signal itself.
    """

    name = "quadratic"

    def __init__(self, a, theta_star, noise_sigma: float = 0.0, seed: int = 0):
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise SpdError(f"matrix must be square, got {a.shape}")
        if not np.allclose(a, a.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.abs(a).max()))):
            raise SpdError("matrix is not symmetric")
        evals, evecs = np.linalg.eigh(a)
        if evals.min() <= 0.0:
            raise SpdError(f"matrix is not positive definite (min eig {evals.min():g})")
        self.a = a
        self._sqrt_a = (evecs * np.sqrt(evals)[None, :]) @ evecs.T
        self._sqrt_a = 0.5 * (self._sqrt_a + self._sqrt_a.T)
        self.theta_star = np.asarray(theta_star, dtype=np.float64)
        if self.theta_star.shape != (a.shape[0],):
            raise DimError("theta_star length does not match the matrix")
        self.noise_sigma = float(noise_sigma)
        if self.noise_sigma < 0.0:
            raise ConfigError("noise sigma must be >= 0")
        self.m = a.shape[0]
        self.block_dims = (a.shape[0],)
        self.smoothness = float(evals.max())
        self.loss_star = 0.0
        self._init_noise(seed)

    def loss(self, theta, batch=None) -> float:
        _check_batch(batch)
        r = theta - self.theta_star
        return 0.5 * float(r @ (self.a @ r))

    def error_signal(self, theta, batch=None) -> np.ndarray:
        _check_batch(batch)
        return self._sqrt_a @ (theta - self.theta_star) + self._noise_vec()

    def jacobian(self, theta, batch=None, block: int = 0) -> np.ndarray:
        _check_batch(batch)
        return self._sqrt_a

    def exact_gradient(self, theta, batch=None) -> np.ndarray:
        _check_batch(batch)
        return self.a @ (theta - self.theta_star)

    def default_theta0(self) -> np.ndarray:
        return self.theta_star + np.ones(self.d)


def quadratic_problem(a, theta_star, noise_sigma: float = 0.0,
                      seed: int = 0) -> QuadraticProblem:
    return QuadraticProblem(a, theta_star, noise_sigma, seed)


class LogisticProblem(Problem):
    """Summed logistic loss; jacobian is the design matrix itself.

    With l2 > 0 the gradient gains the ridge term l2*theta, which is not
    part of jacobian.T @ error_signal; the chain-rule contract therefore
    applies to l2 = 0 instances, which is what every experiment uses.
    """

    name = "logistic"

    def __init__(self, data: Dataset, l2: float = 0.0):
        bad = ~np.isin(data.y, (0.0, 1.0))
        if bad.any():
            raise DataError(f"labels must be in {{0, 1}}; offending row {int(np.argmax(bad))}")
        if l2 < 0.0:
            raise ConfigError("l2 must be >= 0")
        self.data = data
        self.l2 = float(l2)
        self.m = data.n
        self.block_dims = (data.d,)
        gram_top = float(np.linalg.eigvalsh(data.x.T @ data.x).max())
        self.smoothness = 0.25 * gram_top + self.l2
        self._init_noise(data.seed)

    def loss(self, theta, batch=None) -> float:
        _check_batch(batch)
        z = self.data.x @ theta
        core = float(np.sum(_log1pexp(z) - self.data.y * z))
        return core + 0.5 * self.l2 * float(theta @ theta)

    def error_signal(self, theta, batch=None) -> np.ndarray:
        _check_batch(batch)
        return _expit(self.data.x @ theta) - self.data.y + self._noise_vec()

    def jacobian(self, theta, batch=None, block: int = 0) -> np.ndarray:
        _check_batch(batch)
        return self.data.x

    def exact_gradient(self, theta, batch=None) -> np.ndarray:
        _check_batch(batch)
        g = self.data.x.T @ (_expit(self.data.x @ theta) - self.data.y)
        return g + self.l2 * theta

    def default_theta0(self) -> np.ndarray:
        return np.zeros(self.d)

    def solve_optimum(self, tol: float = 1e-8, max_iter: int = 500) -> bool:
        """Damped Newton to a reference optimum; records loss_star on success.

        The reference is accurate to roughly tol**2 / curvature in loss
        terms, ample for gap reporting; near-separable instances converge
        slowly along tiny-curvature directions, hence the generous cap.
        """
        theta = np.zeros(self.d)
        loss = self.loss(theta)
        for _ in range(max_iter):
            p = _expit(self.data.x @ theta)
            g = self.data.x.T @ (p - self.data.y) + self.l2 * theta
            if float(np.abs(g).max()) <= tol:
                self.loss_star = self.loss(theta)
                self.theta_hat = theta
                return True
            w = p * (1.0 - p)
            h = (self.data.x.T * w[None, :]) @ self.data.x
            h[np.diag_indices_from(h)] += self.l2 + 1e-12
            step = np.linalg.solve(h, g)
            t = 1.0
            while t > 1e-8:
                cand = theta - t * step
                cand_loss = self.loss(cand)
                if cand_loss <= loss:
                    theta, loss = cand, cand_loss
                    break
                t *= 0.5
            else:
                return False
        return False


def logistic_problem(data: Dataset, l2: float = 0.0) -> LogisticProblem:
    return LogisticProblem(data, l2)


class MlpProblem(Problem):
    """Tanh MLP regression with mean squared-error loss 0.5*||f - y||^2 / n.

    One parameter block per layer (weights row-major, then biases).  The
    per-block jacobian of the predictions is materialized explicitly,
    which is O(n * block params) memory, fine at desk scale; the exact
    gradient goes through an independent reverse pass.
    """

    name = "mlp"

    def __init__(self, layers, activation: str, data: Dataset):
        if activation != "tanh":
            raise ConfigError(f"unsupported activation {activation!r}")
        layers = [int(w) for w in layers]
        if len(layers) < 2 or any(w < 1 for w in layers):
            raise ConfigError(f"bad layer widths {layers}")
        if layers[0] != data.d:
            raise DimError(f"input width {layers[0]} != feature count {data.d}")
        if layers[-1] != 1:
            raise ConfigError("output width must be 1 (vector targets)")
        total = sum(layers[i + 1] * layers[i] + layers[i + 1]
                    for i in range(len(layers) - 1))
        if total > 10**5:
            raise ConfigError(f"{total} parameters exceeds the desk-scale cap")
        self.layers = layers
        self.data = data
        self.m = data.n
        self.block_dims = tuple(layers[i + 1] * layers[i] + layers[i + 1]
                                for i in range(len(layers) - 1))
        self._init_noise(data.seed)
        self.smoothness = self._calibrate_smoothness()

    # -- parameter packing ------------------------------------------------
    def _unpack(self, theta):
        ws, bs, at = [], [], 0
        for i in range(len(self.layers) - 1):
            nin, nout = self.layers[i], self.layers[i + 1]
            ws.append(theta[at:at + nout * nin].reshape(nout, nin))
            at += nout * nin
            bs.append(theta[at:at + nout])
            at += nout
        return ws, bs

    def _forward(self, theta):
        ws, bs = self._unpack(theta)
        acts, pre = [self.data.x], []
        h = self.data.x
        last = len(ws) - 1
        for i, (w, b) in enumerate(zip(ws, bs)):
            z = h @ w.T + b[None, :]
            pre.append(z)
            h = z if i == last else np.tanh(z)
            acts.append(h)
        return ws, bs, acts, pre

    def loss(self, theta, batch=None) -> float:
        _check_batch(batch)
        pred = self._forward(theta)[2][-1][:, 0]
        r = pred - self.data.y
        return 0.5 * float(r @ r) / self.data.n

    def error_signal(self, theta, batch=None) -> np.ndarray:
        _check_batch(batch)
        pred = self._forward(theta)[2][-1][:, 0]
        return (pred - self.data.y) / self.data.n + self._noise_vec()

    def jacobian(self, theta, batch=None, block: int = 0) -> np.ndarray:
        _check_batch(batch)
        if not 0 <= block < self.blocks:
            raise DimError(f"block {block} outside 0..{self.blocks - 1}")
        ws, _, acts, pre = self._forward(theta)
        n = self.data.n
        # dpred[i] / dz_l[i, p], built top-down; the output layer is linear.
        d_sens = np.ones((n, 1))
        for l in range(len(ws) - 1, block, -1):
            d_sens = (d_sens @ ws[l]) * (1.0 - np.tanh(pre[l - 1]) ** 2)
        jw = np.einsum("ip,iq->ipq", d_sens, acts[block]).reshape(n, -1)
        return np.concatenate([jw, d_sens], axis=1)

    def exact_gradient(self, theta, batch=None) -> np.ndarray:
        _check_batch(batch)
        ws, _, acts, pre = self._forward(theta)
        n = self.data.n
        delta = (acts[-1][:, 0] - self.data.y)[:, None] / n
        grads = [None] * len(ws)
        for l in range(len(ws) - 1, -1, -1):
            gw = delta.T @ acts[l]
            gb = delta.sum(axis=0)
            grads[l] = np.concatenate([gw.ravel(), gb])
            if l > 0:
                delta = (delta @ ws[l]) * (1.0 - np.tanh(pre[l - 1]) ** 2)
        return np.concatenate(grads)

    def default_theta0(self) -> np.ndarray:
        return self._sample_theta(SplitMix64(derive_seed(self.data.seed, _THETA0_SALT)))

    def _sample_theta(self, stream: SplitMix64) -> np.ndarray:
        parts = []
        for i in range(len(self.layers) - 1):
            nin, nout = self.layers[i], self.layers[i + 1]
            parts.append(stream.normals(nout * nin) / np.sqrt(nin))
            parts.append(stream.normals(nout) * 0.1)
        return np.concatenate(parts)

    def _calibrate_smoothness(self) -> float:
        # No global Lipschitz constant exists for unbounded weights; the
        # declared value covers the init-scale region (see _sample_theta),
        # estimated from sampled pairs with a 3x margin.
        stream = SplitMix64(derive_seed(self.data.seed, _SMOOTH_SALT))
        worst = 0.0
        for _ in range(200):
            t1 = self._sample_theta(stream)
            t2 = self._sample_theta(stream)
            num = float(np.linalg.norm(self.exact_gradient(t1) - self.exact_gradient(t2)))
            den = float(np.linalg.norm(t1 - t2))
            if den > 0.0:
                worst = max(worst, num / den)
        return 3.0 * worst


def mlp_problem(layers, activation: str, data: Dataset) -> MlpProblem:
    return MlpProblem(layers, activation, data)


def finite_difference_gradient(problem: Problem, theta, h: float = 1e-5) -> np.ndarray:
    """Central differences of the (deterministic) loss, coordinate by coordinate."""
    if h <= 0.0:
        raise ConfigError("h must be > 0")
    theta = np.asarray(theta, dtype=np.float64)
    out = np.empty(theta.shape[0])
    for i in range(theta.shape[0]):
        bumped = theta.copy()
        bumped[i] = theta[i] + h
        hi = problem.loss(bumped)
        bumped[i] = theta[i] - h
        lo = problem.loss(bumped)
        out[i] = (hi - lo) / (2.0 * h)
    return out


# -- seeded builders used by the harness and CLI --------------------------

def make_quadratic(d: int, cond: float, sigma: float, seed: int) -> QuadraticProblem:
    """Rotated quadratic with geometric spectrum 1 .. 1/cond (so L = 1)."""
    if d < 1 or cond < 1.0:
        raise ConfigError(f"bad quadratic spec d={d}, cond={cond}")
    stream = SplitMix64(derive_seed(seed, _MATRIX_SALT))
    if d == 1:
        lam = np.array([1.0])
    else:
        lam = (1.0 / cond) ** (np.arange(d) / (d - 1))
    q, _ = np.linalg.qr(stream.normal_matrix(d, d))
    a = (q * lam[None, :]) @ q.T
    a = 0.5 * (a + a.T)
    return QuadraticProblem(a, np.zeros(d), noise_sigma=sigma, seed=seed)


def make_gaussian_logistic(n: int, d: int, seed: int, l2: float = 0.0,
                           solve_optimum: bool = False) -> LogisticProblem:
    prob = LogisticProblem(synth_dataset(seed, n, d, "gaussian-logistic"), l2=l2)
    if solve_optimum:
        prob.solve_optimum()
    return prob


def make_lowrank_logistic(n: int, d: int, cond: float, seed: int,
                          solve_optimum: bool = True) -> LogisticProblem:
    """Logistic instance on an ill-conditioned low-rank design matrix.

    Labels are Bernoulli draws from a hidden linear scorer over the same
    features, scaled so flips are common enough to keep the optimum finite.
    """
    feat = SplitMix64(derive_seed(seed, _DATA_SALT))
    lab = SplitMix64(derive_seed(seed, _LABEL_SALT))
    x = _lowrank_design(feat, n, d, cond=cond, top_sv=10.0)
    w = lab.normals(d)
    s = x @ w
    scale = 2.0 / max(float(np.std(s)), 1e-12)
    p = _expit(s * scale)
    y = (lab.uniforms(n) < p).astype(np.float64)
    prob = LogisticProblem(Dataset(x, y, seed=seed))
    if solve_optimum:
        prob.solve_optimum()
    return prob


def make_mlp(layers, n: int, seed: int) -> MlpProblem:
    layers = [int(w) for w in layers]
    data = synth_dataset(seed, n, layers[0], "low-rank-regression")
    return MlpProblem(layers, "tanh", data)
