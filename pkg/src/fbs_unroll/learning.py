"""Training objectives, exact adjoint gradients, and the projected trainer.

The discrete objective is the mean terminal loss over a sample batch plus
three weighted parameter-regularization terms (layer means of the p-th power
of, respectively, the Frobenius norm of A_k, |alpha_k|, |lambda_k|, mapped
through psi).  The continuous objective evaluates the same quantity for a
time control via fine-grid unrolling, with the integral regularizers summed
in closed form over the control cells.

Gradients are reverse-mode adjoints of the unrolled recursion, using the
a.e. derivative of the prox (for l1: pass-through on active coordinates,
threshold derivative -scale*sign(output) there).  The batch is processed in
fixed 64-sample tiles whose partial sums are reduced in tile order, so
results are bitwise independent of the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import NumericsError, TrainingDiverged
from .dynamics import Control, NetworkParams, fbs_forward_batch, project_control
from .regularizers import Regularizer

TILE = 64   # fixed reduction granularity; must not depend on the worker count


@dataclass(frozen=True)
class ObjectiveConfig:
    """Weights and shape of the parameter-regularization terms."""

    beta1: float = 0.0
    beta2: float = 0.0
    beta3: float = 0.0
    pnorm: float = 2.0
    psi: str = "identity"        # "identity" | "scaled"
    psi_scale: float = 1.0

    def __post_init__(self):
        if self.beta1 < 0 or self.beta2 < 0 or self.beta3 < 0:
            raise ValueError("beta weights must be >= 0")
        if not (self.pnorm >= 1):
            raise ValueError("pnorm must be >= 1")
        if self.psi not in ("identity", "scaled"):
            raise ValueError("psi must be 'identity' or 'scaled'")
        if self.psi == "scaled" and self.psi_scale < 0:
            raise ValueError("psi_scale must be >= 0")

    def psi_value(self, x: float) -> float:
        return x if self.psi == "identity" else self.psi_scale * x

    def psi_prime(self) -> float:
        return 1.0 if self.psi == "identity" else self.psi_scale


@dataclass(frozen=True)
class TrainConfig:
    """Projected-SGD hyperparameters.

    Per-group learning rates are r0 * N**e with exponents (e_A, e_alpha,
    e_lambda); alpha and lambda are clamped to [0, alpha_max] / [0,
    lambda_max] after every step.
    """

    epochs: int = 200
    batch_size: int = 256
    r0: float = 1e-3
    momentum: float = 0.9
    lr_exponents: tuple = (1, 3, 1)
    seed: int = 1234
    alpha_max: float = 1e6
    lambda_max: float = 1e6
    alpha0: float = 10.0
    lambda0: float = 0.05
    a_init: str = "orth_transpose"   # "orth_transpose" | "given"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.r0 < 0:
            raise ValueError("r0 must be >= 0")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must be in [0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.alpha_max <= 0 or self.lambda_max <= 0:
            raise ValueError("box bounds must be positive")
        if self.a_init not in ("orth_transpose", "given"):
            raise ValueError("a_init must be 'orth_transpose' or 'given'")

    def group_rates(self, N: int):
        eA, ea, el = self.lr_exponents
        return self.r0 * N ** eA, self.r0 * N ** ea, self.r0 * N ** el


@dataclass
class Batch:
    """A slice of samples: initial states, observations, labels."""

    X0: np.ndarray   # (J, n)
    B: np.ndarray    # (J, m)
    Y: np.ndarray    # (J, n)

    def __post_init__(self):
        if not (self.X0.shape[0] == self.B.shape[0] == self.Y.shape[0]):
            raise ValueError("batch arrays must share the sample axis")
        if self.X0.shape != self.Y.shape:
            raise ValueError("X0 and Y must both have shape (J, n)")

    def __len__(self):
        return self.X0.shape[0]

    def take(self, idx) -> "Batch":
        return Batch(self.X0[idx], self.B[idx], self.Y[idx])


@dataclass
class Dataset:
    """Samples (b_j, y_j) with initial states and generation metadata."""

    m: int
    n: int
    B: np.ndarray        # (J + J_val, m)
    Y: np.ndarray        # (J + J_val, n)
    X0: np.ndarray       # (J + J_val, n)
    train_count: int
    val_count: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        total = self.train_count + self.val_count
        if self.B.shape != (total, self.m) or self.Y.shape != (total, self.n) \
                or self.X0.shape != (total, self.n):
            raise ValueError("dataset array shapes inconsistent with counts/dims")

    def train_batch(self) -> Batch:
        J = self.train_count
        return Batch(self.X0[:J], self.B[:J], self.Y[:J])

    def val_batch(self) -> Batch:
        J = self.train_count
        return Batch(self.X0[J:], self.B[J:], self.Y[J:])


@dataclass
class Gradients:
    """Adjoint gradients matching a NetworkParams layout."""

    dA: np.ndarray       # (N, m, n)
    dalpha: np.ndarray   # (N,)
    dlam: np.ndarray     # (N,)

    def __iadd__(self, other: "Gradients"):
        self.dA += other.dA
        self.dalpha += other.dalpha
        self.dlam += other.dlam
        return self


def loss(x, y) -> float:
    """Half squared l2 distance between a terminal state and its label."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    d = x - y
    return float(0.5 * np.dot(d.ravel(), d.ravel()))


def _reg_sums(A_stack, alpha, lam, pnorm):
    """Layer/cell means of ||A_k||_F^p, |alpha_k|^p, |lam_k|^p."""
    K = A_stack.shape[0]
    fro = np.sqrt(np.sum(A_stack * A_stack, axis=(1, 2)))
    s1 = float(np.sum(fro ** pnorm)) / K
    s2 = float(np.sum(np.abs(alpha) ** pnorm)) / K
    s3 = float(np.sum(np.abs(lam) ** pnorm)) / K
    return s1, s2, s3


def reg_terms(p: NetworkParams, cfg: ObjectiveConfig):
    """The three parameter-regularization terms (psi of the layer means)."""
    s1, s2, s3 = _reg_sums(p.A, p.alpha, p.lam, cfg.pnorm)
    return cfg.psi_value(s1), cfg.psi_value(s2), cfg.psi_value(s3)


def _data_loss(p: NetworkParams, batch: Batch, reg: Regularizer) -> float:
    XT = fbs_forward_batch(p, batch.X0, batch.B, reg)
    d = XT - batch.Y
    return float(0.5 * np.sum(d * d)) / len(batch)


def objective_discrete(p: NetworkParams, batch: Batch, reg: Regularizer,
                       cfg: ObjectiveConfig) -> float:
    """Mean terminal loss over the batch plus weighted regularization terms."""
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    h1, h2, h3 = reg_terms(p, cfg)
    return _data_loss(p, batch, reg) + cfg.beta1 * h1 + cfg.beta2 * h2 + cfg.beta3 * h3


def objective_continuous(u: Control, batch: Batch, reg: Regularizer,
                         cfg: ObjectiveConfig, N_ref: int = 2048) -> float:
    """Objective of the limit system via fine-grid unrolling.

    Terminal states come from the depth-N_ref recursion with the cell-averaged
    control (N_ref rounded up to a multiple of the control grid); the integral
    regularizers reduce to exact cell sums for a piecewise-constant control.
    With u the extension of layer parameters and N_ref equal to their depth,
    this reproduces ``objective_discrete`` exactly.
    """
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    if N_ref < 1:
        raise ValueError("N_ref must be >= 1")
    N_eff = N_ref if N_ref % u.M == 0 else ((N_ref // u.M) + 1) * u.M
    p = project_control(u, N_eff)
    s1, s2, s3 = _reg_sums(u.A, u.alpha, u.lam, cfg.pnorm)
    h1, h2, h3 = cfg.psi_value(s1), cfg.psi_value(s2), cfg.psi_value(s3)
    return _data_loss(p, batch, reg) + cfg.beta1 * h1 + cfg.beta2 * h2 + cfg.beta3 * h3


# ---------------------------------------------------------------------------
# adjoint gradients


def _zero_grads(p: NetworkParams) -> Gradients:
    return Gradients(np.zeros_like(p.A), np.zeros_like(p.alpha), np.zeros_like(p.lam))


def _tile_adjoint(p: NetworkParams, tile: Batch, reg: Regularizer, inv_batch: float):
    """Loss sum and data-loss gradients for one tile.

    inv_batch is 1/J of the full batch, so tile contributions add exactly.
    """
    states = fbs_forward_batch(p, tile.X0, tile.B, reg, keep_states=True)
    N, h = p.N, p.h
    g = _zero_grads(p)
    XT = states[N]
    D = XT - tile.Y
    loss_sum = float(0.5 * np.sum(D * D))
    G = D * inv_batch
    s = reg.scale
    for k in range(N - 1, -1, -1):
        Ak = p.A[k]
        ak, lk = p.alpha[k], p.lam[k]
        Xk, Xk1 = states[k], states[k + 1]
        Rk = Xk @ Ak.T - tile.B
        Gk_dir = Rk @ Ak                       # gradient-step direction
        rho = h * ak * lk
        if reg.kind == "l1":
            sgn = np.sign(Xk1)
            drho = -s * float(np.sum(G * sgn))
            if rho > 0.0:
                Gu = G * (np.abs(Xk1) > 0.0)
            else:
                Gu = G
        elif reg.kind == "squared_l2":
            c = 1.0 + 2.0 * rho * s
            drho = (-2.0 * s / c) * float(np.sum(G * Xk1))
            Gu = G / c
        else:
            drho = 0.0
            Gu = G
        g.dlam[k] = drho * h * ak
        g.dalpha[k] = -h * float(np.sum(Gu * Gk_dir)) + drho * h * lk
        AGu = Gu @ Ak.T
        g.dA[k] = -h * ak * (Rk.T @ Gu + AGu.T @ Xk)
        G = Gu - h * ak * (AGu @ Ak)
    return loss_sum, g


def _reg_gradients(p: NetworkParams, cfg: ObjectiveConfig, g: Gradients):
    """Add the closed-form gradients of the regularization terms in place."""
    N, pw = p.N, cfg.pnorm
    dpsi = cfg.psi_prime()
    if cfg.beta1 > 0:
        fro = np.sqrt(np.sum(p.A * p.A, axis=(1, 2)))
        if pw == 2.0:
            coef = np.full(N, 2.0)
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                coef = np.where(fro > 0.0, pw * fro ** (pw - 2.0), 0.0)
        g.dA += (cfg.beta1 * dpsi / N) * coef[:, None, None] * p.A
    if cfg.beta2 > 0:
        g.dalpha += (cfg.beta2 * dpsi * pw / N) * np.abs(p.alpha) ** (pw - 1.0) * np.sign(p.alpha)
    if cfg.beta3 > 0:
        g.dlam += (cfg.beta3 * dpsi * pw / N) * np.abs(p.lam) ** (pw - 1.0) * np.sign(p.lam)


def grad_objective(p: NetworkParams, batch: Batch, reg: Regularizer,
                   cfg: ObjectiveConfig, threads: int = 1):
    """Objective value and its exact gradient on the batch.

    Tiles of TILE samples are differentiated independently (possibly on a
    thread pool) and reduced in fixed tile order; the regularization-term
    gradients are added once in closed form.
    """
    J = len(batch)
    if J == 0:
        raise ValueError("batch must be nonempty")
    tiles = [batch.take(slice(i, min(i + TILE, J))) for i in range(0, J, TILE)]
    inv_batch = 1.0 / J

    def work(item):
        i, t = item
        try:
            return _tile_adjoint(p, t, reg, inv_batch)
        except (ValueError, NumericsError) as e:
            raise type(e)(f"samples [{i * TILE}:{i * TILE + len(t)}]: {e}") from e

    if threads > 1 and len(tiles) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, enumerate(tiles)))
    else:
        parts = [work(it) for it in enumerate(tiles)]

    loss_sum = 0.0
    g = _zero_grads(p)
    for part_loss, part_g in parts:      # fixed order, independent of workers
        loss_sum += part_loss
        g += part_g
    s1, s2, s3 = _reg_sums(p.A, p.alpha, p.lam, cfg.pnorm)
    value = loss_sum * inv_batch + cfg.beta1 * cfg.psi_value(s1) \
        + cfg.beta2 * cfg.psi_value(s2) + cfg.beta3 * cfg.psi_value(s3)
    _reg_gradients(p, cfg, g)
    return value, g


# ---------------------------------------------------------------------------
# trainer


def init_params(N: int, T: float, A_base, tcfg: TrainConfig) -> NetworkParams:
    """Replicated-layer initialization.

    Every layer's A is the transpose of the orthonormalized columns of
    A_base^T (QR with the R-diagonal forced nonnegative, so the result is
    deterministic); alpha and lambda start at their configured constants.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    A_base = np.asarray(A_base, dtype=float)
    m, n = A_base.shape
    if tcfg.a_init == "orth_transpose":
        Q, R = np.linalg.qr(A_base.T)        # A_base.T is (n, m)
        diag = np.diag(R)
        if np.min(np.abs(diag)) < 1e-12 * max(1.0, float(np.max(np.abs(diag)))):
            raise ValueError("A_base is rank deficient; cannot orthonormalize")
        sign = np.where(diag < 0, -1.0, 1.0)
        layer = (Q * sign).T
    else:
        layer = A_base
    A = np.repeat(layer[None, :, :], N, axis=0)
    return NetworkParams(T, A,
                         np.full(N, float(tcfg.alpha0)),
                         np.full(N, float(tcfg.lambda0)))


def _epoch_batches(J: int, batch_size: int, seed: int, epoch: int):
    """Deterministic shuffle and contiguous batch split for one epoch."""
    perm = np.random.default_rng([seed, epoch]).permutation(J)
    return [perm[i:i + batch_size] for i in range(0, J, batch_size)]


def sgd_train(p0: NetworkParams, data: Dataset, reg: Regularizer,
              ocfg: ObjectiveConfig, tcfg: TrainConfig, threads: int = 1,
              on_epoch=None):
    """Projected SGD with momentum over the training split.

    Velocity update v <- momentum*v + g, parameter update p <- p - r*v with
    per-group rates from ``tcfg.group_rates``; alpha and lambda are clamped to
    their boxes after every step.  Shuffling is a pure function of
    (seed, epoch).  The curve holds one row per epoch:
    (epoch, train_objective, train_data_loss, val_data_loss).

    Raises TrainingDiverged (with epoch and batch index) on non-finite loss.
    """
    p = p0.copy()
    curve = []
    J = data.train_count
    train = data.train_batch()
    val = data.val_batch()
    rA, ra, rl = tcfg.group_rates(p.N)
    vA = np.zeros_like(p.A)
    va = np.zeros_like(p.alpha)
    vl = np.zeros_like(p.lam)
    mu = tcfg.momentum
    for epoch in range(1, tcfg.epochs + 1):
        for bi, idx in enumerate(_epoch_batches(J, tcfg.batch_size, tcfg.seed, epoch)):
            value, g = grad_objective(p, train.take(idx), reg, ocfg, threads=threads)
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite training loss at epoch {epoch}, batch {bi}",
                    epoch=epoch, batch=bi)
            vA = mu * vA + g.dA
            va = mu * va + g.dalpha
            vl = mu * vl + g.dlam
            p.A -= rA * vA
            p.alpha = np.clip(p.alpha - ra * va, 0.0, tcfg.alpha_max)
            p.lam = np.clip(p.lam - rl * vl, 0.0, tcfg.lambda_max)
            assert np.all(p.alpha >= 0) and np.all(p.alpha <= tcfg.alpha_max)
            assert np.all(p.lam >= 0) and np.all(p.lam <= tcfg.lambda_max)
        train_data = _data_loss(p, train, reg)
        h1, h2, h3 = reg_terms(p, ocfg)
        train_obj = train_data + ocfg.beta1 * h1 + ocfg.beta2 * h2 + ocfg.beta3 * h3
        val_data = _data_loss(p, val, reg) if len(val) else float("nan")
        if not math.isfinite(train_obj):
            raise TrainingDiverged(
                f"non-finite training loss at epoch {epoch} (end-of-epoch evaluation)",
                epoch=epoch, batch=None)
        curve.append((epoch, train_obj, train_data, val_data))
        if on_epoch is not None:
            on_epoch(epoch, p)
    return p, curve
