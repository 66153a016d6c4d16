"""Experiment drivers: dataset synthesis, depth sweep, limit-consistency
check, perturbation-stability study, and the LISTA-form objective comparison.

Every driver is a pure function of its configuration and seeds; rerunning
with the same inputs reproduces results bitwise (wall times excepted).
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (Control, LISTAParams, NetworkParams, control_sub,
                       extend_params, lista_forward, param_norm_lp,
                       project_control)
from .learning import (Batch, Dataset, ObjectiveConfig, TrainConfig, _reg_sums,
                       init_params, loss, objective_continuous,
                       objective_discrete, sgd_train)
from .regularizers import Regularizer


@dataclass(frozen=True)
class PerturbationSchedule:
    """Shrinking perturbations of the problem data.

    target selects which of the initial state, observation, or label is
    perturbed ("x0" | "b" | "y" | "all"); magnitudes must decrease strictly
    so the perturbed problems approach the unperturbed one.  The unit
    direction is drawn once from direction_seed and only rescaled.
    """

    target: str
    magnitudes: tuple
    direction_seed: int = 0

    def __post_init__(self):
        if self.target not in ("x0", "b", "y", "all"):
            raise ValueError("target must be one of 'x0', 'b', 'y', 'all'")
        mags = tuple(float(m) for m in self.magnitudes)
        if any(m <= 0 for m in mags):
            raise ValueError("magnitudes must be positive")
        if any(b >= a for a, b in zip(mags, mags[1:])):
            raise ValueError("magnitudes must be strictly decreasing")
        object.__setattr__(self, "magnitudes", mags)


@dataclass
class SweepRow:
    N: int
    final_train_objective: float
    final_train_data_loss: float
    final_val_data_loss: float
    wall_time: float
    error: str = ""


@dataclass
class SweepResult:
    """One trained model per depth; rows are sorted by increasing N."""

    rows: list = field(default_factory=list)

    def __post_init__(self):
        Ns = [r.N for r in self.rows]
        if any(b <= a for a, b in zip(Ns, Ns[1:])):
            raise ValueError("rows must have strictly increasing N")


def smooth_control(m: int, n: int, M: int, T: float = 1.0, seed: int = 0,
                   alpha_level: float = 1.0, lambda_level: float = 0.05) -> Control:
    """A Lipschitz-in-time control sampled onto M uniform cells.

    Entries of A(t) blend two fixed Gaussian matrices with sinusoidal weights;
    alpha(t) and lambda(t) oscillate around their levels and stay positive.
    Sampling happens at cell midpoints, so refining M converges to the smooth
    control at first order.
    """
    rng = np.random.default_rng(seed)
    A0 = rng.normal(scale=1.0 / np.sqrt(m), size=(m, n))
    A1 = rng.normal(scale=1.0 / np.sqrt(m), size=(m, n))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=3)
    mid = (np.arange(M) + 0.5) * (T / M)
    w = np.sin(2.0 * np.pi * mid / T + phase[0])
    A = A0[None, :, :] + 0.25 * w[:, None, None] * A1[None, :, :]
    alpha = alpha_level * (1.0 + 0.5 * np.sin(2.0 * np.pi * mid / T + phase[1]))
    lam = lambda_level * (1.0 + 0.5 * np.cos(2.0 * np.pi * mid / T + phase[2]))
    return Control(T, A, alpha, lam)


def gen_dataset(m: int, n: int, J: int, J_val: int, sparsity: float,
                noise_sigma: float, seed: int) -> Dataset:
    """Synthesize a sparse-recovery dataset b_j = A y_j + eps_j.

    A has i.i.d. Gaussian entries scaled by 1/sqrt(m); each label y_j has
    ceil(sparsity*n) Gaussian nonzeros on a uniformly random support; eps_j
    is Gaussian with std noise_sigma.  Initial states are all zero.  Fully
    determined by the seed.
    """
    if m < 1 or n < 1 or J < 1 or J_val < 0:
        raise ValueError("dimensions and sample counts must be positive")
    if not (0.0 < sparsity <= 1.0):
        raise ValueError("sparsity must be in (0, 1]")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    if m > n:
        warnings.warn(f"m={m} > n={n}: outside the usual underdetermined regime",
                      stacklevel=2)
    rng = np.random.default_rng(seed)
    total = J + J_val
    A = rng.normal(scale=1.0 / np.sqrt(m), size=(m, n))
    k = int(np.ceil(sparsity * n))
    Y = np.zeros((total, n))
    for j in range(total):
        support = rng.choice(n, size=k, replace=False)
        Y[j, support] = rng.normal(size=k)
    eps = rng.normal(scale=noise_sigma, size=(total, m)) if noise_sigma > 0 \
        else np.zeros((total, m))
    B = Y @ A.T + eps
    X0 = np.zeros((total, n))
    meta = {"A_true": A, "sparsity": float(sparsity),
            "noise_sigma": float(noise_sigma), "seed": int(seed)}
    return Dataset(m=m, n=n, B=B, Y=Y, X0=X0,
                   train_count=J, val_count=J_val, meta=meta)


def depth_sweep(N_list, data: Dataset, reg: Regularizer, ocfg: ObjectiveConfig,
                tcfg: TrainConfig, T: float = 1.0, threads: int = 1) -> SweepResult:
    """Train one network per depth on a shared dataset and seed.

    Per-depth learning rates follow the group-rate rule in the train config.
    A failed row is marked with NaNs and its error message; remaining rows
    still run.
    """
    N_list = list(N_list)
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValueError("N_list must be strictly increasing")
    rows = []
    for N in N_list:
        t0 = time.perf_counter()
        try:
            p0 = init_params(N, T, data.meta["A_true"], tcfg)
            _, curve = sgd_train(p0, data, reg, ocfg, tcfg, threads=threads)
            if curve:
                _, obj, train_data, val_data = curve[-1]
            else:
                obj = objective_discrete(p0, data.train_batch(), reg, ocfg)
                h = _reg_sums(p0.A, p0.alpha, p0.lam, ocfg.pnorm)
                train_data = obj - ocfg.beta1 * ocfg.psi_value(h[0]) \
                    - ocfg.beta2 * ocfg.psi_value(h[1]) - ocfg.beta3 * ocfg.psi_value(h[2])
                val_data = float("nan")
            rows.append(SweepRow(N, obj, train_data, val_data,
                                 time.perf_counter() - t0))
        except Exception as e:   # noqa: BLE001 - row failure must not kill the sweep
            nan = float("nan")
            rows.append(SweepRow(N, nan, nan, nan,
                                 time.perf_counter() - t0, error=str(e)))
    return SweepResult(rows)


def gamma_check(target: Control, N_list, batch: Batch, reg: Regularizer,
                ocfg: ObjectiveConfig, N_ref: int = 4096):
    """Depth convergence of the discrete objective toward the limit objective.

    Evaluates the discrete objective of the cell-averaged control at each
    depth in N_list and compares with the fine-grid limit value at N_ref.
    Returns rows (N, value, |value - limit_value|).
    """
    N_list = list(N_list)
    if N_ref <= max(N_list):
        raise ValueError("N_ref must exceed every entry of N_list")
    j_limit = objective_continuous(target, batch, reg, ocfg, N_ref=N_ref)
    rows = []
    for N in N_list:
        v = objective_discrete(project_control(target, N), batch, reg, ocfg)
        rows.append((N, v, abs(v - j_limit)))
    return rows


def _perturb_batch(batch: Batch, target: str, magnitude: float, seed: int) -> Batch:
    """Shift the selected arrays by magnitude times a fixed global unit direction."""
    rng = np.random.default_rng(seed)
    dx0 = rng.normal(size=batch.X0.shape)
    db = rng.normal(size=batch.B.shape)
    dy = rng.normal(size=batch.Y.shape)
    pick = {"x0": (dx0,), "b": (db,), "y": (dy,), "all": (dx0, db, dy)}[target]
    scale = magnitude / np.sqrt(sum(float(np.sum(d * d)) for d in pick))
    X0, B, Y = batch.X0, batch.B, batch.Y
    if target in ("x0", "all"):
        X0 = X0 + scale * dx0
    if target in ("b", "all"):
        B = B + scale * db
    if target in ("y", "all"):
        Y = Y + scale * dy
    return Batch(X0, B, Y)


def stability_run(data: Dataset, reg: Regularizer, ocfg: ObjectiveConfig,
                  tcfg: TrainConfig, sched: PerturbationSchedule,
                  N: int = 8, T: float = 1.0, threads: int = 1,
                  distance_pnorm: float = 2.0):
    """Retrain under shrinking data perturbations and track the optimum.

    Every run starts from the identical initialization and seed, so row
    differences isolate the data perturbation.  Rows are
    (r, magnitude, optimal_value_gap, solution_distance_lp); r = 0 is the
    unperturbed control row (gaps exactly zero).  The solution distance is
    taken to the single unperturbed trained model, a conservative surrogate
    for the distance to the full solution set.
    """
    base_train = data.train_batch()
    p0 = init_params(N, T, data.meta["A_true"], tcfg)

    def train_on(batch: Batch):
        d = Dataset(m=data.m, n=data.n,
                    B=np.vstack([batch.B, data.B[data.train_count:]]),
                    Y=np.vstack([batch.Y, data.Y[data.train_count:]]),
                    X0=np.vstack([batch.X0, data.X0[data.train_count:]]),
                    train_count=data.train_count, val_count=data.val_count,
                    meta=data.meta)
        p_fin, curve = sgd_train(p0, d, reg, ocfg, tcfg, threads=threads)
        return p_fin, curve[-1][1] if curve else objective_discrete(p_fin, batch, reg, ocfg)

    p_star, j_star = train_on(base_train)
    rows = [(0, 0.0, 0.0, 0.0)]
    for r, mag in enumerate(sched.magnitudes, start=1):
        pert = _perturb_batch(base_train, sched.target, mag, sched.direction_seed)
        p_r, j_r = train_on(pert)
        diff = control_sub(extend_params(p_r), extend_params(p_star))
        dist = param_norm_lp(diff, distance_pnorm)
        rows.append((r, mag, abs(j_r - j_star), dist))
    return rows


def lista_compare(batch: Batch, lista_params: LISTAParams,
                  fbs_params: NetworkParams, reg: Regularizer,
                  ocfg: ObjectiveConfig):
    """Evaluate the LISTA-form objective next to the layer-parameter objective.

    The LISTA regularization terms are psi of the p-th powers of the
    Frobenius norms of W1 and W2 and of |theta|.  Returns
    (lista_value, fbs_value) for the same batch.
    """
    J = len(batch)
    if J == 0:
        raise ValueError("batch must be nonempty")
    total = 0.0
    for j in range(J):
        traj = lista_forward(lista_params, batch.X0[j], batch.B[j])
        total += loss(traj.terminal, batch.Y[j])
    w1 = float(np.sqrt(np.sum(lista_params.W1 ** 2)))
    w2 = float(np.sqrt(np.sum(lista_params.W2 ** 2)))
    pw = ocfg.pnorm
    lista_value = total / J \
        + ocfg.beta1 * ocfg.psi_value(w1 ** pw) \
        + ocfg.beta2 * ocfg.psi_value(w2 ** pw) \
        + ocfg.beta3 * ocfg.psi_value(abs(lista_params.theta) ** pw)
    fbs_value = objective_discrete(fbs_params, batch, reg, ocfg)
    return lista_value, fbs_value
