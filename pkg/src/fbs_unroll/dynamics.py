"""Forward dynamics of the unrolled network and its continuous-time limit.

Holds the per-layer parameter container, piecewise-constant time controls on
a uniform grid, the layer recursion (gradient step + prox), the LISTA-form
recursion, the cell-average / piecewise-constant-extension pair that bridges
layer parameters and time controls, parameter norms, and a fine-grid solver
for the limit system with a Richardson-style error estimate.

Grid conventions: the horizon [0, T] splits into uniform cells, all half-open
except the last (closed at T).  Cell averaging of a piecewise-constant
control is computed with integer overlap weights, so it is exact; averaging
onto the control's own grid reproduces the cell values bitwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import NumericsError
from .regularizers import Regularizer, prox


def _as_float_array(x, name, shape=None):
    a = np.asarray(x, dtype=float)
    if shape is not None and a.shape != shape:
        raise ValueError(f"{name} has shape {a.shape}, expected {shape}")
    if not np.all(np.isfinite(a)):
        raise NumericsError(f"non-finite values in {name}")
    return a


def _check_nonneg(a, name):
    if np.any(a < 0):
        raise ValueError(f"{name} must be nonnegative")


@dataclass
class NetworkParams:
    """Per-layer learnables (A_k, alpha_k, lambda_k) for a depth-N network.

    A has shape (N, m, n); alpha and lam have shape (N,).  The layer width
    in time is h = T / N.
    """

    T: float
    A: np.ndarray
    alpha: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        if not (self.T > 0):
            raise ValueError("T must be positive")
        self.A = _as_float_array(self.A, "A")
        if self.A.ndim != 3:
            raise ValueError("A must have shape (N, m, n)")
        N = self.A.shape[0]
        if N == 0:
            raise ValueError("depth N must be >= 1")
        self.alpha = _as_float_array(self.alpha, "alpha", (N,))
        self.lam = _as_float_array(self.lam, "lam", (N,))
        _check_nonneg(self.alpha, "alpha")
        _check_nonneg(self.lam, "lam")

    @property
    def N(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[1]

    @property
    def n(self) -> int:
        return self.A.shape[2]

    @property
    def h(self) -> float:
        return self.T / self.N

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.T, self.A.copy(), self.alpha.copy(), self.lam.copy())


@dataclass
class Control:
    """A time-dependent parameter triple, piecewise constant on M uniform cells."""

    T: float
    A: np.ndarray       # (M, m, n)
    alpha: np.ndarray   # (M,)
    lam: np.ndarray     # (M,)

    def __post_init__(self):
        if not (self.T > 0):
            raise ValueError("T must be positive")
        self.A = _as_float_array(self.A, "A")
        if self.A.ndim != 3:
            raise ValueError("A must have shape (M, m, n)")
        M = self.A.shape[0]
        if M == 0:
            raise ValueError("grid M must be >= 1")
        self.alpha = _as_float_array(self.alpha, "alpha", (M,))
        self.lam = _as_float_array(self.lam, "lam", (M,))
        _check_nonneg(self.alpha, "alpha")
        _check_nonneg(self.lam, "lam")

    @property
    def M(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[1]

    @property
    def n(self) -> int:
        return self.A.shape[2]


@dataclass
class Trajectory:
    """Layer states x^0 .. x^N of one forward pass; states has shape (N+1, n)."""

    T: float
    states: np.ndarray

    def __post_init__(self):
        self.states = _as_float_array(self.states, "states")
        if self.states.ndim != 2 or self.states.shape[0] < 2:
            raise ValueError("states must have shape (N+1, n) with N >= 1")

    @property
    def N(self) -> int:
        return self.states.shape[0] - 1

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]


@dataclass
class LISTAParams:
    """LISTA-form layer weights: shared (W1, W2, theta) across N layers."""

    T: float
    N: int
    W1: np.ndarray   # (n, n)
    W2: np.ndarray   # (n, m)
    theta: float

    def __post_init__(self):
        if not (self.T > 0):
            raise ValueError("T must be positive")
        if self.N < 1:
            raise ValueError("depth N must be >= 1")
        self.W1 = _as_float_array(self.W1, "W1")
        self.W2 = _as_float_array(self.W2, "W2")
        if self.W1.ndim != 2 or self.W1.shape[0] != self.W1.shape[1]:
            raise ValueError("W1 must be square (n, n)")
        if self.W2.ndim != 2 or self.W2.shape[0] != self.W1.shape[0]:
            raise ValueError("W2 must have shape (n, m)")
        if self.theta < 0:
            raise ValueError("theta must be >= 0")


# ---------------------------------------------------------------------------
# layer recursion


def fbs_step(A, alpha, lam, h, b, x, reg: Regularizer) -> np.ndarray:
    """One layer: prox_{h*alpha*lam*R}( x - h*alpha*A^T(Ax - b) ).

    This is the resolvent form of the implicit inclusion step; alpha = 0
    leaves x unchanged and lam = 0 reduces to the plain gradient step.
    """
    A = _as_float_array(A, "A")
    if A.ndim != 2:
        raise ValueError("A must be a matrix")
    m, n = A.shape
    b = _as_float_array(b, "b", (m,))
    x = _as_float_array(x, "x", (n,))
    if alpha < 0 or lam < 0:
        raise ValueError("alpha and lam must be nonnegative")
    if not (h > 0):
        raise ValueError("h must be positive")
    u = x - h * alpha * (A.T @ (A @ x - b))
    if not np.all(np.isfinite(u)):
        raise NumericsError("non-finite intermediate state")
    return prox(reg, h * alpha * lam, u)


def fbs_forward(params: NetworkParams, x0, b, reg: Regularizer) -> Trajectory:
    """Run the full N-layer recursion from x0; returns all layer states."""
    x0 = _as_float_array(x0, "x0", (params.n,))
    b = _as_float_array(b, "b", (params.m,))
    h = params.h
    states = np.empty((params.N + 1, params.n))
    states[0] = x0
    x = x0
    for k in range(params.N):
        try:
            x = fbs_step(params.A[k], params.alpha[k], params.lam[k], h, b, x, reg)
        except (ValueError, NumericsError) as e:
            raise type(e)(f"layer {k}: {e}") from e
        states[k + 1] = x
    return Trajectory(params.T, states)


def fbs_forward_batch(params: NetworkParams, X0, B, reg: Regularizer,
                      keep_states: bool = False):
    """Vectorized forward pass over a batch of samples.

    X0 has shape (J, n), B has shape (J, m).  Returns the terminal states
    (J, n), or the whole state stack (N+1, J, n) when keep_states is set.
    Used by the learning module; the single-sample ``fbs_forward`` keeps the
    plain matrix-vector path.
    """
    X0 = np.asarray(X0, dtype=float)
    B = np.asarray(B, dtype=float)
    if X0.ndim != 2 or B.ndim != 2 or X0.shape[0] != B.shape[0]:
        raise ValueError("X0 and B must be (J, n) and (J, m)")
    h = params.h
    X = X0
    stack = None
    if keep_states:
        stack = np.empty((params.N + 1,) + X0.shape)
        stack[0] = X0
    for k in range(params.N):
        Ak = params.A[k]
        ha = h * params.alpha[k]
        U = X - ha * ((X @ Ak.T - B) @ Ak)
        X = prox(reg, ha * params.lam[k], U)
        if keep_states:
            stack[k + 1] = X
    if not np.all(np.isfinite(X)):
        raise NumericsError("non-finite state in batched forward pass")
    return stack if keep_states else X


def lista_forward(params: LISTAParams, x0, b) -> Trajectory:
    """LISTA-form recursion: soft-threshold(x - h*(W1 x - W2 b)) per layer."""
    n = params.W1.shape[0]
    m = params.W2.shape[1]
    x0 = _as_float_array(x0, "x0", (n,))
    b = _as_float_array(b, "b", (m,))
    h = params.T / params.N
    t = h * params.theta
    states = np.empty((params.N + 1, n))
    states[0] = x0
    x = x0
    for k in range(params.N):
        u = x - h * (params.W1 @ x - params.W2 @ b)
        x = np.sign(u) * np.maximum(np.abs(u) - t, 0.0)
        states[k + 1] = x
    if not np.all(np.isfinite(states)):
        raise NumericsError("non-finite state in LISTA forward pass")
    return Trajectory(params.T, states)


# ---------------------------------------------------------------------------
# cell-average / extension operators


def _overlap_weights(N: int, M: int):
    """Integer overlap lengths between target cell k (of N) and source cells
    (of M), in units of T/(N*M).  Each target cell has total weight M."""
    weights = []
    for k in range(N):
        lo, hi = k * M, (k + 1) * M   # target cell k in integer units
        i0, i1 = lo // N, (hi - 1) // N
        cells = []
        for i in range(i0, i1 + 1):
            w = min(hi, (i + 1) * N) - max(lo, i * N)
            cells.append((i, w))
        weights.append(cells)
    return weights


def project_control(u: Control, N: int) -> NetworkParams:
    """Average the control over N uniform cells (exact for piecewise-constant u).

    When a target cell lies inside a single source cell the value is copied
    bitwise, so averaging a control onto its own grid is the identity.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    M = u.M
    A = np.empty((N, u.m, u.n))
    alpha = np.empty(N)
    lam = np.empty(N)
    for k, cells in enumerate(_overlap_weights(N, M)):
        if len(cells) == 1:
            i = cells[0][0]
            A[k] = u.A[i]
            alpha[k] = u.alpha[i]
            lam[k] = u.lam[i]
        else:
            idx = np.array([i for i, _ in cells])
            w = np.array([wi for _, wi in cells], dtype=float) / M
            A[k] = np.tensordot(w, u.A[idx], axes=(0, 0))
            alpha[k] = float(w @ u.alpha[idx])
            lam[k] = float(w @ u.lam[idx])
    return NetworkParams(u.T, A, alpha, lam)


def extend_params(p: NetworkParams) -> Control:
    """Piecewise-constant extension of layer values onto [0, T]."""
    return Control(p.T, p.A.copy(), p.alpha.copy(), p.lam.copy())


def refine_control(u: Control, r: int) -> Control:
    """Exact refinement: each cell split into r equal cells with the same value."""
    if r < 1:
        raise ValueError("refinement factor must be >= 1")
    if r == 1:
        return Control(u.T, u.A.copy(), u.alpha.copy(), u.lam.copy())
    return Control(u.T,
                   np.repeat(u.A, r, axis=0),
                   np.repeat(u.alpha, r),
                   np.repeat(u.lam, r))


def align_controls(u: Control, v: Control):
    """Refine both controls onto their common (lcm) grid."""
    if abs(u.T - v.T) > 1e-12 * max(u.T, v.T):
        raise ValueError("controls must share the horizon T")
    g = math.lcm(u.M, v.M)
    return refine_control(u, g // u.M), refine_control(v, g // v.M)


def control_sub(u: Control, v: Control) -> Control:
    """Cell-wise difference of two controls (aligned to the common grid).

    The result is a raw triple of differences; nonnegativity of the alpha
    and lambda components is deliberately not enforced here.
    """
    a, b = align_controls(u, v)
    out = Control.__new__(Control)
    out.T = a.T
    out.A = a.A - b.A
    out.alpha = a.alpha - b.alpha
    out.lam = a.lam - b.lam
    return out


_SHIFT_MAX_REFINE = 4096


def shift_control(u: Control, h: float) -> Control:
    """Time shift t -> t + h with zero extension outside [0, T].

    The shifted function is represented exactly whenever h is a rational
    multiple of the cell width with a moderate denominator: the grid is
    refined (up to a factor of 4096) until the shift is an integer number of
    cells, then the cell array is rolled with zero fill.  Otherwise the shift
    snaps to the nearest cell of the maximally refined grid.
    """
    if not math.isfinite(h):
        raise ValueError("shift h must be finite")
    if h == 0.0:
        return Control(u.T, u.A.copy(), u.alpha.copy(), u.lam.copy())
    if abs(h) >= u.T:
        return Control(u.T, np.zeros_like(u.A), np.zeros_like(u.alpha), np.zeros_like(u.lam))
    cells = h * u.M / u.T
    r = 1
    while r < _SHIFT_MAX_REFINE:
        if abs(cells * r - round(cells * r)) < 1e-9:
            break
        r *= 2
    v = refine_control(u, r)
    s = int(round(cells * r))
    A = np.zeros_like(v.A)
    alpha = np.zeros_like(v.alpha)
    lam = np.zeros_like(v.lam)
    M = v.M
    if s >= 0:
        if s < M:
            A[:M - s] = v.A[s:]
            alpha[:M - s] = v.alpha[s:]
            lam[:M - s] = v.lam[s:]
    else:
        s = -s
        if s < M:
            A[s:] = v.A[:M - s]
            alpha[s:] = v.alpha[:M - s]
            lam[s:] = v.lam[:M - s]
    return Control(v.T, A, alpha, lam)


# ---------------------------------------------------------------------------
# parameter norms


def spectral_norm(A, tol: float = 1e-10, max_iter: int = 500) -> float:
    """Largest singular value by power iteration on the Gram matrix.

    Deterministic all-ones start vector; tolerance on the change of the
    Rayleigh estimate between sweeps.
    """
    A = np.asarray(A, dtype=float)
    m, n = A.shape
    if n <= m:
        v = np.ones(n) / math.sqrt(n)
        gram = lambda w: A.T @ (A @ w)
    else:
        v = np.ones(m) / math.sqrt(m)
        gram = lambda w: A @ (A.T @ w)
    sigma2 = 0.0
    for _ in range(max_iter):
        w = gram(v)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        new = float(v @ gram(v))
        if abs(new - sigma2) <= tol * max(1.0, abs(sigma2)):
            sigma2 = new
            break
        sigma2 = new
    return math.sqrt(max(sigma2, 0.0))


def _tuple_norms(A_stack, alpha, lam):
    """Per-cell norm ||A_k||_2 + |alpha_k| + |lam_k| (spectral matrix norm)."""
    mats = np.array([spectral_norm(Ak) for Ak in A_stack])
    return mats + np.abs(alpha) + np.abs(lam)


def param_norm_lp(p, pnorm: float) -> float:
    """The weighted l^p norm of a parameter tuple or control.

    For finite pnorm this is (T/K * sum_k ||(A_k, alpha_k, lam_k)||^p)^(1/p)
    over K layers or cells, with ||(U, eta, zeta)|| = ||U||_2 + |eta| + |zeta|;
    pnorm = inf takes the max over cells.  The T/K factor makes the discrete
    norm agree with the L^p norm of the piecewise-constant extension.
    """
    if not (pnorm >= 1):
        raise ValueError("pnorm must be >= 1 (or inf)")
    if isinstance(p, NetworkParams):
        K = p.N
    elif isinstance(p, Control):
        K = p.M
    else:
        raise TypeError("expected NetworkParams or Control")
    norms = _tuple_norms(p.A, p.alpha, p.lam)
    if math.isinf(pnorm):
        return float(np.max(norms))
    return float((p.T / K * np.sum(norms ** pnorm)) ** (1.0 / pnorm))


# ---------------------------------------------------------------------------
# limit system


def _pad_depth(N_ref: int, M: int) -> int:
    """Smallest multiple of the control grid that is >= N_ref."""
    if N_ref % M == 0:
        return N_ref
    return ((N_ref // M) + 1) * M


def limit_solve(u: Control, x0, b, reg: Regularizer, N_ref: int = 2048):
    """Approximate the limit-system solution by unrolling at a fine depth.

    The control is cell-averaged onto N_ref layers (exact) and the layer
    recursion is run; the returned error estimate is the terminal-state gap
    to the half-depth run (first-order Richardson gap).  N_ref is rounded up
    to a multiple of the control grid so each fine cell sees a single control
    value.  Returns (terminal, trajectory, err_est).
    """
    if N_ref < 1:
        raise ValueError("N_ref must be >= 1")
    N_eff = _pad_depth(N_ref, u.M)
    traj = fbs_forward(project_control(u, N_eff), x0, b, reg)
    N_half = N_eff // 2
    if N_half >= 1:
        traj_half = fbs_forward(project_control(u, N_half), x0, b, reg)
        err_est = float(np.linalg.norm(traj.terminal - traj_half.terminal))
    else:
        err_est = 0.0   # depth 1: no coarser run to compare against
    return traj.terminal, traj, err_est


def interpolate_pl(traj: Trajectory, t: float) -> np.ndarray:
    """Piecewise-linear interpolation of the layer states at time t in [0, T]."""
    if not (0.0 <= t <= traj.T):
        raise ValueError(f"t={t} outside [0, {traj.T}]")
    N = traj.N
    k = min(int(t * N / traj.T), N - 1)
    tk = k * traj.T / N
    s = (t - tk) * N / traj.T
    return (1.0 - s) * traj.states[k] + s * traj.states[k + 1]
