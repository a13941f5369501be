"""Receding-horizon tracking: condensation of the lifted linear model into a
dense box-constrained QP, a deterministic projected-Newton solver, and the
closed control loop with periodic load estimation.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import observer as obs
from .edmd import KoopmanModel
from .lifting import DelayEmbedded
from .observer import EstimatorConfig, EstimatorState


@dataclass(frozen=True)
class MpcConfig:
    Nh: int                      # horizon (steps)
    Q: np.ndarray                # output-error weight (n x n, PSD)
    R: np.ndarray                # input weight (m x m, PD)
    u_min: np.ndarray
    u_max: np.ndarray
    qp_tol: float = 1e-8
    qp_max_iter: int = 100

    def __post_init__(self):
        if self.Nh < 1:
            raise ValueError("MpcConfig: Nh must be >= 1")
        if np.any(np.asarray(self.u_min) >= np.asarray(self.u_max)):
            raise ValueError("MpcConfig: need u_min < u_max componentwise")


def end_effector_weight(n: int, weight: float = 1.0) -> np.ndarray:
    """Output weight penalizing only the last two coordinates (the end
    effector position); intermediate outputs are unweighted."""
    Q = np.zeros((n, n))
    Q[-2, -2] = weight
    Q[-1, -1] = weight
    return Q


@dataclass(frozen=True)
class QpProblem:
    """min 1/2 U'HU + f'U subject to lower <= U <= upper."""

    H: np.ndarray
    f: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


class Condenser:
    """Precomputed condensation of a time-invariant lifted model under a
    fixed horizon: only the linear term depends on (z0, reference)."""

    def __init__(self, model: KoopmanModel, cfg: MpcConfig):
        A, B, C = model.A, model.B, model.C
        n, m, Nh = C.shape[0], B.shape[1], cfg.Nh
        # S: stacked C A^i (i = 1..Nh); M: block lower triangular C A^(i-1-j) B
        powers = [np.eye(A.shape[0])]
        for _ in range(Nh):
            powers.append(A @ powers[-1])
        S = np.vstack([C @ powers[i] for i in range(1, Nh + 1)])
        M = np.zeros((n * Nh, m * Nh))
        for i in range(1, Nh + 1):
            for j in range(i):
                M[(i - 1) * n:i * n, j * m:(j + 1) * m] = C @ powers[i - 1 - j] @ B
        Qbar = np.kron(np.eye(Nh), np.asarray(cfg.Q, dtype=float))
        Rbar = np.kron(np.eye(Nh), np.asarray(cfg.R, dtype=float))
        H = 2.0 * (M.T @ Qbar @ M + Rbar)
        self.model = model
        self.cfg = cfg
        self.S = S
        self.M = M
        self.Qbar = Qbar
        self.H = 0.5 * (H + H.T)
        self.lower = np.tile(np.asarray(cfg.u_min, dtype=float), Nh)
        self.upper = np.tile(np.asarray(cfg.u_max, dtype=float), Nh)

    def qp(self, z0: np.ndarray, ref: np.ndarray) -> QpProblem:
        ref = np.asarray(ref, dtype=float).reshape(-1)
        if ref.shape[0] != self.S.shape[0]:
            raise ValueError(
                f"reference has {ref.shape[0]} entries, expected {self.S.shape[0]}"
            )
        err0 = self.S @ np.asarray(z0, dtype=float) - ref
        f = 2.0 * self.M.T @ self.Qbar @ err0
        return QpProblem(H=self.H, f=f, lower=self.lower, upper=self.upper)


def condense(model: KoopmanModel, z0: np.ndarray, ref: np.ndarray,
             cfg: MpcConfig) -> QpProblem:
    """One-shot condensation of the Nh-step tracking cost into a dense QP
    over the stacked input sequence."""
    return Condenser(model, cfg).qp(z0, ref)


@dataclass
class QpResult:
    x: np.ndarray
    converged: bool
    iterations: int
    kkt_residual: float


def kkt_residual(qp: QpProblem, x: np.ndarray) -> float:
    """Largest componentwise violation of box-constrained first-order
    optimality at x."""
    g = qp.H @ x + qp.f
    at_lower = x <= qp.lower + 1e-12
    at_upper = x >= qp.upper - 1e-12
    r = np.abs(g)
    r[at_lower] = np.maximum(-g[at_lower], 0.0)
    r[at_upper] = np.maximum(g[at_upper], 0.0)
    # a coordinate pinned at both bounds is trivially optimal
    r[at_lower & at_upper] = 0.0
    return float(np.max(r)) if r.size else 0.0


def solve_box_qp(qp: QpProblem, tol: float = 1e-8, max_iter: int = 100,
                 x0: Optional[np.ndarray] = None) -> QpResult:
    """Deterministic projected-Newton solver for strictly convex box QPs.

    Each iteration pins the coordinates whose gradient pushes them outward at
    an active bound, takes a Newton step on the free block with a backtracking
    projected line search, and stops once the KKT residual is within tol.
    """
    H, f, lo, hi = qp.H, qp.f, qp.lower, qp.upper
    n = f.shape[0]
    x = np.clip(x0 if x0 is not None else np.zeros(n), lo, hi).astype(float)
    eps = 1e-10
    it = 0
    for it in range(1, max_iter + 1):
        g = H @ x + f
        if kkt_residual(qp, x) <= tol:
            return QpResult(x=x, converged=True, iterations=it - 1,
                            kkt_residual=kkt_residual(qp, x))
        binding = ((x <= lo + eps) & (g > 0)) | ((x >= hi - eps) & (g < 0))
        free = ~binding
        d = -g.copy()
        if np.any(free):
            Hff = H[np.ix_(free, free)]
            try:
                d[free] = np.linalg.solve(Hff, -g[free])
            except np.linalg.LinAlgError:
                d[free] = -g[free]
        # projected backtracking line search on the objective
        obj = 0.5 * x @ H @ x + f @ x
        alpha = 1.0
        accepted = False
        for _ in range(60):
            x_new = np.clip(x + alpha * d, lo, hi)
            obj_new = 0.5 * x_new @ H @ x_new + f @ x_new
            if obj_new <= obj or np.array_equal(x_new, x):
                accepted = True
                break
            alpha *= 0.5
        x = x_new
        if not accepted:
            break
    res = kkt_residual(qp, x)
    return QpResult(x=x, converged=res <= tol, iterations=it, kkt_residual=res)


@dataclass
class StepLog:
    step: int
    t: float
    y: np.ndarray
    r: np.ndarray
    u: np.ndarray
    w_hat: np.ndarray
    qp_iters: int
    kkt_residual: float
    solve_ms: float


class Controller:
    """Closed-loop tracking controller: delay-embeds the measurements, runs
    the load-estimation schedule (when the model is load-augmented and no
    fixed load is supplied), condenses, solves the box QP, and applies the
    first input block.
    """

    def __init__(self, model: KoopmanModel, mpc_cfg: MpcConfig,
                 reference: Callable[[int], np.ndarray],
                 est_cfg: Optional[EstimatorConfig] = None,
                 known_load=None, u_neutral=None):
        self.model = model
        self.cfg = mpc_cfg
        self.reference = reference
        self.condenser = Condenser(model, mpc_cfg)
        self.known_load = None if known_load is None else np.atleast_1d(np.asarray(known_load, dtype=float))
        if model.p > 0 and self.known_load is None:
            cfg = est_cfg if est_cfg is not None else EstimatorConfig()
            self.estimator = EstimatorState(cfg=cfg, d=model.d)
        else:
            self.estimator = None
        if u_neutral is None:
            u_neutral = 0.5 * (np.asarray(mpc_cfg.u_min, dtype=float)
                               + np.asarray(mpc_cfg.u_max, dtype=float))
        self.u_neutral = np.asarray(u_neutral, dtype=float)
        self.history_y = deque(maxlen=model.d + 1)
        self.history_u = deque(maxlen=model.d + 1)
        self.prev_record = None   # completed (y, u) pair awaiting the estimator
        self.prev_U: Optional[np.ndarray] = None
        self.step_count = 0
        self.logs: list = []

    @property
    def w_hat(self) -> Optional[np.ndarray]:
        if self.known_load is not None:
            return self.known_load
        if self.estimator is not None:
            return self.estimator.w_hat
        return None

    def _warm_start(self) -> Optional[np.ndarray]:
        if self.prev_U is None:
            return None
        m = self.model.m
        return np.concatenate([self.prev_U[m:], self.prev_U[-m:]])

    def step(self, y_measured) -> np.ndarray:
        """Algorithm step: update estimate if due, solve the QP, return the
        first input block (always within bounds)."""
        y = np.atleast_1d(np.asarray(y_measured, dtype=float))
        k = self.step_count
        if not self.history_y:
            # prefill so delay embedding is defined from the first step
            for _ in range(self.model.d + 1):
                self.history_y.append(y.copy())
                self.history_u.append(self.u_neutral.copy())
        else:
            self.history_y.append(y.copy())
        # the estimator consumes completed (y, u) records, one step behind
        if self.estimator is not None and self.prev_record is not None:
            obs.update(self.estimator, self.model, *self.prev_record)
        d = self.model.d
        ys = list(self.history_y)
        us = list(self.history_u)
        yd = DelayEmbedded(
            y_current=ys[-1],
            y_past=tuple(ys[-1 - i] for i in range(1, d + 1)),
            u_past=tuple(us[-i] for i in range(1, d + 1)),
        )
        z0 = self.model.lift(yd, self.w_hat)
        Nh, n = self.cfg.Nh, self.model.n
        ref = np.vstack([self.reference(k + 1 + i) for i in range(Nh)])
        t0 = time.perf_counter()
        qp = self.condenser.qp(z0, ref)
        result = solve_box_qp(qp, tol=self.cfg.qp_tol,
                              max_iter=self.cfg.qp_max_iter, x0=self._warm_start())
        solve_ms = (time.perf_counter() - t0) * 1e3
        self.prev_U = result.x
        m = self.model.m
        u = np.clip(result.x[:m], self.cfg.u_min, self.cfg.u_max)
        self.history_u.append(u.copy())
        self.prev_record = (y.copy(), u.copy())
        self.logs.append(StepLog(
            step=k, t=k * self.model.Ts, y=y, r=np.atleast_1d(self.reference(k)),
            u=u, w_hat=(self.w_hat.copy() if self.w_hat is not None else np.zeros(0)),
            qp_iters=result.iterations, kkt_residual=result.kkt_residual,
            solve_ms=solve_ms,
        ))
        self.step_count += 1
        return u


def save_step_log(path, logs) -> None:
    """Per-step log CSV: step, t, y*, r*, u*, w_hat*, qp_iters,
    kkt_residual, solve_ms."""
    if not logs:
        raise ValueError("no log rows to save")
    n = logs[0].y.shape[0]
    m = logs[0].u.shape[0]
    p = logs[0].w_hat.shape[0]
    header = (["step", "t"] + [f"y{i+1}" for i in range(n)]
              + [f"r{i+1}" for i in range(n)] + [f"u{i+1}" for i in range(m)]
              + [f"w_hat{i+1}" for i in range(p)]
              + ["qp_iters", "kkt_residual", "solve_ms"])
    rows = [np.concatenate([[lg.step, lg.t], lg.y, lg.r, lg.u, lg.w_hat,
                            [lg.qp_iters, lg.kkt_residual, lg.solve_ms]])
            for lg in logs]
    np.savetxt(path, np.vstack(rows), fmt="%.17g", delimiter=",",
               header=",".join(header), comments="")
