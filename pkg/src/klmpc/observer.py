"""Online least-squares estimation of the unknown load from windowed
input/output history, with the periodic averaging schedule used by the
closed-loop controller.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import lifting, numkit
from .edmd import KoopmanModel
from .lifting import delay_embed

STATIONARY_MOTION_TOL = 1e-4


@dataclass(frozen=True)
class EstimatorConfig:
    """Schedule and bounds for the load estimator.

    Nw: measurement window length, Ne: steps between estimates, Nr: how many
    past window estimates enter the running average.  ``reduced`` switches the
    window solve from the full (1, w) stack to the reduced form that fixes the
    constant coefficient at 1 (see ``estimate_window``).
    """

    Nw: int = 30
    Ne: int = 12
    Nr: int = 24
    w_min: float = 0.0
    w_max: float = 0.3
    reduced: bool = False

    def __post_init__(self):
        if self.Nw < 1 or self.Ne < 1 or self.Nr < 0:
            raise ValueError("EstimatorConfig: need Nw >= 1, Ne >= 1, Nr >= 0")
        if self.w_min > self.w_max:
            raise ValueError("EstimatorConfig: w_min must not exceed w_max")

    def clamp(self, w: np.ndarray) -> np.ndarray:
        return np.clip(w, self.w_min, self.w_max)

    @property
    def w_init(self) -> np.ndarray:
        return np.atleast_1d(0.5 * (self.w_min + self.w_max))


def _load_rows(model: KoopmanModel, yd) -> np.ndarray:
    """C A Gamma(yd): n x (p+1) sensitivity of the next output to (1, w)."""
    G = lifting.gamma_matrix(model.basis, yd, model.p)
    return model.C @ model.A @ G


def _solve_load(M: np.ndarray, rhs: np.ndarray, cfg: EstimatorConfig,
                fallback: np.ndarray, reduced=None):
    """Solve the stacked load equations M (1, w) = rhs for w.

    The default (full) form solves for the whole (1, w) stack by
    pseudoinverse, letting the constant coefficient soak up any systematic
    one-step model offset; the reduced form pins the constant coefficient at
    exactly 1 and solves for w alone.
    """
    if reduced is None:
        reduced = cfg.reduced
    w_cols = M[:, 1:]
    scale = max(np.linalg.norm(M), 1.0)
    if np.linalg.norm(w_cols) < 1e-9 * scale:
        return np.asarray(fallback, dtype=float).copy(), True
    if reduced:
        w = numkit.lstsq(w_cols, rhs - M[:, 0])
    else:
        v = numkit.lstsq(M, rhs)
        w = v[1:]
    if not np.all(np.isfinite(w)):
        return np.asarray(fallback, dtype=float).copy(), True
    return cfg.clamp(w), False


def estimate_instant(model: KoopmanModel, y_next, yd_prev, u_prev,
                     cfg: EstimatorConfig, fallback=None, reduced=None):
    """Single-step load estimate from one (output, input, next-output) triple.

    Returns (w_hat, degenerate): when the output is insensitive to the load at
    this configuration the fallback estimate is returned with the flag set.
    """
    if model.p < 1:
        raise ValueError("estimate_instant: model is not load-augmented")
    if fallback is None:
        fallback = cfg.w_init
    M = _load_rows(model, yd_prev)
    rhs = (np.asarray(y_next, dtype=float)
           - model.C @ model.B @ np.atleast_1d(np.asarray(u_prev, dtype=float)))
    return _solve_load(M, rhs, cfg, fallback, reduced)


def estimate_window(model: KoopmanModel, history, cfg: EstimatorConfig,
                    fallback=None, reduced=None):
    """Windowed load estimate over the last Nw transitions in ``history``.

    ``history`` is a time-ordered sequence of (y, u) pairs, long enough for
    Nw rows plus the delay embedding: len >= Nw + d + 1.
    """
    if model.p < 1:
        raise ValueError("estimate_window: model is not load-augmented")
    if fallback is None:
        fallback = cfg.w_init
    d = model.d
    history = list(history)
    j = len(history) - 1
    if j < cfg.Nw + d:
        raise ValueError(
            f"estimate_window: need {cfg.Nw + d + 1} records, got {len(history)}"
        )
    ys = [np.atleast_1d(np.asarray(y, dtype=float)) for y, _ in history]
    us = [np.atleast_1d(np.asarray(u, dtype=float)) for _, u in history]
    rows = []
    rhs = []
    for i in range(1, cfg.Nw + 1):
        yd = delay_embed(ys, us, j - i, d)
        rows.append(_load_rows(model, yd))
        rhs.append(ys[j - i + 1] - model.C @ model.B @ us[j - i])
    Lambda_A = np.vstack(rows)
    Lambda_B = np.concatenate(rhs)
    return _solve_load(Lambda_A, Lambda_B, cfg, fallback, reduced)


@dataclass
class EstimatorState:
    """Ring buffers and the smoothed estimate driven by the update schedule."""

    cfg: EstimatorConfig
    d: int
    w_hat: np.ndarray = None
    history: deque = None
    estimates: deque = None
    step: int = 0
    updates: int = 0
    degenerate: bool = False

    def __post_init__(self):
        if self.w_hat is None:
            self.w_hat = self.cfg.w_init.copy()
        if self.history is None:
            self.history = deque(maxlen=self.cfg.Nw + self.d + 1)
        if self.estimates is None:
            self.estimates = deque(maxlen=max(self.cfg.Nr, 1))


def _window_is_stationary(history) -> bool:
    ys = np.stack([np.atleast_1d(np.asarray(y, dtype=float)) for y, _ in history])
    if ys.shape[0] < 2:
        return True
    return float(np.max(np.linalg.norm(np.diff(ys, axis=0), axis=1))) < STATIONARY_MOTION_TOL


def update(state: EstimatorState, model: KoopmanModel, y, u) -> EstimatorState:
    """Push one (y, u) record; every Ne steps compute a window estimate and
    refresh the smoothed w_hat as the mean of the buffered estimates.

    Near-stationary windows carry no load information and are skipped
    (estimate carries over).
    """
    cfg = state.cfg
    state.history.append((np.atleast_1d(np.asarray(y, dtype=float)),
                          np.atleast_1d(np.asarray(u, dtype=float))))
    if state.step % cfg.Ne == 0 and len(state.history) >= cfg.Nw + state.d + 1:
        if _window_is_stationary(state.history):
            state.degenerate = True
        else:
            w_new, degenerate = estimate_window(model, state.history, cfg,
                                                fallback=state.w_hat)
            state.degenerate = degenerate
            if not degenerate:
                pool = [w_new] + list(state.estimates)[-cfg.Nr:] if cfg.Nr > 0 else [w_new]
                state.w_hat = cfg.clamp(np.mean(pool, axis=0))
                state.estimates.append(w_new)
                state.updates += 1
    state.step += 1
    return state


def save_estimate_trace(path, steps, times, w_instant, w_hat, w_true=None) -> None:
    """Estimate trace CSV: step, t, w_true (if known), w_instant, w_hat."""
    cols = [np.asarray(steps, dtype=float), np.asarray(times, dtype=float)]
    header = ["step", "t"]
    wi = np.atleast_2d(np.asarray(w_instant, dtype=float).T).T
    wh = np.atleast_2d(np.asarray(w_hat, dtype=float).T).T
    p = wh.shape[1]
    if w_true is not None:
        wt = np.atleast_2d(np.asarray(w_true, dtype=float).T).T
        cols.extend(wt[:, i] for i in range(p))
        header.extend(f"w_true{i+1}" for i in range(p))
    cols.extend(wi[:, i] for i in range(p))
    header.extend(f"w_instant{i+1}" for i in range(p))
    cols.extend(wh[:, i] for i in range(p))
    header.extend(f"w_hat{i+1}" for i in range(p))
    np.savetxt(path, np.column_stack(cols), fmt="%.17g", delimiter=",",
               header=",".join(header), comments="")
