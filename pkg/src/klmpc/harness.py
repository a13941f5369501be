"""Experiment runners: model fitting campaigns, reference trajectories, the
three tracking controllers, and desk-scale analogs of the four validation
experiments, with CSV/markdown reports.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import edmd, lifting, observer as obs
from .edmd import KoopmanModel, Trajectory
from .mpc import Controller, MpcConfig, end_effector_weight, save_step_log
from .observer import EstimatorConfig, EstimatorState
from .plant import Arm, ArmParams, collect_training_data, ramp_and_hold

CONTROLLERS = ("L-MPC", "K-MPC", "KL-MPC")

EXP1_PAYLOADS = (0.025, 0.075, 0.125, 0.175, 0.225, 0.275)
EXP2_PAYLOADS = (0.025, 0.125, 0.225)
BIN_WIDTH = 0.05
BIN_COUNT = 5
CUP_RADIUS = 0.045


@dataclass(frozen=True)
class CampaignConfig:
    """Training-data campaign: desk-scale default of a few ramp-and-hold
    trials per load across the full payload range."""

    loads: tuple = (0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30)
    trials: int = 2
    duration: float = 40.0
    seed: int = 0


@dataclass(frozen=True)
class FitConfig:
    d: int = 1
    energy: float = 0.999
    holdout_trials: int = 1
    holdout_duration: float = 20.0


@dataclass(frozen=True)
class ExperimentConfig:
    plant: ArmParams = field(default_factory=lambda: ArmParams(k=1.0, c=0.3))
    campaign: CampaignConfig = field(default_factory=CampaignConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    Nh: int = 12
    q_weight: float = 1.0
    r_weight: float = 1e-5
    seed: int = 0
    outdir: Optional[str] = None

    def mpc_config(self) -> MpcConfig:
        return MpcConfig(
            Nh=self.Nh,
            Q=end_effector_weight(4, self.q_weight),
            R=self.r_weight * np.eye(2),
            u_min=np.zeros(2),
            u_max=np.ones(2),
        )


def config_from_json(path) -> ExperimentConfig:
    """Load an experiment configuration from a JSON document; missing fields
    take their defaults."""
    with open(path) as fh:
        doc = json.load(fh)
    sub = {
        "plant": ArmParams,
        "campaign": CampaignConfig,
        "fit": FitConfig,
        "estimator": EstimatorConfig,
    }
    kwargs = {}
    for key, value in doc.items():
        if key in sub:
            value = sub[key](**{k: tuple(v) if isinstance(v, list) else v
                                for k, v in value.items()})
        kwargs[key] = value
    return ExperimentConfig(**kwargs)


def config_to_json(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(dataclasses.asdict(cfg), fh, indent=2, default=list)


# ---------------------------------------------------------------------------
# References
# ---------------------------------------------------------------------------

class Reference:
    """Time-indexed output reference, held at its final value past the end.

    Only the end-effector coordinates (last two) are tracked; the link-1
    coordinates carry zero weight and a zero reference.
    """

    def __init__(self, fn, Ts: float, duration: float, n: int = 4):
        self.fn = fn
        self.Ts = Ts
        self.duration = duration
        self.n = n

    def __call__(self, k: int) -> np.ndarray:
        t = min(max(k, 0) * self.Ts, self.duration)
        out = np.zeros(self.n)
        out[-2:] = self.fn(t)
        return out


def figure_eight_reference(params: ArmParams, duration: float = 20.0,
                           extent: float = 0.6, center=None) -> Reference:
    """Planar figure-eight of the given horizontal extent, one cycle over the
    trial, near the hanging end-effector position.

    The torque- and spring-limited workspace is wide but shallow, so the
    eight is mostly horizontal.
    """
    if center is None:
        center = (0.0, -0.975 * (params.L1 + params.L2))
    ax_, ay = extent / 2.0, 0.075 * extent

    def fn(t):
        ph = 2.0 * np.pi * t / duration
        return np.array([center[0] + ax_ * np.sin(ph),
                         center[1] + ay * np.sin(2.0 * ph)])

    return Reference(fn, params.Ts, duration)


def circle_reference(params: ArmParams, duration: float, radius: float = 0.1,
                     period: float = 10.0, center=None) -> Reference:
    """Planar circle (paper-scale 200 mm diameter analog) for the end
    effector, traversed with the given period."""
    if center is None:
        center = (0.0, -0.88 * (params.L1 + params.L2))

    def fn(t):
        ph = 2.0 * np.pi * t / period
        return np.array([center[0] + radius * np.sin(ph),
                         center[1] - radius * np.cos(ph)])

    return Reference(fn, params.Ts, duration)


def point_reference(params: ArmParams, target, duration: float) -> Reference:
    target = np.asarray(target, dtype=float)
    return Reference(lambda t: target, params.Ts, duration)


# ---------------------------------------------------------------------------
# Model fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSet:
    baseline: KoopmanModel        # L-MPC: identity-basis least squares
    koopman: KoopmanModel         # K-MPC: degree-2 dictionary, no load
    koopman_load: KoopmanModel    # KL-MPC: load-augmented dictionary
    holdout: tuple                # held-out trajectories


def fit_models(cfg: ExperimentConfig, training: Optional[list] = None,
               holdout: Optional[list] = None) -> ModelSet:
    """Fit the three controller models from the campaign data (collected on
    demand when not supplied)."""
    params, camp, fit = cfg.plant, cfg.campaign, cfg.fit
    if training is None:
        training = collect_training_data(params, camp.loads, camp.trials,
                                         camp.duration, seed=camp.seed)
    if holdout is None:
        holdout = collect_training_data(params, camp.loads, fit.holdout_trials,
                                        fit.holdout_duration, seed=camp.seed + 1)
    d = fit.d
    snaps = edmd.assemble_snapshots(training, d)
    Ts = training[0].Ts
    samples = np.stack([s.a for s in snaps])
    basis = lifting.fit_basis(samples, fit.energy, n=4, m=2, d=d)
    koop = edmd.fit_koopman(snaps, basis, Ts, with_load=False)
    koop_load = edmd.fit_koopman(snaps, basis, Ts, with_load=True)
    base = edmd.fit_linear_baseline(snaps, n=4, m=2, d=d, Ts=Ts)
    return ModelSet(baseline=base, koopman=koop, koopman_load=koop_load,
                    holdout=tuple(holdout))


# ---------------------------------------------------------------------------
# Tracking trials and reports
# ---------------------------------------------------------------------------

@dataclass
class TrialResult:
    controller: str
    payload: float
    rmse: float
    logs: list
    errors: np.ndarray            # per-step end-effector tracking error
    w_hat_trace: Optional[np.ndarray] = None


def run_tracking_trial(model: KoopmanModel, cfg: ExperimentConfig,
                       payload: float, ref: Reference, duration: float,
                       known_load: Optional[float] = None,
                       est_cfg: Optional[EstimatorConfig] = None,
                       seed: int = 0, label: str = "") -> TrialResult:
    """Closed-loop run of one controller against the simulated arm."""
    params = cfg.plant
    arm = Arm(params, w=payload, seed=seed)
    kl = None if known_load is None else np.atleast_1d(known_load)
    ctrl = Controller(model, cfg.mpc_config(), ref,
                      est_cfg=est_cfg, known_load=kl)
    K = int(round(duration / params.Ts))
    y = arm.measure()
    errors = np.zeros(K)
    w_trace = []
    for k in range(K):
        u = ctrl.step(y)
        y = arm.step(u)
        errors[k] = float(np.linalg.norm(y[-2:] - ref(k + 1)[-2:]))
        if ctrl.w_hat is not None:
            w_trace.append(ctrl.w_hat.copy())
    rmse = float(np.sqrt(np.mean(errors**2)))
    return TrialResult(controller=label, payload=payload, rmse=rmse,
                       logs=ctrl.logs, errors=errors,
                       w_hat_trace=np.asarray(w_trace) if w_trace else None)


@dataclass
class TrackingReport:
    """Per-payload RMSE for each controller, with mean and standard deviation
    across payloads."""

    payloads: tuple
    rmse: dict                    # controller -> list of per-payload RMSE (m)

    def mean(self, controller: str) -> float:
        return float(np.mean(self.rmse[controller]))

    def std(self, controller: str) -> float:
        return float(np.std(self.rmse[controller]))

    def to_markdown(self) -> str:
        header = ("| Controller | "
                  + " | ".join(f"{1000 * p:g} g" for p in self.payloads)
                  + " | Avg. | Std. Dev. |")
        sep = "|" + "---|" * (len(self.payloads) + 3)
        lines = [header, sep]
        for name, vals in self.rmse.items():
            cells = " | ".join(f"{1000 * v:.2f}" for v in vals)
            lines.append(
                f"| {name} | {cells} | {1000 * self.mean(name):.2f} "
                f"| {1000 * self.std(name):.2f} |"
            )
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            cols = ",".join(f"rmse_{1000 * p:g}g" for p in self.payloads)
            fh.write(f"controller,{cols},avg,std\n")
            for name, vals in self.rmse.items():
                cells = ",".join("%.17g" % v for v in vals)
                fh.write(f"{name},{cells},%.17g,%.17g\n"
                         % (self.mean(name), self.std(name)))


def report_from_csv(path) -> TrackingReport:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        payloads = tuple(float(c[len("rmse_"):-1]) / 1000.0
                         for c in header[1:] if c.startswith("rmse_"))
        rmse = {}
        for line in fh:
            parts = line.strip().split(",")
            rmse[parts[0]] = [float(v) for v in parts[1:1 + len(payloads)]]
    return TrackingReport(payloads=payloads, rmse=rmse)


def _maybe_write(cfg: ExperimentConfig, name: str, writer) -> None:
    if cfg.outdir:
        os.makedirs(cfg.outdir, exist_ok=True)
        writer(os.path.join(cfg.outdir, name))


def run_experiment1(cfg: ExperimentConfig, models: Optional[ModelSet] = None,
                    payloads=EXP1_PAYLOADS, duration: float = 20.0) -> TrackingReport:
    """Trajectory following with known payload: all three controllers over
    six payloads; only KL-MPC can use the true load value."""
    if models is None:
        models = fit_models(cfg)
    ref = figure_eight_reference(cfg.plant, duration=duration)
    rmse = {name: [] for name in CONTROLLERS}
    for i, payload in enumerate(payloads):
        trial_seed = cfg.seed * 1000 + i
        for name, model, known in (
            ("L-MPC", models.baseline, None),
            ("K-MPC", models.koopman, None),
            ("KL-MPC", models.koopman_load, payload),
        ):
            res = run_tracking_trial(model, cfg, payload, ref, duration,
                                     known_load=known, seed=trial_seed,
                                     label=name)
            rmse[name].append(res.rmse)
    report = TrackingReport(payloads=tuple(payloads), rmse=rmse)
    _maybe_write(cfg, "experiment1_rmse.csv", report.to_csv)
    if cfg.outdir:
        with open(os.path.join(cfg.outdir, "experiment1_rmse.md"), "w") as fh:
            fh.write(report.to_markdown())
    return report


@dataclass
class EstimateTrace:
    payload: float
    t: np.ndarray
    w_instant: np.ndarray
    w_hat: np.ndarray

    def final_error(self) -> float:
        return float(abs(self.w_hat[-1] - self.payload))


def run_estimation_trial(model: KoopmanModel, cfg: ExperimentConfig,
                         payload: float, duration: float = 20.0,
                         seed: int = 0) -> EstimateTrace:
    """Drive the plant open-loop with ramp-and-hold inputs while the load
    observer runs on its periodic schedule."""
    params = cfg.plant
    est_cfg = cfg.estimator
    rng = np.random.default_rng(seed)
    arm = Arm(params, w=payload, seed=seed + 1)
    policy = ramp_and_hold(rng, m=2, Ts=params.Ts)
    state = EstimatorState(cfg=est_cfg, d=model.d)
    K = int(round(duration / params.Ts))
    y = arm.measure()
    ys, us = [y], []
    t = np.zeros(K)
    w_instant = np.zeros(K)
    w_hat = np.zeros(K)
    for k in range(K):
        u = np.clip(next(policy), 0.0, 1.0)
        obs.update(state, model, y, u)
        us.append(u)
        if k >= model.d + 1:
            yd_prev = lifting.delay_embed(ys, us, k - 1, model.d)
            wi, _ = obs.estimate_instant(model, ys[k], yd_prev, us[k - 1],
                                         est_cfg, fallback=state.w_hat)
            w_instant[k] = wi[0]
        else:
            w_instant[k] = state.w_hat[0]
        w_hat[k] = state.w_hat[0]
        t[k] = k * params.Ts
        y = arm.step(u)
        ys.append(y)
    return EstimateTrace(payload=payload, t=t, w_instant=w_instant,
                         w_hat=w_hat)


def run_experiment2(cfg: ExperimentConfig, models: Optional[ModelSet] = None,
                    payloads=EXP2_PAYLOADS, duration: float = 20.0) -> list:
    """Online estimation of unknown payloads (none in the training set)
    under randomized ramp-and-hold inputs."""
    if models is None:
        models = fit_models(cfg)
    traces = []
    for i, payload in enumerate(payloads):
        trace = run_estimation_trial(models.koopman_load, cfg, payload,
                                     duration=duration, seed=cfg.seed * 100 + i)
        traces.append(trace)
        _maybe_write(cfg, f"experiment2_w{1000 * payload:g}g.csv",
                     lambda path, tr=trace: obs.save_estimate_trace(
                         path, np.arange(tr.t.size), tr.t, tr.w_instant,
                         tr.w_hat, np.full(tr.t.size, tr.payload)))
    return traces


def run_experiment3(cfg: ExperimentConfig, models: Optional[ModelSet] = None,
                    payloads=EXP2_PAYLOADS, duration: float = 30.0) -> list:
    """Trajectory following with unknown payload: KL-MPC with the live
    observer tracking a 0.1 m-radius circle."""
    if models is None:
        models = fit_models(cfg)
    ref = circle_reference(cfg.plant, duration=duration)
    results = []
    for i, payload in enumerate(payloads):
        res = run_tracking_trial(models.koopman_load, cfg, payload, ref,
                                 duration, est_cfg=cfg.estimator,
                                 seed=cfg.seed * 100 + 50 + i, label="KL-MPC")
        results.append(res)
        _maybe_write(cfg, f"experiment3_w{1000 * payload:g}g.csv",
                     lambda path, r=res: save_step_log(path, r.logs))
    return results


def bin_index(w: float) -> int:
    """Mass bin of width 50 g, closed on the left and open on the right.

    The small offset keeps decimal edge values (0.05, 0.15, ...) in the bin
    whose lower edge they are, despite binary rounding of w / BIN_WIDTH.
    """
    return int(min(max(np.floor(w / BIN_WIDTH + 1e-9), 0), BIN_COUNT - 1))


def bin_targets(params: ArmParams) -> np.ndarray:
    """Drop-off end-effector targets, one per mass bin: forward-kinematics
    points of evenly spread joint angles that remain steady-state feasible
    under the torque limits across the payload range."""
    thetas = np.linspace(-0.2, 0.2, BIN_COUNT)
    xs = params.L1 * np.sin(thetas) + params.L2 * np.sin(1.2 * thetas)
    ys = -params.L1 * np.cos(thetas) - params.L2 * np.cos(1.2 * thetas)
    return np.stack([xs, ys], axis=1)


@dataclass
class SortOutcome:
    payload: float
    w_estimate: float
    chosen_bin: int
    true_bin: int
    final_position: np.ndarray
    target: np.ndarray
    placement_error: float
    success: bool


def run_experiment4(cfg: ExperimentConfig, models: Optional[ModelSet] = None,
                    n_objects: int = 5, estimation_duration: float = 15.0,
                    dropoff_duration: float = 10.0) -> list:
    """Automated sorting by mass: excite the arm with ramp-and-hold wiggles
    for 15 s while the observer runs, freeze the estimate, pick the bin,
    then track the drop-off target with the frozen load."""
    if models is None:
        models = fit_models(cfg)
    params = cfg.plant
    rng = np.random.default_rng(cfg.seed)
    payloads = rng.uniform(0.0, 0.25, size=n_objects)
    targets = bin_targets(params)
    model = models.koopman_load
    outcomes = []
    for i, payload in enumerate(float(p) for p in payloads):
        seed = cfg.seed * 10000 + i
        # estimation phase: randomized excitation with the passive observer
        arm = Arm(params, w=payload, seed=seed)
        policy = ramp_and_hold(np.random.default_rng(seed), m=2, Ts=params.Ts)
        state = obs.EstimatorState(cfg=cfg.estimator, d=model.d)
        K_est = int(round(estimation_duration / params.Ts))
        y = arm.measure()
        for _ in range(K_est):
            u = np.clip(next(policy), 0.0, 1.0)
            obs.update(state, model, y, u)
            y = arm.step(u)
        w_frozen = float(state.w_hat[0])
        chosen = bin_index(w_frozen)
        # drop-off phase: frozen estimate, constant target reference
        target = targets[chosen]
        drop_ref = point_reference(params, target, dropoff_duration)
        ctrl2 = Controller(model, cfg.mpc_config(), drop_ref,
                           known_load=np.atleast_1d(w_frozen))
        K_drop = int(round(dropoff_duration / params.Ts))
        for _ in range(K_drop):
            u = ctrl2.step(y)
            y = arm.step(u)
        final = y[-2:]
        err = float(np.linalg.norm(final - target))
        outcome = SortOutcome(
            payload=payload, w_estimate=w_frozen, chosen_bin=chosen,
            true_bin=bin_index(payload), final_position=final, target=target,
            placement_error=err,
            success=(chosen == bin_index(payload)) and err <= CUP_RADIUS,
        )
        outcomes.append(outcome)
    if cfg.outdir:
        os.makedirs(cfg.outdir, exist_ok=True)
        with open(os.path.join(cfg.outdir, "experiment4_sorting.csv"), "w") as fh:
            fh.write("object,payload,w_estimate,chosen_bin,true_bin,"
                     "placement_error,success\n")
            for i, o in enumerate(outcomes):
                fh.write("%d,%.17g,%.17g,%d,%d,%.17g,%d\n"
                         % (i, o.payload, o.w_estimate, o.chosen_bin,
                            o.true_bin, o.placement_error, int(o.success)))
    return outcomes
