"""Scenario generation, sensor/communication simulation, and Monte Carlo metrics.

Randomness: all draws come from numpy's PCG64 generator. A run with base
seed s derives three independent streams via SeedSequence(s, spawn_key=(k,)):
k=0 world (trajectories, process and measurement noise), k=1 communication
drops, k=2 initial estimate sampling. Monte Carlo run j uses base seed
seed + j, so serial and parallel execution agree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geom import Pose2, wrap_angle
from .models import RelPosMeasurement, range_bearing_to_relpos
from .filters.runtime import ESTIMATOR_KINDS, make_filter
from .xform import transformed_meas_jacobians
from .models import meas_jacobians, motion_jacobians

__all__ = [
    "ScenarioConfig",
    "WorldData",
    "RunLog",
    "MetricsReport",
    "generate_trajectories",
    "generate_world",
    "run_episode",
    "rmse",
    "nees",
    "pose_errors",
    "nees_series",
    "monte_carlo",
    "linear_surrogate_position_nees",
    "EpisodeDiverged",
]

_MIN_LATERAL_SIGMA = 1e-6


class EpisodeDiverged(RuntimeError):
    """Raised when an estimator produces a non-finite state."""


@dataclass(frozen=True)
class ScenarioConfig:
    robot_count: int = 9
    duration_s: float = 360.0
    dt: float = 0.1
    circle_radius_m: float = 4.0
    period_range_s: tuple = (20.0, 40.0)
    sensor_range_m: float = 10.0
    meas_rate_hz: float = 2.0
    odom_sigma: tuple = (0.02, 0.0, 0.005)  # true per-step noise sigmas
    bearing_sigma: float = 0.01
    range_sigma: float = 0.2
    comm_success: float = 1.0
    dropout_policy: str = "schmidt"  # "schmidt" or "abort"
    estimator: str = "tsb"
    pair_only: bool = False  # only the measuring pair applies corrections
    grid_spacing_m: float = 10.0
    init_pos_sigma: float = 0.6
    init_heading_sigma: float = 0.1
    seed: int = 0
    record_jacobians: bool = False

    def __post_init__(self):
        if self.robot_count < 2:
            raise ValueError("need at least two robots")
        if self.dt <= 0 or self.duration_s <= 0:
            raise ValueError("dt and duration must be positive")
        if not 0.0 < self.comm_success <= 1.0:
            raise ValueError("comm_success must lie in (0, 1]")
        if self.dropout_policy not in ("schmidt", "abort"):
            raise ValueError(f"unknown dropout policy {self.dropout_policy!r}")
        if self.estimator.lower() not in ESTIMATOR_KINDS:
            raise ValueError(
                f"unknown estimator {self.estimator!r}; expected one of {ESTIMATOR_KINDS}"
            )
        if self.sensor_range_m < 0 or self.meas_rate_hz <= 0:
            raise ValueError("sensor range must be >= 0 and meas rate positive")

    @property
    def step_count(self) -> int:
        return int(round(self.duration_s / self.dt))

    @property
    def meas_every(self) -> int:
        return max(1, int(round(1.0 / (self.meas_rate_hz * self.dt))))

    def filter_Q(self) -> np.ndarray:
        sx, sy, st = self.odom_sigma
        sy = max(sy, _MIN_LATERAL_SIGMA)  # keep Q invertible
        return np.diag([sx**2, sy**2, st**2])


def _stream(seed: int, key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(key,))))


def generate_trajectories(cfg: ScenarioConfig, rng: np.random.Generator):
    """Grid of circular trajectories: start poses plus constant motion inputs.

    Returns (starts (N,3), inputs (N,3)); robot i orbits its grid cell
    counter-clockwise with a seeded period.
    """
    n_side = math.isqrt(cfg.robot_count)
    if n_side * n_side != cfg.robot_count:
        raise ValueError("robot_count must be a perfect square for the grid scenario")
    starts = np.zeros((cfg.robot_count, 3))
    inputs = np.zeros((cfg.robot_count, 3))
    r = cfg.circle_radius_m
    for i in range(cfg.robot_count):
        cx = (i % n_side) * cfg.grid_spacing_m
        cy = (i // n_side) * cfg.grid_spacing_m
        period = rng.uniform(cfg.period_range_s[0], cfg.period_range_s[1])
        starts[i] = (cx + r, cy, math.pi / 2)
        inputs[i] = (2 * math.pi * r / period, 0.0, 2 * math.pi / period)
    return starts, inputs


@dataclass
class WorldData:
    """Ground truth, motion inputs, and pre-drawn measurements for one run."""

    cfg: ScenarioConfig
    truth: np.ndarray  # (T+1, N, 3)
    inputs: np.ndarray  # (T, N, 3)
    measurements: dict  # step -> list[RelPosMeasurement]
    init_est: np.ndarray  # (N, 3)
    init_cov: np.ndarray  # (N, 3, 3)


def _propagate_truth(X, inputs, dt, eps):
    c, s = np.cos(X[:, 2]), np.sin(X[:, 2])
    dx = inputs[:, 0] * dt + eps[:, 0]
    dy = inputs[:, 1] * dt + eps[:, 1]
    out = X.copy()
    out[:, 0] += c * dx - s * dy
    out[:, 1] += s * dx + c * dy
    theta = X[:, 2] + inputs[:, 2] * dt + eps[:, 2]
    w = theta - 2.0 * np.pi * np.floor((theta + np.pi) / (2.0 * np.pi))
    out[:, 2] = np.where(w <= -np.pi, w + 2.0 * np.pi, w)
    return out


def generate_world(cfg: ScenarioConfig) -> WorldData:
    """Simulate the ground truth and draw every sensor sample for one run.

    The world never depends on any estimator's state.
    """
    rng = _stream(cfg.seed, 0)
    starts, inputs_const = generate_trajectories(cfg, rng)
    n, T = cfg.robot_count, cfg.step_count
    truth = np.zeros((T + 1, n, 3))
    truth[0] = starts
    inputs = np.broadcast_to(inputs_const, (T, n, 3)).copy()
    sx, sy, st = cfg.odom_sigma
    measurements: dict[int, list[RelPosMeasurement]] = {}
    for t in range(1, T + 1):
        eps = np.zeros((n, 3))
        eps[:, 0] = rng.normal(0.0, sx, size=n) if sx > 0 else 0.0
        eps[:, 1] = rng.normal(0.0, sy, size=n) if sy > 0 else 0.0
        eps[:, 2] = rng.normal(0.0, st, size=n) if st > 0 else 0.0
        truth[t] = _propagate_truth(truth[t - 1], inputs[t - 1], cfg.dt, eps)
        if t % cfg.meas_every == 0 and cfg.sensor_range_m > 0:
            evts = []
            pos = truth[t, :, :2]
            for i in range(n):
                for j in range(n):
                    if i == j:
                        continue
                    delta = pos[j] - pos[i]
                    d_true = float(np.hypot(delta[0], delta[1]))
                    if d_true > cfg.sensor_range_m:
                        continue
                    bearing = math.atan2(delta[1], delta[0]) - truth[t, i, 2]
                    d = d_true + rng.normal(0.0, cfg.range_sigma)
                    phi = bearing + rng.normal(0.0, cfg.bearing_sigma)
                    d = max(d, 1e-6)
                    y, R = range_bearing_to_relpos(d, phi, cfg.range_sigma, cfg.bearing_sigma)
                    evts.append(
                        RelPosMeasurement(observer_id=i, target_id=j, y=y, R=R, time_step=t)
                    )
            if evts:
                measurements[t] = evts
    rng_init = _stream(cfg.seed, 2)
    init_est = truth[0].copy()
    init_est[:, :2] += rng_init.normal(0.0, cfg.init_pos_sigma, size=(n, 2))
    init_est[:, 2] += rng_init.normal(0.0, cfg.init_heading_sigma, size=n)
    init_cov = np.broadcast_to(
        np.diag([cfg.init_pos_sigma**2, cfg.init_pos_sigma**2, cfg.init_heading_sigma**2]),
        (n, 3, 3),
    ).copy()
    return WorldData(cfg, truth, inputs, measurements, init_est, init_cov)


@dataclass
class RunLog:
    """Per-step record of one episode."""

    cfg: ScenarioConfig
    estimator: str
    truth: np.ndarray  # (T+1, N, 3)
    est_prior: np.ndarray  # (T+1, N, 3)
    est_post: np.ndarray  # (T+1, N, 3)
    cov_post: np.ndarray  # (T+1, N, 3, 3) own blocks, original coordinates
    events: list = field(default_factory=list)  # dicts: step, type, ...
    jac_F: list = field(default_factory=list)  # per step (N,3,3) when recorded
    jac_H: dict = field(default_factory=dict)  # step -> list[(ids, blocks)]
    aborted: bool = False
    abort_reason: str = ""

    @property
    def step_count(self) -> int:
        return self.truth.shape[0] - 1


_SERVER_KINDS = ("tsb", "osb")


def _record_F(kind, prior, post, truth_prev, truth_curr):
    n = prior.shape[0]
    F = np.zeros((n, 3, 3))
    if kind in ("tsb", "tjoint"):
        F[:] = np.eye(3)
        return F
    for i in range(n):
        if kind == "central":
            Fi, _ = motion_jacobians(
                Pose2(truth_curr[i, :2], truth_curr[i, 2]),
                Pose2(truth_prev[i, :2], truth_prev[i, 2]),
            )
        else:
            Fi, _ = motion_jacobians(
                Pose2(prior[i, :2], prior[i, 2]), Pose2(post[i, :2], post[i, 2])
            )
        F[i] = Fi
    return F


def _record_H(kind, m, est, truth_row):
    if kind == "central":
        xi = Pose2(truth_row[m.observer_id, :2], truth_row[m.observer_id, 2])
        xj = Pose2(truth_row[m.target_id, :2], truth_row[m.target_id, 2])
    else:
        xi = Pose2(est[m.observer_id, :2], est[m.observer_id, 2])
        xj = Pose2(est[m.target_id, :2], est[m.target_id, 2])
    if kind in ("tsb", "tjoint"):
        Ha, Hb = transformed_meas_jacobians(xi, xj)
    else:
        Ha, Hb = meas_jacobians(xi, xj)
    return ((m.observer_id, m.target_id), (Ha, Hb))


def run_episode(cfg: ScenarioConfig, world: WorldData | None = None) -> RunLog:
    """Run one estimator over one simulated world.

    Deterministic given the config (including seed). Message drops are
    sampled per directed message; under the "abort" policy an update is
    committed only when every message of the event arrived, under
    "schmidt" the robots whose correction message survived form the
    partial updating set.
    """
    if world is None:
        world = generate_world(cfg)
    kind = cfg.estimator.lower()
    n, T = cfg.robot_count, cfg.step_count
    filt = make_filter(kind, world.init_est, world.init_cov, cfg.filter_Q())
    rng_comm = _stream(cfg.seed, 1)
    lossy = cfg.comm_success < 1.0 and kind in _SERVER_KINDS

    log = RunLog(
        cfg=cfg,
        estimator=kind,
        truth=world.truth,
        est_prior=np.zeros((T + 1, n, 3)),
        est_post=np.zeros((T + 1, n, 3)),
        cov_post=np.zeros((T + 1, n, 3, 3)),
    )
    log.est_prior[0] = world.init_est
    log.est_post[0] = world.init_est
    log.cov_post[0] = world.init_cov

    def _truth_poses(t):
        return [Pose2(world.truth[t, i, :2], world.truth[t, i, 2]) for i in range(n)]

    all_ids = set(range(n))
    for t in range(1, T + 1):
        post_prev = filt.poses()
        if kind == "central":
            filt.propagate(
                world.inputs[t - 1], cfg.dt,
                truth_prev=_truth_poses(t - 1), truth_curr=_truth_poses(t),
            )
        else:
            filt.propagate(world.inputs[t - 1], cfg.dt)
        prior = filt.poses()
        log.est_prior[t] = prior
        if cfg.record_jacobians:
            log.jac_F.append(
                _record_F(kind, prior, post_prev, world.truth[t - 1], world.truth[t])
            )
        for m in world.measurements.get(t, ()):
            updating = None
            if lossy:
                p = cfg.comm_success
                up_a, up_b = rng_comm.random(2) < p
                down = rng_comm.random(n) < p
                if not (up_a and up_b):
                    log.events.append(
                        {"step": t, "type": "drop_upload", "observer": m.observer_id,
                         "target": m.target_id}
                    )
                    continue
                if cfg.dropout_policy == "abort":
                    if not np.all(down):
                        log.events.append(
                            {"step": t, "type": "drop_abort", "observer": m.observer_id,
                             "target": m.target_id}
                        )
                        continue
                    updating = None
                else:
                    survivors = {i for i in range(n) if down[i]}
                    if cfg.pair_only:
                        survivors &= {m.observer_id, m.target_id}
                    if not survivors:
                        log.events.append(
                            {"step": t, "type": "drop_all_corrections",
                             "observer": m.observer_id, "target": m.target_id}
                        )
                        continue
                    updating = None if survivors == all_ids else survivors
            elif cfg.pair_only and kind in _SERVER_KINDS:
                updating = {m.observer_id, m.target_id}
            if cfg.record_jacobians:
                log.jac_H.setdefault(t, []).append(
                    _record_H(kind, m, filt.poses(), world.truth[t])
                )
            log.events.append(
                {"step": t, "type": "measurement", "observer": m.observer_id,
                 "target": m.target_id}
            )
            if kind == "central":
                filt.update_relpos(m, truth=_truth_poses(t))
            else:
                filt.update_relpos(m, updating_set=updating)
        post = filt.poses()
        if not np.all(np.isfinite(post)):
            log.aborted = True
            log.abort_reason = f"non-finite estimate at step {t}"
            log.est_post = log.est_post[: t]
            raise EpisodeDiverged(log.abort_reason)
        log.est_post[t] = post
        log.cov_post[t] = filt.own_covs_original()
    log._filter = filt  # kept for equivalence tests
    return log


# ---------------------------------------------------------------------------
# metrics


def rmse(values, axis=None) -> np.ndarray:
    """Root mean square over the given axis (all values when None)."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("rmse of empty input")
    return np.sqrt(np.mean(values**2, axis=axis))


def nees(x_tilde, P, component: str) -> float:
    """Dimension-normalized estimation error squared for one estimate.

    position uses the 2x2 position block (divided by 2), orientation the
    heading variance. The error heading must already be wrapped.
    """
    x_tilde = np.asarray(x_tilde, dtype=float)
    P = np.asarray(P, dtype=float)
    if component == "position":
        block = P[:2, :2]
        det = block[0, 0] * block[1, 1] - block[0, 1] * block[1, 0]
        if det <= 0:
            raise ValueError("position covariance block is singular")
        e = x_tilde[:2]
        inv = np.array([[block[1, 1], -block[0, 1]], [-block[1, 0], block[0, 0]]]) / det
        return float(e @ inv @ e) / 2.0
    if component == "orientation":
        if P[2, 2] <= 0:
            raise ValueError("heading variance is zero")
        return float(x_tilde[2] ** 2 / P[2, 2])
    raise ValueError(f"unknown component {component!r}")


def pose_errors(log: RunLog) -> np.ndarray:
    """(T+1, N, 3) posterior estimation errors with wrapped headings."""
    err = log.est_post - log.truth
    w = err[:, :, 2]
    w = w - 2.0 * np.pi * np.floor((w + np.pi) / (2.0 * np.pi))
    err[:, :, 2] = np.where(w <= -np.pi, w + 2.0 * np.pi, w)
    return err


def nees_series(log: RunLog):
    """(T+1, N) position and orientation NEES arrays for one run."""
    err = pose_errors(log)
    P = log.cov_post
    a, b, c = P[:, :, 0, 0], P[:, :, 0, 1], P[:, :, 1, 1]
    det = a * c - b * P[:, :, 1, 0]
    ex, ey = err[:, :, 0], err[:, :, 1]
    pos = (c * ex**2 - (b + P[:, :, 1, 0]) * ex * ey + a * ey**2) / det / 2.0
    ori = err[:, :, 2] ** 2 / P[:, :, 2, 2]
    return pos, ori


@dataclass
class MetricsReport:
    """Aggregate and per-step accuracy/consistency metrics of one configuration."""

    estimator: str
    config_id: str
    n_runs: int
    excluded_runs: int
    aggregate: dict  # (metric, component) -> float
    series: dict  # (metric, component) -> (T+1,) array


def _report_from_logs(logs, estimator, config_id, excluded) -> MetricsReport:
    err = np.stack([pose_errors(g) for g in logs])  # (runs, T+1, N, 3)
    pos_rmse = np.sqrt(np.mean(err[..., 0] ** 2 + err[..., 1] ** 2, axis=(0, 2)))
    ori_rmse = rmse(err[..., 2], axis=(0, 2))
    pos_nees = np.stack([nees_series(g)[0] for g in logs])
    ori_nees = np.stack([nees_series(g)[1] for g in logs])
    series = {
        ("rmse", "position"): pos_rmse,
        ("rmse", "orientation"): ori_rmse,
        ("nees", "position"): np.mean(pos_nees, axis=(0, 2)),
        ("nees", "orientation"): np.mean(ori_nees, axis=(0, 2)),
    }
    aggregate = {
        ("rmse", "position"): float(np.sqrt(np.mean(err[..., :2] ** 2) * 2)),
        ("rmse", "orientation"): float(rmse(err[..., 2])),
        ("nees", "position"): float(np.mean(pos_nees)),
        ("nees", "orientation"): float(np.mean(ori_nees)),
    }
    return MetricsReport(
        estimator=estimator,
        config_id=config_id,
        n_runs=len(logs),
        excluded_runs=excluded,
        aggregate=aggregate,
        series=series,
    )


def monte_carlo(cfg: ScenarioConfig, n_runs: int, config_id: str = "") -> MetricsReport:
    """Run n_runs independent episodes (seeds seed+0..n_runs-1) and aggregate.

    Diverged runs are excluded and counted.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    logs = []
    excluded = 0
    for j in range(n_runs):
        run_cfg = replace(cfg, seed=cfg.seed + j)
        try:
            logs.append(run_episode(run_cfg))
        except EpisodeDiverged:
            excluded += 1
    if not logs:
        raise RuntimeError("all Monte Carlo runs diverged")
    return _report_from_logs(logs, cfg.estimator.lower(), config_id, excluded)


def linear_surrogate_position_nees(n_runs: int = 30, seed: int = 0, steps: int = 200) -> float:
    """Average position NEES of a fully linear filtering problem.

    Robots keep zero headings (no rotation, no heading noise) and receive
    global-frame position measurements through the landmark channel, so
    the EKF is exact and the average position NEES concentrates near 1.
    """
    n = 2
    dt = 0.1
    sigma_p = 0.02
    sigma_m = 0.1
    Q = np.diag([sigma_p**2, sigma_p**2, 1e-18])
    total = 0.0
    count = 0
    for j in range(n_runs):
        rng = _stream(seed + j, 0)
        truth = np.zeros((n, 3))
        truth[:, 0] = np.arange(n) * 5.0
        est0 = truth.copy()
        est0[:, :2] += rng.normal(0.0, 0.5, size=(n, 2))
        P0 = np.broadcast_to(np.diag([0.25, 0.25, 1e-18]), (n, 3, 3)).copy()
        filt = make_filter("joint", est0, P0, Q)
        inputs = np.zeros((n, 3))
        inputs[:, 0] = 1.0
        for t in range(steps):
            eps = np.zeros((n, 3))
            eps[:, :2] = rng.normal(0.0, sigma_p, size=(n, 2))
            truth = _propagate_truth(truth, inputs, dt, eps)
            filt.propagate(inputs, dt)
            if (t + 1) % 5 == 0:
                for i in range(n):
                    y = truth[i, :2] + rng.normal(0.0, sigma_m, size=2)
                    # landmark at the origin observed from pose (p, 0): y = p_L - p
                    filt.update_landmark(i, np.zeros(2), -y, np.eye(2) * sigma_m**2)
                est = filt.poses()
                covs = filt.own_covs_original()
                for i in range(n):
                    total += nees(est[i] - truth[i], covs[i], "position")
                    count += 1
    return total / count
