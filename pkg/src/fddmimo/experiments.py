"""Monte-Carlo sweeps over SNR, pilot length, downlink array size and feedback error.

Every trial draws its test user, gain perturbation, noise and pilots from
streams keyed by ``(master seed, trial index)`` only, so all axis points
and scenarios see the same random draws (common random numbers) and the
output does not depend on scheduling. Uplink estimates are shared between
scenarios of a trial and, when the axis leaves the uplink untouched,
between axis points too.
"""
import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import estimators as est
from .channel import SystemConfig, downlink_channels, synth_downlink, synth_uplink, uplink_channels
from .dataset import Dataset, downlink_gains
from .linalg import child_rng
from .metrics import inject_feedback_error, nmse, rate, ser_qpsk

__all__ = ["SCENARIOS", "AXES", "DEFAULT_GRIDS", "CSV_HEADER", "SweepSpec", "MetricRow",
           "point_config", "run_trial", "run_sweep", "write_csv", "format_csv"]

UP_GAN, UP_LMMSE = "UP-GAN", "UP-LMMSE"
DL_GAN, DL_LS, DL_R2F2 = "DL-GAN", "DL-LS", "Modified-R2F2"
DL_COPY, DL_DELAY = "DL-FullRecip-copy", "DL-FullRecip-delay"
SCENARIOS = (UP_GAN, UP_LMMSE, DL_GAN, DL_COPY, DL_DELAY, DL_LS, DL_R2F2)
GAN_SCENARIOS = (UP_GAN, DL_GAN, DL_COPY, DL_DELAY, DL_LS)
UPLINK_SCENARIOS = (UP_GAN, UP_LMMSE)

AXES = ("snr_db", "p", "M_dl_size", "sigma_phi_deg")
DEFAULT_GRIDS = {
    "snr_db": tuple(range(-10, 31, 5)),
    "p": (1, 2, 4, 8, 16),
    "M_dl_size": (2, 4, 8, 16, 32, 64),
    "sigma_phi_deg": (0, 10, 20, 30, 40),
}
CSV_HEADER = ("scenario", "axis", "value", "nmse_db", "rate", "ser", "iters", "seconds", "trials")
WORKERS_ENV = "FDDMIMO_WORKERS"


@dataclass(frozen=True)
class SweepSpec:
    """One sweep: ``axis`` over ``values`` for each scenario, ``trials`` users per point.

    ``snr_db`` and ``sigma_phi_deg`` are the operating point for the axes
    not being swept. Wall-clock seconds are only written when ``timing`` is
    on, since they would make repeated runs differ.
    """

    axis: str = "snr_db"
    values: Tuple[float, ...] = DEFAULT_GRIDS["snr_db"]
    scenarios: Tuple[str, ...] = (DL_GAN, DL_COPY)
    trials: int = 200
    seed: int = 0
    output: Optional[str] = None
    snr_db: float = 10.0
    sigma_phi_deg: float = 0.0
    alpha_dl_rel_err: float = 0.008
    ser_symbols: int = 64
    timing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        self.validate()

    def validate(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown axis {self.axis!r}; choose from {AXES}")
        unknown = [s for s in self.scenarios if s not in SCENARIOS]
        if unknown:
            raise ValueError(f"unknown scenarios {unknown}; choose from {SCENARIOS}")
        if not self.scenarios or not self.values:
            raise ValueError("a sweep needs at least one scenario and one axis value")
        if self.trials < 1 or self.ser_symbols < 1:
            raise ValueError("trials and ser_symbols must be >= 1")
        if self.axis in ("p", "M_dl_size") and any(int(v) != v or v < 1 for v in self.values):
            raise ValueError(f"{self.axis} values must be positive integers")


@dataclass
class MetricRow:
    scenario: str
    axis: str
    value: float
    nmse_db: float
    rate: float
    ser: float
    iters: float
    seconds: float
    trials: int

    def as_tuple(self):
        return (self.scenario, self.axis, self.value, self.nmse_db, self.rate, self.ser,
                self.iters, self.seconds, self.trials)


def snr_to_power(snr_db: float, sigma_n2: float, mean_path_power: float) -> float:
    """Transmit power giving ``SNR = P_T E||h||^2 / (M sigma^2)`` (``E||h||^2 / M = E sum alpha^2``)."""
    return 10.0 ** (snr_db / 10.0) * sigma_n2 / mean_path_power


def point_config(base: SystemConfig, spec: SweepSpec, value, mean_path_power: float) -> SystemConfig:
    """System configuration at one axis point."""
    snr = value if spec.axis == "snr_db" else spec.snr_db
    cfg = base.with_(P_T=snr_to_power(snr, base.sigma_n2, mean_path_power))
    if spec.axis == "p":
        cfg = cfg.with_(p=int(value))
    elif spec.axis == "M_dl_size":
        if value > base.M:
            raise ValueError(f"M_dl_size {value} exceeds M = {base.M}")
        cfg = cfg.with_(M_dl=tuple(range(1, int(value) + 1)))
    return cfg


@dataclass
class _Context:
    spec: SweepSpec
    base: SystemConfig
    model: object
    dataset: Dataset
    up_dcfg: est.DescentConfig
    dl_dcfg: est.DescentConfig
    r2f2_dcfg: est.DescentConfig
    covariance: Optional[np.ndarray] = None


def _uplink_estimate(ctx, cache, key, kind, obs_up, cfg, t):
    if (key, kind) not in cache:
        if kind == UP_GAN:
            cache[(key, kind)] = est.up_gan_estimate(obs_up, ctx.model, cfg, ctx.up_dcfg,
                                                     rng=child_rng(ctx.spec.seed, "up-gan", t))
        else:
            cache[(key, kind)] = est.up_lmmse(obs_up, ctx.covariance, cfg)
    return cache[(key, kind)]


def run_trial(ctx: _Context, t: int) -> Dict[Tuple[float, str], Tuple[float, ...]]:
    """All axis points and scenarios for trial ``t``.

    Returns ``{(value, scenario): (nmse_linear, rate, ser, iters, seconds)}``.
    """
    spec, ds = ctx.spec, ctx.dataset
    seed = spec.seed
    user = ds.records[ds.test[child_rng(seed, "user", t).integers(len(ds.test))]]
    x_dl = user.replace(alpha=downlink_gains(user.alpha, spec.alpha_dl_rel_err,
                                             child_rng(seed, "alpha-dl", t)))
    mpp = ds.mean_path_power()
    out = {}
    cache = {}
    for value in spec.values:
        cfg = point_config(ctx.base, spec, value, mpp)
        sigma_phi = value if spec.axis == "sigma_phi_deg" else spec.sigma_phi_deg
        obs_up = synth_uplink(user, cfg, child_rng(seed, "uplink-noise", t))
        obs_dl = synth_downlink(x_dl, cfg, child_rng(seed, "downlink", t))
        up_key = cfg.P_T                              # the only axis that changes the uplink
        h_up = uplink_channels(user, cfg)
        all_k, full = tuple(range(1, cfg.K + 1)), tuple(range(1, cfg.M + 1))
        h_dl = downlink_channels(x_dl, cfg, all_k, full)
        # same normal draws at every sigma, so the error grows with sigma per trial
        fb_rng = child_rng(seed, "feedback", t)
        for scen in spec.scenarios:
            if scen in UPLINK_SCENARIOS:
                rep = _uplink_estimate(ctx, cache, up_key, scen, obs_up, cfg, t)
                h_est = rep.h_up[[k - 1 for k in cfg.K_up]] if scen == UP_GAN else rep.h_up
                h_true, iters, seconds = h_up, rep.iterations, rep.seconds
            else:
                if scen == DL_R2F2:
                    rep = est.modified_r2f2(obs_up, obs_dl, cfg, ctx.r2f2_dcfg,
                                            rng=child_rng(seed, "r2f2", t), dl_cfg=ctx.dl_dcfg)
                    iters, seconds = rep.iterations, rep.seconds
                else:
                    gan = _uplink_estimate(ctx, cache, up_key, UP_GAN, obs_up, cfg, t)
                    p = gan.params
                    if scen == DL_GAN:
                        rep = est.dl_phase_estimate(obs_dl, p.alpha, p.tau, p.theta, cfg,
                                                    ctx.dl_dcfg, rng=child_rng(seed, "dl", t))
                    elif scen == DL_LS:
                        rep = est.dl_ls(obs_dl, p.tau, p.theta, cfg)
                    else:
                        mode = "copy_phase" if scen == DL_COPY else "delay_phase"
                        rep = est.full_reciprocity(gan, mode, cfg)
                    # chained estimators: count the shared uplink stage as well
                    iters, seconds = gan.iterations + rep.iterations, gan.seconds + rep.seconds
                h_est = rep.h_dl
                if sigma_phi > 0 and scen in (DL_GAN, DL_LS, DL_R2F2):
                    q = rep.params
                    noisy = q.replace(phi_dl=inject_feedback_error(q.phi_dl, sigma_phi, fb_rng))
                    h_est = downlink_channels(noisy, cfg, all_k, full)
                h_true = h_dl
            ser_rng = child_rng(seed, "ser", t)
            out[(value, scen)] = (nmse(h_true, h_est), rate(h_true, h_est, cfg.P_T, cfg.sigma_n2),
                                  ser_qpsk(h_true, h_est, cfg.P_T, cfg.sigma_n2,
                                           spec.ser_symbols, ser_rng),
                                  float(iters), seconds)
    return out


def _worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


_WORKER_CTX = None


def _init_worker(ctx):
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _trial_in_worker(t):
    return run_trial(_WORKER_CTX, t)


def run_sweep(spec: SweepSpec, model, dataset: Dataset, cfg: Optional[SystemConfig] = None,
              up_dcfg: est.DescentConfig = est.UP_GAN_DEFAULT,
              dl_dcfg: est.DescentConfig = est.DL_PHASE_DEFAULT,
              r2f2_dcfg: est.DescentConfig = est.R2F2_DEFAULT,
              workers: Optional[int] = None) -> List[MetricRow]:
    """Run every (axis value, scenario) point and average over trials.

    NMSE is averaged in linear units and then converted to dB. Trials are
    reduced in index order, so the result is identical for any worker
    count (``FDDMIMO_WORKERS`` sets the default).
    """
    spec.validate()
    base = cfg if cfg is not None else SystemConfig(L=dataset.L)
    if base.L != dataset.L:
        raise ValueError(f"config L = {base.L} does not match dataset L = {dataset.L}")
    if any(s in GAN_SCENARIOS for s in spec.scenarios) and model is None:
        raise ValueError("GAN-based scenarios need a trained model")
    ctx = _Context(spec, base, model, dataset, up_dcfg, dl_dcfg, r2f2_dcfg)
    if UP_LMMSE in spec.scenarios:
        train = [dataset.records[i] for i in dataset.train]
        ctx.covariance = est.channel_covariance(train, base)

    workers = _worker_count() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(ctx,)) as pool:
            results = list(pool.map(_trial_in_worker, range(spec.trials)))
    else:
        results = [run_trial(ctx, t) for t in range(spec.trials)]

    rows = []
    for value in spec.values:
        for scen in spec.scenarios:
            vals = np.array([res[(value, scen)] for res in results])
            mean = vals.mean(axis=0)
            rows.append(MetricRow(scen, spec.axis, value, 10.0 * math.log10(mean[0]),
                                  mean[1], mean[2], mean[3],
                                  mean[4] if spec.timing else float("nan"), len(results)))
    if spec.output:
        write_csv(rows, spec.output)
    return rows


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def format_csv(rows: Sequence[MetricRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in rows:
        w.writerow([_fmt(v) for v in row.as_tuple()])
    return buf.getvalue()


def write_csv(rows: Sequence[MetricRow], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_csv(rows))
