"""Channel estimators: latent-space LS with a GAN prior and the baselines.

All iterative solvers minimise the LS objective divided by ``||y||^2``.
This leaves minimisers and the monotonicity of the iterates unchanged but
makes step sizes independent of transmit power and path-gain scale.
Objective traces in :class:`EstimateReport` are reported unnormalised.

Restarts run side by side as one batch of parameter vectors; a restart that
meets the stopping rule is frozen while the others continue.
"""
import math
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg

from .channel import (TWO_PI, DownlinkObservation, PathParams, SystemConfig,
                      UplinkObservation, _delay_phasors, _dl_value_and_grad, _steering, _uplink_value_and_grad, build_B,
                      downlink_channels, uplink_channels, wrap_phase)
from .linalg import lstsq, make_rng, rank

__all__ = [
    "DescentConfig", "EstimateReport", "EstimationError", "up_gan_estimate",
    "dl_phase_estimate", "up_lmmse", "channel_covariance", "dl_ls", "modified_r2f2",
    "full_reciprocity", "UP_GAN_DEFAULT", "DL_PHASE_DEFAULT", "R2F2_DEFAULT",
]


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class DescentConfig:
    """Iterative-solver settings.

    Stopping: a restart ends once its best objective improved by less than
    ``epsilon`` (relative) over the last ``patience`` iterations, or after
    ``max_iters``. With ``lr_drops > 0`` a stalled restart first gets its
    step cut by 0.3 (up to ``lr_drops`` times) before it is stopped.
    ``lr=None`` with ``fixed_step`` selects a step from a computable
    curvature bound where one exists (downlink phases only).
    """

    optimizer: str = "adam"
    lr: Optional[float] = 1e-2
    max_iters: int = 2000
    epsilon: float = 0.01
    patience: int = 25
    restarts: int = 5
    betas: tuple = (0.9, 0.999)
    seed: int = 0
    block_lr: tuple = (1.0, 1.0, 1.0, 1.0)
    init: str = "screen"
    candidates: int = 1024
    lr_drops: int = 0
    antenna_stages: tuple = ()

    def __post_init__(self):
        if self.optimizer not in ("adam", "fixed_step"):
            raise ValueError("optimizer must be 'adam' or 'fixed_step'")
        if self.lr_drops < 0:
            raise ValueError("lr_drops must be >= 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.restarts < 1 or self.max_iters < 0 or self.patience < 1:
            raise ValueError("restarts and patience must be >= 1, max_iters >= 0")
        if self.init not in ("screen", "random"):
            raise ValueError("init must be 'screen' or 'random'")
        if self.candidates < self.restarts:
            raise ValueError("need at least as many screening candidates as restarts")

    def with_(self, **changes) -> "DescentConfig":
        return replace(self, **changes)


UP_GAN_DEFAULT = DescentConfig(lr_drops=2, antenna_stages=(2, 4, 8, 16, 32))
DL_PHASE_DEFAULT = DescentConfig(optimizer="fixed_step", lr=None, max_iters=500,
                                 epsilon=1e-6, patience=5, restarts=1)
R2F2_DEFAULT = DescentConfig(optimizer="fixed_step", lr=None, max_iters=400, restarts=10)


@dataclass
class EstimateReport:
    """Outcome of one estimator call.

    ``params`` holds whatever the estimator recovered (missing fields are
    zero). ``h_up`` is ``(K, M)`` over all subcarriers, ``h_dl`` is
    ``(K, M)`` over all subcarriers and the full array.
    """

    params: Optional[PathParams] = None
    h_up: Optional[np.ndarray] = None
    h_dl: Optional[np.ndarray] = None
    trace: List[float] = field(default_factory=list)
    iterations: int = 0
    seconds: float = 0.0
    restart: int = 0
    restart_objectives: List[float] = field(default_factory=list)
    objective: float = float("nan")
    flags: set = field(default_factory=set)
    warnings: List[str] = field(default_factory=list)
    latent: Optional[np.ndarray] = None
    rho: Optional[np.ndarray] = None
    alpha_dl: Optional[np.ndarray] = None

    @property
    def identifiable(self) -> bool:
        return "unidentifiable" not in self.flags


def _all_k(cfg):
    return tuple(range(1, cfg.K + 1))


def _full_array(cfg):
    return tuple(range(1, cfg.M + 1))


def _check_uplink(obs: UplinkObservation, cfg: SystemConfig):
    if obs.M != cfg.M:
        raise ValueError("observation antenna count does not match the config")
    if any(not 1 <= k <= cfg.K for k in obs.subcarriers):
        raise ValueError("observation subcarriers fall outside 1..K")


class _Adam:
    def __init__(self, shapes, lr, betas):
        self.lr, (self.b1, self.b2) = lr, betas
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def steps(self, grads):
        self.t += 1
        c1, c2 = 1 - self.b1 ** self.t, 1 - self.b2 ** self.t
        out = []
        for m, v, g in zip(self.m, self.v, grads):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            out.append(self.lr * (m / c1) / (np.sqrt(v / c2) + 1e-8))
        return out


class _Stopper:
    """Per-restart bookkeeping: traces, best iterate and the stopping rule.

    When a restart stalls and it still has learning-rate drops left, its
    step multiplier ``scale`` is cut by ``drop_factor`` instead of stopping.
    """

    def __init__(self, R, eps, patience, drops=0, drop_factor=0.3):
        self.eps, self.patience = eps, patience
        self.drops, self.drop_factor = drops, drop_factor
        self.traces = [[] for _ in range(R)]
        self.best = np.full(R, np.inf)
        self.active = np.ones(R, dtype=bool)
        self.iters = np.zeros(R, dtype=int)
        self.scale = np.ones(R)
        self.used = np.zeros(R, dtype=int)
        self.mark = np.zeros(R, dtype=int)

    def record(self, J):
        improved = np.zeros(len(J), dtype=bool)
        for r in np.flatnonzero(self.active):
            if not np.isfinite(J[r]):
                self.active[r] = False
                self.best[r] = np.nan
                continue
            self.traces[r].append(float(J[r]))
            if J[r] < self.best[r]:
                self.best[r] = J[r]
                improved[r] = True
            tr = self.traces[r][self.mark[r]:]
            if len(tr) > self.patience:
                ref = min(tr[:-self.patience])
                if ref - self.best[r] <= self.eps * ref:
                    if self.used[r] < self.drops:
                        self.used[r] += 1
                        self.scale[r] *= self.drop_factor
                        self.mark[r] = len(self.traces[r]) - 1
                    else:
                        self.active[r] = False
        return improved

    def tick(self):
        self.iters[self.active] += 1


# ---------------------------------------------------------------------------
# UP-GAN
# ---------------------------------------------------------------------------

def _gan_objective(model, z, phi, Y, s, cfg, ks, want_grad=True):
    v, cache = model.G.forward(z, "eval")
    alpha, tau, theta = model.scaler.inverse(v)
    J, grads = _uplink_value_and_grad(alpha, tau, theta, phi, Y, s, cfg, ks, want_grad)
    if not want_grad:
        return J, None, None
    d_alpha, d_tau, d_theta, d_phi = grads
    gx = np.concatenate([d_alpha, d_tau, d_theta], axis=-1) * model.scaler.jacobian(v)
    _, gz = model.G.backward(cache, gx)
    return J, gz, d_phi


def _ls_phases(alpha, tau, theta, Y, s, cfg, ks):
    """Phases of the unconstrained LS fit of ``rho`` given delays and angles, batched."""
    P = _delay_phasors(tau, np.zeros_like(tau), ks, cfg) * s[:, None]       # (..., nk, L)
    A = _steering(theta, cfg.lambda_up, cfg.d_bar, _full_array(cfg))        # (..., M, L)
    # columns of the stacked model are P[k, l] * A[m, l]; form the normal equations directly
    G = np.einsum("...kl,...kn,...ml,...mn->...ln", P.conj(), P, A.conj(), A)
    c = np.einsum("...kl,...ml,km->...l", P.conj(), A.conj(), Y)
    ridge = 1e-10 * np.real(np.einsum("...ll->...", G))[..., None, None] / G.shape[-1]
    rho = np.linalg.solve(G + ridge * np.eye(G.shape[-1]), c[..., None])[..., 0]
    del alpha
    return np.angle(rho)


def _screen(model, Y, s, cfg, ks, n, R, rng, chunk=256):
    """Best ``R`` of ``n`` prior draws, each with its LS phases."""
    z = rng.standard_normal((n, model.d))
    phi = np.empty((n, cfg.L))
    J = np.empty(n)
    for i in range(0, n, chunk):
        sl = slice(i, i + chunk)
        alpha, tau, theta = model.scaler.inverse(model.generate(z[sl]))
        phi[sl] = _ls_phases(alpha, tau, theta, Y, s, cfg, ks)
        J[sl] = _uplink_value_and_grad(alpha, tau, theta, phi[sl], Y, s, cfg, ks, False)[0]
    J = np.where(np.isfinite(J), J, np.inf)
    best = np.argsort(J, kind="stable")[:R]
    return z[best], phi[best]


def _descend_latent(model, z, phi, Y, s, cfg, ks, dcfg):
    """Joint descent over ``(z, phi)`` for every restart row; returns best iterates."""
    norm = max(float(np.vdot(Y, Y).real), np.finfo(float).tiny)
    stop = _Stopper(z.shape[0], dcfg.epsilon, dcfg.patience, dcfg.lr_drops)
    best_z, best_phi = z.copy(), phi.copy()
    adam = _Adam([z.shape, phi.shape], dcfg.lr, dcfg.betas) if dcfg.optimizer == "adam" else None
    for it in range(dcfg.max_iters + 1):
        J, gz, gphi = _gan_objective(model, z, phi, Y, s, cfg, ks)
        improved = stop.record(J)
        best_z[improved], best_phi[improved] = z[improved], phi[improved]
        if it == dcfg.max_iters or not stop.active.any():
            break
        act = stop.active[:, None]
        gz, gphi = gz / norm, gphi / norm
        if adam is not None:
            dz, dphi = adam.steps([gz, gphi])
        else:
            dz, dphi = dcfg.lr * gz, dcfg.lr * gphi
        dz, dphi = dz * stop.scale[:, None], dphi * stop.scale[:, None]
        z = np.where(act, z - dz, z)
        phi = np.where(act, phi - dphi, phi)
        stop.tick()
    return best_z, best_phi, stop


def up_gan_estimate(obs: UplinkObservation, model, cfg: SystemConfig,
                    dcfg: DescentConfig = UP_GAN_DEFAULT, rng=None, z0=None,
                    phi0=None) -> EstimateReport:
    """Joint gradient descent over the latent vector and the uplink phases.

    With ``init="random"`` each restart starts from ``z ~ N(0, I)`` and
    ``phi_up ~ U[0, 2 pi)``. With ``init="screen"`` (default) ``candidates``
    prior draws are scored with their LS phases and the best ``R`` seed the
    restarts. ``z0``/``phi0`` (shape ``(R, d)``/``(R, L)``) override both.
    The restart with the lowest objective is decoded through the generator
    and the scaler.

    ``antenna_stages`` (e.g. ``(8, 16, 32)``) first fits only the leading
    antennas, whose objective has wider basins in the angles, and warm-starts
    each larger stage from the previous one. Each stage gets its own
    iteration budget; ``iterations`` counts all stages, the trace covers
    the full-array stage.
    """
    if model.scaler is None:
        raise ValueError("the generator needs a feature scaler to decode parameters")
    if model.n != 3 * cfg.L:
        raise ValueError(f"generator width {model.n} does not match 3L = {3 * cfg.L}")
    _check_uplink(obs, cfg)
    t0 = time.perf_counter()
    rng = make_rng(dcfg.seed) if rng is None else rng
    R, L = dcfg.restarts, cfg.L
    Y, s, ks = obs.blocks, obs.pilots, obs.subcarriers
    stages = [m for m in dcfg.antenna_stages if m < cfg.M] + [cfg.M]
    stage_cfgs = [cfg.with_(M=m, M_dl=(1,)) if m < cfg.M else cfg for m in stages]
    if dcfg.init == "screen" and z0 is None and phi0 is None:
        m0 = stages[0]
        z, phi = _screen(model, Y[:, :m0], s, stage_cfgs[0], ks, dcfg.candidates, R, rng)
    else:
        z = rng.standard_normal((R, model.d)) if z0 is None else np.array(z0, float).reshape(R, -1)
        phi = (rng.uniform(0, TWO_PI, (R, L)) if phi0 is None
               else np.array(phi0, float).reshape(R, L))
    iters = np.zeros(R, dtype=int)
    for n_ant, scfg in zip(stages, stage_cfgs):
        z, phi, stop = _descend_latent(model, z, phi, Y[:, :n_ant], s, scfg, ks, dcfg)
        iters += stop.iters
    finals = stop.best
    if not np.any(np.isfinite(finals)):
        raise EstimationError("every restart produced a non-finite objective")
    r = int(np.nanargmin(finals))
    alpha, tau, theta = model.scaler.inverse(model.generate(z[r]))
    est = PathParams.sorted_by_delay(alpha, tau, theta, wrap_phase(phi[r]))
    return EstimateReport(
        params=est, h_up=uplink_channels(est, cfg, _all_k(cfg)), trace=stop.traces[r],
        iterations=int(iters[r]), seconds=time.perf_counter() - t0, restart=r,
        restart_objectives=[float(f) for f in finals], objective=float(finals[r]),
        latent=z[r].copy())


# ---------------------------------------------------------------------------
# downlink phases
# ---------------------------------------------------------------------------

def _identifiability(Bmat, cfg: SystemConfig, report: EstimateReport, L: int):
    n_ant, n_meas = len(cfg.M_dl), Bmat.shape[0]
    if n_ant < L:
        report.warnings.append(f"|M_dl| = {n_ant} < L = {L}")
    if n_meas < L:
        report.warnings.append(f"p*|K_dl| = {n_meas} < L = {L}")
    r = rank(Bmat, 1e-9)
    if r < L:
        report.flags.add("unidentifiable")
        report.warnings.append(f"rank(B) = {r} < L = {L}")
    return r


def _check_downlink(obs: DownlinkObservation, cfg: SystemConfig):
    if tuple(obs.subcarriers) != tuple(cfg.K_dl) or tuple(obs.antennas) != tuple(cfg.M_dl):
        raise ValueError("observation subcarriers/antennas do not match the config")
    if obs.p != cfg.p:
        raise ValueError("observation pilot length does not match cfg.p")


def _dl_curvature_bound(Bmat, y) -> float:
    """Upper bound on the Hessian norm of ``||y - B exp(j phi)||^2`` over all phi."""
    smax = np.linalg.norm(Bmat, 2)
    rmax = np.linalg.norm(y) + smax * math.sqrt(Bmat.shape[1])
    return 2.0 * smax * smax + 2.0 * smax * rmax


def _descend_phases(Bmat, y, phi0, dcfg: DescentConfig):
    """Gradient descent on ``J_dl`` from each row of ``phi0``; returns per-row results."""
    norm = max(float(np.vdot(y, y).real), np.finfo(float).tiny)
    phi = np.array(phi0, float)
    R = phi.shape[0]
    if dcfg.optimizer == "fixed_step":
        step = dcfg.lr if dcfg.lr is not None else norm / _dl_curvature_bound(Bmat, y)
        adam = None
    else:
        adam = _Adam([phi.shape], dcfg.lr, dcfg.betas)
    stop = _Stopper(R, dcfg.epsilon, dcfg.patience)
    best = phi.copy()
    for it in range(dcfg.max_iters + 1):
        J, g = _dl_value_and_grad(phi, Bmat, y)
        improved = stop.record(J)
        best[improved] = phi[improved]
        if it == dcfg.max_iters or not stop.active.any():
            break
        g = g / norm
        d = adam.steps([g])[0] if adam is not None else step * g
        phi = np.where(stop.active[:, None], phi - d, phi)
        stop.tick()
    return best, stop


def dl_phase_estimate(obs: DownlinkObservation, alpha, tau, theta, cfg: SystemConfig,
                      dcfg: DescentConfig = DL_PHASE_DEFAULT, phi_init=None,
                      rng=None) -> EstimateReport:
    """Downlink phases by LS given the frequency-independent parameters.

    Without ``phi_init`` the first restart starts from the phases of the
    unconstrained LS solution of ``B rho = y`` (when ``B`` has full column
    rank) and any further restarts from uniform random phases.
    """
    _check_downlink(obs, cfg)
    t0 = time.perf_counter()
    alpha, tau, theta = (np.asarray(v, float) for v in (alpha, tau, theta))
    L = alpha.size
    Bmat = build_B(alpha, tau, theta, cfg, obs.S)
    report = EstimateReport()
    r = _identifiability(Bmat, cfg, report, L)
    rng = make_rng(dcfg.seed) if rng is None else rng
    R = dcfg.restarts
    phi0 = rng.uniform(0, TWO_PI, (R, L))
    if phi_init is not None:
        phi0[0] = np.asarray(phi_init, float)
    elif r == L:
        phi0[0] = np.angle(lstsq(Bmat, obs.y))
    best, stop = _descend_phases(Bmat, obs.y, phi0, dcfg)
    k = int(np.nanargmin(stop.best))
    phi_dl = wrap_phase(best[k])
    est = PathParams.sorted_by_delay(alpha, tau, theta, phi_dl=phi_dl)
    report.params = est
    report.h_dl = downlink_channels(est, cfg, _all_k(cfg), _full_array(cfg))
    report.trace, report.iterations, report.restart = stop.traces[k], int(stop.iters[k]), k
    report.restart_objectives = [float(f) for f in stop.best]
    report.objective = float(stop.best[k])
    report.seconds = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def channel_covariance(records: Sequence[PathParams], cfg: SystemConfig,
                       shrinkage: float = 1e-3, chunk: int = 2048) -> np.ndarray:
    """Per-subcarrier sample covariance of uplink channels, ``(|K_up|, M, M)``.

    A ridge of ``shrinkage * trace(R) / M`` is added to every matrix.
    """
    from .channel import _channels
    ks = cfg.K_up
    R = np.zeros((len(ks), cfg.M, cfg.M), dtype=complex)
    n = 0
    for start in range(0, len(records), chunk):
        part = records[start:start + chunk]
        arr = [np.array([getattr(r, f) for r in part]) for f in ("alpha", "tau", "theta", "phi_up")]
        H = _channels(*arr, cfg, ks, _full_array(cfg), cfg.lambda_up)   # (N, nk, M)
        for i in range(len(ks)):
            Hk = H[:, i, :]
            R[i] += Hk.T @ Hk.conj()
        n += len(part)
    R /= n
    ridge = shrinkage * np.real(np.trace(R, axis1=1, axis2=2)) / cfg.M
    R += ridge[:, None, None] * np.eye(cfg.M)
    return R


def up_lmmse(obs: UplinkObservation, R_h, cfg: SystemConfig) -> EstimateReport:
    """``h_k = R s_k^* (|s_k|^2 R + sigma^2 I)^{-1} y_k`` on every observed subcarrier.

    ``R_h`` is one ``(M, M)`` matrix or one per subcarrier. The returned
    ``h_up`` only covers ``obs.subcarriers`` (LMMSE has no model to
    extrapolate to other subcarriers).
    """
    _check_uplink(obs, cfg)
    t0 = time.perf_counter()
    R_h = np.asarray(R_h, dtype=complex)
    nk = len(obs.subcarriers)
    if R_h.ndim == 2:
        R_h = np.broadcast_to(R_h, (nk, cfg.M, cfg.M))
    H = np.empty((nk, cfg.M), dtype=complex)
    eye = np.eye(cfg.M)
    for i, (yk, sk) in enumerate(zip(obs.blocks, obs.pilots)):
        A = abs(sk) ** 2 * R_h[i] + cfg.sigma_n2 * eye
        try:
            x = scipy.linalg.solve(A, yk, assume_a="her")
        except (scipy.linalg.LinAlgError, ValueError):
            reg = 1e-12 * max(np.real(np.trace(A)) / cfg.M, 1e-300)
            x = scipy.linalg.solve(A + reg * eye, yk, assume_a="her")
        H[i] = np.conj(sk) * (R_h[i] @ x)
    return EstimateReport(h_up=H, seconds=time.perf_counter() - t0)


def dl_ls(obs: DownlinkObservation, tau, theta, cfg: SystemConfig) -> EstimateReport:
    """Linear LS for ``rho_l = alpha_l^dl exp(j phi_l^dl)`` given delays and angles."""
    _check_downlink(obs, cfg)
    t0 = time.perf_counter()
    tau, theta = np.asarray(tau, float), np.asarray(theta, float)
    L = tau.size
    Bt = build_B(np.ones(L), tau, theta, cfg, obs.S)
    report = EstimateReport()
    _identifiability(Bt, cfg, report, L)
    rho = lstsq(Bt, obs.y)
    alpha_dl, phi_dl = np.abs(rho), wrap_phase(np.angle(rho))
    est = PathParams.sorted_by_delay(alpha_dl, tau, theta, phi_dl=phi_dl)
    report.params, report.rho, report.alpha_dl = est, rho, alpha_dl
    report.h_dl = downlink_channels(est, cfg, _all_k(cfg), _full_array(cfg))
    r = obs.y - Bt @ rho
    report.objective = float(np.vdot(r, r).real)
    report.trace = [report.objective]
    report.seconds = time.perf_counter() - t0
    return report


def full_reciprocity(est_up: EstimateReport, mode: str, cfg: SystemConfig) -> EstimateReport:
    """Downlink channel from uplink parameters alone.

    ``copy_phase`` reuses ``phi_up``; ``delay_phase`` sets
    ``phi_dl = 2 pi f_dl tau``.
    """
    t0 = time.perf_counter()
    x = est_up.params
    if x is None:
        raise ValueError("uplink report carries no path parameters")
    if mode == "copy_phase":
        phi_dl = x.phi_up
    elif mode == "delay_phase":
        phi_dl = wrap_phase(TWO_PI * cfg.f_dl_hz * x.tau)
    else:
        raise ValueError("mode must be 'copy_phase' or 'delay_phase'")
    est = x.replace(phi_dl=phi_dl)
    return EstimateReport(params=est, h_dl=downlink_channels(est, cfg, _all_k(cfg), _full_array(cfg)),
                          seconds=time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# modified R2F2
# ---------------------------------------------------------------------------

def _r2f2_blocks(u, a_ref, Ts):
    """Natural parameters from the solver's scaled variables."""
    a, t, th, ph = u
    return a * a_ref, t * Ts, th, ph


def _project(block, v):
    if block in (0, 1):
        return np.maximum(v, 0.0)
    return wrap_phase(v)


def _r2f2_uplink(obs: UplinkObservation, cfg: SystemConfig, dcfg: DescentConfig, rng,
                 tau_init_max: float):
    Y, s, ks = obs.blocks, obs.pilots, obs.subcarriers
    norm = max(float(np.vdot(obs.y, obs.y).real), np.finfo(float).tiny)
    R, L = dcfg.restarts, cfg.L
    a_ref = math.sqrt(norm / (np.mean(np.abs(s) ** 2) * cfg.M * len(ks) * L))
    Ts = cfg.Ts
    u = [rng.uniform(0, 2, (R, L)), rng.uniform(0, tau_init_max / Ts, (R, L)),
         rng.uniform(0, TWO_PI, (R, L)), rng.uniform(0, TWO_PI, (R, L))]
    scale = (a_ref, Ts, 1.0, 1.0)
    steps = np.tile(np.asarray(dcfg.block_lr, float), (R, 1))

    def value(uu, grad=False):
        J, g = _uplink_value_and_grad(*_r2f2_blocks(uu, a_ref, Ts), Y, s, cfg, ks, grad)
        if not grad:
            return J / norm, None
        return J / norm, [gi * sc / norm for gi, sc in zip(g, scale)]

    stop = _Stopper(R, dcfg.epsilon, dcfg.patience)
    J, _ = value(u)
    stop.record(J * norm)
    for _ in range(dcfg.max_iters):
        if not stop.active.any():
            break
        for b in range(4):
            _, g = value(u, grad=True)
            pending = stop.active.copy()
            for _try in range(40):
                if not pending.any():
                    break
                cand = list(u)
                cand[b] = np.where(pending[:, None],
                                   _project(b, u[b] - steps[:, b:b + 1] * g[b]), u[b])
                Jc, _ = value(cand)
                ok = pending & (Jc <= J)
                u[b] = np.where(ok[:, None], cand[b], u[b])
                J = np.where(ok, Jc, J)
                steps[ok, b] *= 1.5
                bad = pending & ~ok
                steps[bad, b] *= 0.5
                pending = bad
        stop.record(J * norm)
        stop.tick()
    return _r2f2_blocks(u, a_ref, Ts), stop


def modified_r2f2(obs_up: UplinkObservation, obs_dl: DownlinkObservation, cfg: SystemConfig,
                  dcfg: DescentConfig = R2F2_DEFAULT, rng=None,
                  dl_cfg: DescentConfig = DL_PHASE_DEFAULT,
                  tau_init_max: float = 100e-9) -> EstimateReport:
    """Box-constrained block-coordinate LS on the raw parameters, then downlink phases.

    Each cycle takes one projected gradient step per block (gains, delays,
    angles, phases). Per-block steps adapt: they grow by 1.5x after an
    accepted step and are halved until the objective does not increase,
    so the objective is non-increasing across cycles by construction.
    """
    _check_uplink(obs_up, cfg)
    t0 = time.perf_counter()
    rng = make_rng(dcfg.seed) if rng is None else rng
    (alpha, tau, theta, phi), stop = _r2f2_uplink(obs_up, cfg, dcfg, rng, tau_init_max)
    finals = stop.best
    if not np.any(np.isfinite(finals)):
        raise EstimationError("every restart produced a non-finite objective")
    r = int(np.nanargmin(finals))
    # the solver state is the last accepted iterate, which is also the best one
    up = PathParams.sorted_by_delay(alpha[r], tau[r], theta[r], phi[r])
    dl = dl_phase_estimate(obs_dl, up.alpha, up.tau, up.theta, cfg, dl_cfg, rng=rng)
    est = up.replace(phi_dl=dl.params.phi_dl)
    return EstimateReport(
        params=est, h_up=uplink_channels(est, cfg, _all_k(cfg)), h_dl=dl.h_dl,
        trace=stop.traces[r], iterations=int(stop.iters[r]),
        seconds=time.perf_counter() - t0, restart=r,
        restart_objectives=[float(f) for f in finals], objective=float(finals[r]),
        flags=dl.flags, warnings=dl.warnings)
