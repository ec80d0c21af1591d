"""Geometric OFDM multipath channel, pilot observations and LS objectives.

Conventions
-----------
* Subcarrier indices ``k`` and antenna indices ``m`` are 1-based, exactly as
  they appear in the delay phase ``2*pi*k/K * tau * B`` and in the steering
  phase ``2*pi/lambda * d_bar * (m - 1) * sin(theta)``.
* The array response ignores the subcarrier offset: one wavelength per link
  direction (``c / f_up`` and ``c / f_dl``).
* Carrier phase ``2*pi*f_c*tau`` is part of the per-path phase ``phi``.

The private ``_*`` kernels accept arbitrary leading batch dimensions on the
path parameters, which is how the estimators run several restarts at once.
"""
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "SPEED_OF_LIGHT", "TWO_PI", "thermal_noise_power", "SystemConfig", "PathParams",
    "UplinkObservation", "DownlinkObservation", "wrap_phase", "array_response",
    "uplink_channel", "downlink_channel", "uplink_channels", "downlink_channels",
    "make_downlink_pilots", "synth_uplink", "synth_downlink", "build_B",
    "uplink_objective", "grad_uplink_objective", "dl_phase_objective",
    "grad_dl_phase_objective",
]

SPEED_OF_LIGHT = 299_792_458.0
TWO_PI = 2.0 * np.pi


def thermal_noise_power(bandwidth_hz: float, density_dbm_hz: float = -174.0) -> float:
    """Noise power in watts for a flat density (dBm/Hz) over ``bandwidth_hz``."""
    return 10.0 ** ((density_dbm_hz - 30.0) / 10.0) * bandwidth_hz


def _index_tuple(values, upper: int, name: str) -> Tuple[int, ...]:
    out = tuple(sorted(int(v) for v in values))
    if not out:
        raise ValueError(f"{name} must be nonempty")
    if len(set(out)) != len(out):
        raise ValueError(f"{name} has duplicate entries")
    if out[0] < 1 or out[-1] > upper:
        raise ValueError(f"{name} must lie in 1..{upper}")
    return out


@dataclass(frozen=True)
class SystemConfig:
    """Radio constants of one single-cell, single-user FDD link.

    ``d_bar`` defaults to half the downlink wavelength and ``sigma_n2`` to
    thermal noise (-174 dBm/Hz) over ``B_hz``. ``K_up``, ``K_dl`` default to
    all subcarriers and ``M_dl`` to all antennas.
    """

    M: int = 64
    K: int = 16
    B_hz: float = 20e6
    f_up_hz: float = 2.4e9
    f_dl_hz: float = 2.5e9
    d_bar: Optional[float] = None
    P_T: float = 1.0
    sigma_n2: Optional[float] = None
    K_up: Optional[Sequence[int]] = None
    K_dl: Optional[Sequence[int]] = None
    M_dl: Optional[Sequence[int]] = None
    p: int = 16
    L: int = 5

    def __post_init__(self):
        if self.M < 1 or self.K < 1 or self.L < 1:
            raise ValueError("M, K and L must be positive")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.P_T <= 0:
            raise ValueError("P_T must be positive")
        if self.B_hz <= 0 or self.f_up_hz <= 0 or self.f_dl_hz <= 0:
            raise ValueError("bandwidth and carrier frequencies must be positive")
        if self.f_up_hz == self.f_dl_hz:
            raise ValueError("FDD requires f_up_hz != f_dl_hz")
        set_ = object.__setattr__
        if self.d_bar is None:
            set_(self, "d_bar", 0.5 * SPEED_OF_LIGHT / self.f_dl_hz)
        if self.sigma_n2 is None:
            set_(self, "sigma_n2", thermal_noise_power(self.B_hz))
        if self.sigma_n2 < 0:
            raise ValueError("sigma_n2 must be >= 0")
        full_k = range(1, self.K + 1)
        set_(self, "K_up", _index_tuple(full_k if self.K_up is None else self.K_up, self.K, "K_up"))
        set_(self, "K_dl", _index_tuple(full_k if self.K_dl is None else self.K_dl, self.K, "K_dl"))
        set_(self, "M_dl", _index_tuple(range(1, self.M + 1) if self.M_dl is None else self.M_dl,
                                        self.M, "M_dl"))

    @property
    def lambda_up(self) -> float:
        return SPEED_OF_LIGHT / self.f_up_hz

    @property
    def lambda_dl(self) -> float:
        return SPEED_OF_LIGHT / self.f_dl_hz

    @property
    def Ts(self) -> float:
        return 1.0 / self.B_hz

    def with_(self, **changes) -> "SystemConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class PathParams:
    """Per-path gains, delays (s), angles (rad) and up/down phases (rad)."""

    alpha: np.ndarray
    tau: np.ndarray
    theta: np.ndarray
    phi_up: np.ndarray
    phi_dl: np.ndarray

    def __post_init__(self):
        for name in ("alpha", "tau", "theta", "phi_up", "phi_dl"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        L = self.alpha.size
        if L == 0:
            raise ValueError("at least one path is required")
        if any(getattr(self, n).size != L for n in ("tau", "theta", "phi_up", "phi_dl")):
            raise ValueError("all path parameter vectors must have the same length")
        if not all(np.all(np.isfinite(getattr(self, n)))
                   for n in ("alpha", "tau", "theta", "phi_up", "phi_dl")):
            raise ValueError("path parameters must be finite")
        if np.any(self.alpha < 0) or np.any(self.tau < 0):
            raise ValueError("alpha and tau must be nonnegative")
        if np.any(np.diff(self.tau) < 0):
            raise ValueError("paths must be sorted by ascending delay")

    @property
    def L(self) -> int:
        return self.alpha.size

    @classmethod
    def sorted_by_delay(cls, alpha, tau, theta, phi_up=None, phi_dl=None) -> "PathParams":
        """Build a record after permuting all paths into ascending delay."""
        tau = np.asarray(tau, dtype=float)
        zeros = np.zeros_like(tau)
        order = np.argsort(tau, kind="stable")
        pick = lambda v: np.asarray(zeros if v is None else v, dtype=float)[order]
        return cls(pick(alpha), tau[order], pick(theta), pick(phi_up), pick(phi_dl))

    def replace(self, **changes) -> "PathParams":
        return replace(self, **changes)

    def __eq__(self, other):
        if not isinstance(other, PathParams):
            return NotImplemented
        return all(np.array_equal(getattr(self, n), getattr(other, n))
                   for n in ("alpha", "tau", "theta", "phi_up", "phi_dl"))

    __hash__ = None


@dataclass(frozen=True)
class UplinkObservation:
    """Stacked uplink pilots: ``y`` holds one M-block per subcarrier in ``subcarriers``."""

    y: np.ndarray
    pilots: np.ndarray
    subcarriers: Tuple[int, ...]
    M: int

    @property
    def blocks(self) -> np.ndarray:
        return self.y.reshape(len(self.subcarriers), self.M)


@dataclass(frozen=True)
class DownlinkObservation:
    """Stacked downlink pilots: ``y`` holds one p-block per subcarrier.

    ``S`` has shape ``(|K_dl|, p, |M_dl|)``; row ``i`` of ``S[k]`` is the
    symbol vector sent in slot ``i``.
    """

    y: np.ndarray
    S: np.ndarray
    subcarriers: Tuple[int, ...]
    antennas: Tuple[int, ...]

    @property
    def p(self) -> int:
        return self.S.shape[1]

    @property
    def blocks(self) -> np.ndarray:
        return self.y.reshape(len(self.subcarriers), self.p)


def wrap_phase(phi):
    """Map angles to [0, 2*pi)."""
    out = np.mod(phi, TWO_PI)
    # fmod can round up to exactly 2*pi for tiny negative inputs
    return np.where(out >= TWO_PI, 0.0, out)


# ---------------------------------------------------------------------------
# batched kernels
# ---------------------------------------------------------------------------

def _steering(theta, lam: float, d_bar: float, antennas) -> np.ndarray:
    """Steering matrix, shape ``theta.shape[:-1] + (len(antennas), L)``."""
    m0 = np.asarray(antennas, dtype=float) - 1.0
    gamma = TWO_PI / lam * d_bar * m0
    return np.exp(1j * gamma[:, None] * np.sin(theta)[..., None, :])


def _delay_phasors(tau, phi, subcarriers, cfg: SystemConfig) -> np.ndarray:
    """``exp(j(phi + 2 pi k/K tau B))``, shape ``tau.shape[:-1] + (nk, L)``."""
    beta = TWO_PI * np.asarray(subcarriers, dtype=float) / cfg.K * cfg.B_hz
    return np.exp(1j * (phi[..., None, :] + beta[:, None] * tau[..., None, :]))


def _channels(alpha, tau, theta, phi, cfg, subcarriers, antennas, lam) -> np.ndarray:
    """Channel vectors, shape ``batch + (nk, len(antennas))``."""
    P = alpha[..., None, :] * _delay_phasors(tau, phi, subcarriers, cfg)
    A = _steering(theta, lam, cfg.d_bar, antennas)
    return P @ np.swapaxes(A, -1, -2)


def _as_arrays(x):
    if isinstance(x, PathParams):
        return x.alpha, x.tau, x.theta, x.phi_up
    alpha, tau, theta, phi = x
    return (np.asarray(alpha, float), np.asarray(tau, float),
            np.asarray(theta, float), np.asarray(phi, float))


def _uplink_value_and_grad(alpha, tau, theta, phi, Y, s, cfg, subcarriers, want_grad=True):
    """Objective ``||y - A(x)||^2`` and its real gradient, batched.

    ``Y`` is ``(nk, M)``, ``s`` is ``(nk,)``. Returns ``J`` with the batch
    shape and, if requested, gradients ``(dalpha, dtau, dtheta, dphi)`` each
    with shape ``batch + (L,)``.

    With ``W = conj(r) s``, ``dJ/dp = -2 Re sum_{k,m} W dh/dp`` and the
    per-path derivatives of ``h_m`` are ``e^{jw}``, ``j beta alpha e^{jw}``,
    ``j gamma_m alpha cos(theta) e^{jw}`` and ``j alpha e^{jw}``.
    """
    P = _delay_phasors(tau, phi, subcarriers, cfg)
    A = _steering(theta, cfg.lambda_up, cfg.d_bar, range(1, cfg.M + 1))
    h = (alpha[..., None, :] * P) @ np.swapaxes(A, -1, -2)
    r = Y - s[:, None] * h
    J = np.sum(r.real ** 2 + r.imag ** 2, axis=(-2, -1))
    if not want_grad:
        return J, None
    W = np.conj(r) * s[:, None]
    gamma = TWO_PI / cfg.lambda_up * cfg.d_bar * np.arange(cfg.M, dtype=float)
    T0 = P * (W @ A)
    Tg = P * (W @ (A * gamma[:, None]))
    beta = TWO_PI * np.asarray(subcarriers, dtype=float) / cfg.K * cfg.B_hz
    S0 = T0.sum(axis=-2)
    d_alpha = -2.0 * S0.real
    d_phi = 2.0 * alpha * S0.imag
    d_tau = 2.0 * alpha * (beta @ T0).imag
    d_theta = 2.0 * alpha * np.cos(theta) * Tg.sum(axis=-2).imag
    return J, (d_alpha, d_tau, d_theta, d_phi)


def _dl_value_and_grad(phi, Bmat, y, want_grad=True):
    g = np.exp(1j * phi)
    r = y - g @ Bmat.T
    J = np.sum(r.real ** 2 + r.imag ** 2, axis=-1)
    if not want_grad:
        return J, None
    c = np.conj(r) @ Bmat
    return J, 2.0 * (g * c).imag


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def array_response(theta_l: float, lam: float, antennas, d_bar: float) -> np.ndarray:
    """Steering vector of one path over the (1-based, sorted) ``antennas``."""
    antennas = list(antennas)
    if not antennas:
        raise ValueError("antennas must be nonempty")
    if any(b <= a for a, b in zip(antennas, antennas[1:])):
        raise ValueError("antennas must be sorted and distinct")
    return _steering(np.array([theta_l], dtype=float), lam, d_bar, antennas)[:, 0]


def uplink_channels(x: PathParams, cfg: SystemConfig, subcarriers=None) -> np.ndarray:
    """Uplink channels, shape ``(len(subcarriers), M)``; defaults to ``cfg.K_up``."""
    ks = cfg.K_up if subcarriers is None else tuple(subcarriers)
    return _channels(x.alpha, x.tau, x.theta, x.phi_up, cfg, ks,
                     range(1, cfg.M + 1), cfg.lambda_up)


def downlink_channels(x: PathParams, cfg: SystemConfig, subcarriers=None,
                      antennas=None) -> np.ndarray:
    """Downlink channels, shape ``(len(subcarriers), len(antennas))``.

    Defaults to ``cfg.K_dl`` and the training antennas ``cfg.M_dl``; pass
    ``antennas=range(1, M + 1)`` for the full-array channel.
    """
    ks = cfg.K_dl if subcarriers is None else tuple(subcarriers)
    ants = cfg.M_dl if antennas is None else tuple(antennas)
    return _channels(x.alpha, x.tau, x.theta, x.phi_dl, cfg, ks, ants, cfg.lambda_dl)


def uplink_channel(x: PathParams, cfg: SystemConfig, k: int) -> np.ndarray:
    if not 1 <= k <= cfg.K:
        raise ValueError(f"subcarrier {k} outside 1..{cfg.K}")
    return uplink_channels(x, cfg, (k,))[0]


def downlink_channel(x: PathParams, cfg: SystemConfig, k: int, antennas=None) -> np.ndarray:
    if not 1 <= k <= cfg.K:
        raise ValueError(f"subcarrier {k} outside 1..{cfg.K}")
    return downlink_channels(x, cfg, (k,), antennas)[0]


def _complex_noise(rng, shape, var) -> np.ndarray:
    if var == 0:
        return np.zeros(shape, dtype=complex)
    return np.sqrt(var / 2.0) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def make_downlink_pilots(cfg: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    """QPSK pilot matrices, shape ``(|K_dl|, p, |M_dl|)``, rows of norm^2 ``P_T``."""
    n_ant = len(cfg.M_dl)
    q = rng.integers(0, 4, size=(len(cfg.K_dl), cfg.p, n_ant))
    return np.sqrt(cfg.P_T / n_ant) * np.exp(1j * (np.pi / 4 + np.pi / 2 * q))


def synth_uplink(x: PathParams, cfg: SystemConfig, rng: np.random.Generator,
                 pilots=None) -> UplinkObservation:
    """``y_k = h_k s_k + n_k`` for ``k`` in ``K_up`` with ``s_k = sqrt(P_T)`` by default."""
    ks = cfg.K_up
    s = (np.full(len(ks), np.sqrt(cfg.P_T), dtype=complex) if pilots is None
         else np.asarray(pilots, dtype=complex))
    if s.shape != (len(ks),):
        raise ValueError("one uplink pilot per subcarrier in K_up is required")
    H = uplink_channels(x, cfg)
    Y = H * s[:, None] + _complex_noise(rng, H.shape, cfg.sigma_n2)
    return UplinkObservation(Y.reshape(-1), s, ks, cfg.M)


def synth_downlink(x: PathParams, cfg: SystemConfig, rng: np.random.Generator,
                   S=None) -> DownlinkObservation:
    """``y_k = S_k h_k + n_k`` stacked over ``K_dl``.

    ``S`` defaults to fresh QPSK pilots drawn from ``rng`` before the noise.
    """
    if S is None:
        S = make_downlink_pilots(cfg, rng)
    S = np.asarray(S, dtype=complex)
    expected = (len(cfg.K_dl), cfg.p, len(cfg.M_dl))
    if S.shape != expected:
        raise ValueError(f"pilot array must have shape {expected}, got {S.shape}")
    row_pow = np.sum(np.abs(S) ** 2, axis=-1)
    if not np.allclose(row_pow, cfg.P_T, rtol=1e-9, atol=0):
        raise ValueError("every downlink pilot row must have squared norm P_T")
    H = downlink_channels(x, cfg)
    Y = np.einsum("kim,km->ki", S, H) + _complex_noise(rng, (len(cfg.K_dl), cfg.p), cfg.sigma_n2)
    return DownlinkObservation(Y.reshape(-1), S, cfg.K_dl, cfg.M_dl)


def build_B(alpha, tau, theta, cfg: SystemConfig, S) -> np.ndarray:
    """Downlink measurement matrix, shape ``(p*|K_dl|, L)``.

    Column ``l`` of block ``k`` is ``S_k gamma_l^k b(theta_l)``, so that
    ``B @ exp(1j*phi_dl)`` is the noiseless stacked downlink signal.
    """
    alpha = np.asarray(alpha, float)
    tau = np.asarray(tau, float)
    theta = np.asarray(theta, float)
    S = np.asarray(S, dtype=complex)
    gam = alpha[None, :] * _delay_phasors(tau, np.zeros_like(tau), cfg.K_dl, cfg)
    b = _steering(theta, cfg.lambda_dl, cfg.d_bar, cfg.M_dl)
    blocks = np.einsum("kim,ml,kl->kil", S, b, gam)
    return blocks.reshape(-1, alpha.size)


def uplink_objective(x, obs: UplinkObservation, cfg: SystemConfig) -> float:
    alpha, tau, theta, phi = _as_arrays(x)
    J, _ = _uplink_value_and_grad(alpha, tau, theta, phi, obs.blocks, obs.pilots, cfg,
                                  obs.subcarriers, want_grad=False)
    return float(J)


def grad_uplink_objective(x, obs: UplinkObservation, cfg: SystemConfig):
    """``J_up`` and its gradient stacked as ``[d_alpha, d_tau, d_theta, d_phi_up]``.

    ``x`` is a :class:`PathParams` (its ``phi_up`` is used) or a tuple
    ``(alpha, tau, theta, phi_up)``.
    """
    alpha, tau, theta, phi = _as_arrays(x)
    J, grads = _uplink_value_and_grad(alpha, tau, theta, phi, obs.blocks, obs.pilots, cfg,
                                      obs.subcarriers)
    return float(J), np.concatenate(grads)


def dl_phase_objective(phi_dl, Bmat, y) -> float:
    return float(_dl_value_and_grad(np.asarray(phi_dl, float), Bmat, y, want_grad=False)[0])


def grad_dl_phase_objective(phi_dl, Bmat, y):
    """``J_dl(phi) = ||y - B exp(j phi)||^2`` and its gradient in ``phi``."""
    phi_dl = np.asarray(phi_dl, float)
    Bmat = np.atleast_2d(Bmat)
    if Bmat.shape[1] != phi_dl.shape[-1]:
        raise ValueError("B must have one column per path")
    J, g = _dl_value_and_grad(phi_dl, Bmat, np.asarray(y, complex))
    return float(J), g
