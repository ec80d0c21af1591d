"""Channel-estimate quality metrics: NMSE, MRT rate and QPSK symbol error rate.

All functions take per-subcarrier channel matrices of shape ``(K, M)``:
row ``k`` is the true (or estimated) channel on one subcarrier.
"""
import numpy as np
from scipy.special import erfc

from .channel import wrap_phase

__all__ = ["nmse", "nmse_db", "rate", "ser_qpsk", "qpsk_ser_theory", "inject_feedback_error"]

_QPSK = np.exp(1j * (np.pi / 4 + np.pi / 2 * np.arange(4)))


def _pair(h_true, h_est):
    h = np.atleast_2d(np.asarray(h_true, dtype=complex))
    he = np.atleast_2d(np.asarray(h_est, dtype=complex))
    if h.shape != he.shape:
        raise ValueError(f"channel shapes differ: {h.shape} vs {he.shape}")
    return h, he


def nmse(h_true, h_est) -> float:
    """``(1/K) sum_k ||h_k - h_est_k||^2 / ||h_k||^2`` (linear)."""
    h, he = _pair(h_true, h_est)
    power = np.sum(np.abs(h) ** 2, axis=1)
    if np.any(power == 0):
        raise ValueError("true channel has zero norm on some subcarrier")
    return float(np.mean(np.sum(np.abs(h - he) ** 2, axis=1) / power))


def nmse_db(h_true, h_est) -> float:
    """NMSE in dB; an exact estimate gives ``-inf``."""
    with np.errstate(divide="ignore"):
        return float(10.0 * np.log10(nmse(h_true, h_est)))


def _mrt_gains(h, he):
    """Effective gains ``h^H w`` and ``h_est^H w`` with ``w = h_est / ||h_est||``.

    Subcarriers with ``h_est = 0`` get ``w = 0``.
    """
    norm = np.linalg.norm(he, axis=1)
    safe = np.where(norm > 0, norm, 1.0)
    w = he / safe[:, None]
    w[norm == 0] = 0.0
    return np.sum(h.conj() * w, axis=1), norm


def rate(h_true, h_est, P_T: float, sigma_n2: float) -> float:
    """Mean ``log2(1 + P_T |h^H w|^2 / sigma^2)`` over subcarriers, MRT beam from ``h_est``."""
    if sigma_n2 <= 0:
        raise ValueError("rate needs a positive noise power")
    h, he = _pair(h_true, h_est)
    g, _ = _mrt_gains(h, he)
    return float(np.mean(np.log2(1.0 + P_T * np.abs(g) ** 2 / sigma_n2)))


def ser_qpsk(h_true, h_est, P_T: float, sigma_n2: float, trials: int,
             rng: np.random.Generator) -> float:
    """Monte-Carlo QPSK symbol error rate under MRT.

    Per subcarrier and trial: ``r = sqrt(P_T) h^H w s + n`` with
    ``n ~ CN(0, sigma^2)``; the receiver divides by the *estimated* gain
    ``sqrt(P_T) h_est^H w`` and picks the nearest QPSK point. Where
    ``h_est = 0`` there is nothing to equalise with and the decision is a
    uniform guess.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    h, he = _pair(h_true, h_est)
    g, g_hat = _mrt_gains(h, he)
    K = h.shape[0]
    sent = rng.integers(0, 4, size=(trials, K))
    noise = np.sqrt(sigma_n2 / 2.0) * (rng.standard_normal((trials, K))
                                       + 1j * rng.standard_normal((trials, K)))
    r = np.sqrt(P_T) * g[None, :] * _QPSK[sent] + noise
    guess = rng.integers(0, 4, size=(trials, K))
    eq = np.where(g_hat > 0, np.sqrt(P_T) * g_hat, 1.0)
    r = r / eq[None, :]
    # quadrant decision: nearest of exp(j(pi/4 + q pi/2))
    q = np.mod(np.floor(np.angle(r) / (np.pi / 2)), 4).astype(int)
    decided = np.where(g_hat[None, :] > 0, q, guess)
    return float(np.mean(decided != sent))


def qpsk_ser_theory(snr_linear) -> np.ndarray:
    """Exact QPSK SER on AWGN at symbol SNR ``Es/N0``: ``2Q(x) - Q(x)^2``, ``x = sqrt(snr)``."""
    Q = 0.5 * erfc(np.sqrt(np.asarray(snr_linear, dtype=float)) / np.sqrt(2.0))
    return 2.0 * Q - Q * Q


def inject_feedback_error(phi_dl, sigma_phi_deg: float, rng: np.random.Generator) -> np.ndarray:
    """``wrap(phi + eps)`` with ``eps ~ N(0, sigma^2)``, sigma given in degrees."""
    if sigma_phi_deg < 0:
        raise ValueError("sigma_phi_deg must be >= 0")
    phi = np.asarray(phi_dl, dtype=float)
    if sigma_phi_deg == 0:
        return wrap_phase(phi)
    return wrap_phase(phi + rng.normal(0.0, np.deg2rad(sigma_phi_deg), phi.shape))

