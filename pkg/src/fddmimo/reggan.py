"""Mode-regularized GAN: generator, encoder and discriminator trained jointly.

Losses, with ``x_r = G(E(x))`` the autoencoded sample::

    T_D = mean log D(x) + mean log(1 - D(G(z)))                      (ascended)
    T_G = -mean log D(G(z)) + mean[l1 ||x - x_r||^2 + l2 log D(x_r)] (descended)
    T_E =                     mean[l1 ||x - x_r||^2 + l2 log D(x_r)] (descended)

Each training epoch updates D, then G, then E, drawing a fresh minibatch of
data and latent samples before every update. Discriminator outputs are
clamped to ``[1e-7, 1 - 1e-7]`` inside the logarithms.
"""
import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial.distance import pdist

from .dataset import Dataset, FeatureScaler
from .linalg import child_rng
from .nn import AdamState, Mlp

__all__ = ["GanConfig", "GanModel", "TrainingDivergedError", "loss_D", "loss_G", "loss_E",
           "train", "diagnostics", "save_checkpoint", "load_checkpoint", "write_history_csv"]

D_CLAMP = 1e-7
HISTORY_FIELDS = ("epoch", "T_D", "T_G", "T_E", "d_accuracy")


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class GanConfig:
    d: int = 8
    n: int = 15
    gen_widths: Tuple[int, ...] = (10, 12, 14)
    enc_widths: Tuple[int, ...] = (14, 12, 10)
    disc_widths: Tuple[int, ...] = (12, 8, 4, 2)
    batch_size: int = 256
    epochs: int = 3000
    lr: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    lambda1: float = 1e-2
    lambda2: float = 1e-2
    dropout: float = 0.2
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.d > self.n:
            raise ValueError("latent dimension d must not exceed feature dimension n")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("regularizer weights must be nonnegative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be positive and epochs nonnegative")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("gen_widths", "enc_widths", "disc_widths", "betas"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GanConfig":
        d = dict(d)
        for k in ("gen_widths", "enc_widths", "disc_widths", "betas"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class GanModel:
    G: Mlp
    D: Mlp
    E: Mlp
    config: GanConfig
    scaler: Optional[FeatureScaler] = None
    history: List[Dict[str, float]] = field(default_factory=list)

    @classmethod
    def init(cls, cfg: GanConfig, rng: np.random.Generator, scaler=None) -> "GanModel":
        G = Mlp.build([cfg.d, *cfg.gen_widths, cfg.n], rng, output_activation="tanh",
                      dropout=cfg.dropout)
        E = Mlp.build([cfg.n, *cfg.enc_widths, cfg.d], rng, output_activation="identity",
                      dropout=cfg.dropout)
        D = Mlp.build([cfg.n, *cfg.disc_widths, 1], rng, output_activation="sigmoid",
                      dropout=cfg.dropout)
        return cls(G, D, E, cfg, scaler)

    @property
    def d(self) -> int:
        return self.G.n_in

    @property
    def n(self) -> int:
        return self.G.n_out

    def generate(self, z) -> np.ndarray:
        """Scaled feature vectors ``G(z)`` (evaluation mode)."""
        return self.G(z)

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        return self.generate(rng.standard_normal((count, self.d)))


# ---------------------------------------------------------------------------
# losses and their gradients
# ---------------------------------------------------------------------------

def _log_clamped(p):
    c = np.clip(p, D_CLAMP, 1.0 - D_CLAMP)
    return np.log(c), (c == p)


def _d_step(model: GanModel, x, z, mode, rng):
    """``T_D`` and the gradient of ``-T_D`` with respect to D's parameters."""
    G, D = model.G, model.D
    m_real, m_fake = len(x), len(z)
    xg, _ = G.forward(z, mode, rng)
    d_real, c_real = D.forward(x, mode, rng)
    d_fake, c_fake = D.forward(xg, mode, rng)
    lr_, ok_r = _log_clamped(d_real)
    lf_, ok_f = _log_clamped(1.0 - d_fake)
    T = lr_.mean() + lf_.mean()
    g_real = np.where(ok_r, -1.0 / np.clip(d_real, D_CLAMP, None), 0.0) / m_real
    g_fake = np.where(ok_f, 1.0 / np.clip(1.0 - d_fake, D_CLAMP, None), 0.0) / m_fake
    grads_r, _ = D.backward(c_real, g_real)
    grads_f, _ = D.backward(c_fake, g_fake)
    acc = 0.5 * (np.mean(d_real > 0.5) + np.mean(d_fake < 0.5))
    return T, [a + b for a, b in zip(grads_r, grads_f)], acc


def _reg_terms(model: GanModel, x, lam1, lam2, mode, rng):
    """Regulariser value and the upstream gradient at ``x_r = G(E(x))``."""
    G, D, E = model.G, model.D, model.E
    m = len(x)
    zr, c_e = E.forward(x, mode, rng)
    xr, c_g = G.forward(zr, mode, rng)
    dr, c_d = D.forward(xr, mode, rng)
    log_dr, ok = _log_clamped(dr)
    diff = xr - x
    value = lam1 * np.mean(np.sum(diff ** 2, axis=1)) + lam2 * log_dr.mean()
    g_dr = lam2 * np.where(ok, 1.0 / np.clip(dr, D_CLAMP, None), 0.0) / m
    _, g_xr = D.backward(c_d, g_dr)
    g_xr = g_xr + lam1 * 2.0 * diff / m
    return value, g_xr, c_g, c_e


def _g_step(model: GanModel, x, z, lam1, lam2, mode, rng):
    G, D = model.G, model.D
    m = len(z)
    xg, c_g1 = G.forward(z, mode, rng)
    df, c_d = D.forward(xg, mode, rng)
    log_df, ok = _log_clamped(df)
    adv = -log_df.mean()
    g_df = np.where(ok, -1.0 / np.clip(df, D_CLAMP, None), 0.0) / m
    _, g_xg = D.backward(c_d, g_df)
    grads, _ = G.backward(c_g1, g_xg)
    if lam1 == 0 and lam2 == 0:
        return adv, grads
    reg, g_xr, c_g2, _ = _reg_terms(model, x, lam1, lam2, mode, rng)
    grads2, _ = G.backward(c_g2, g_xr)
    return adv + reg, [a + b for a, b in zip(grads, grads2)]


def _e_step(model: GanModel, x, lam1, lam2, mode, rng):
    reg, g_xr, c_g, c_e = _reg_terms(model, x, lam1, lam2, mode, rng)
    _, g_zr = model.G.backward(c_g, g_xr)
    grads, _ = model.E.backward(c_e, g_zr)
    return reg, grads


def loss_D(model: GanModel, x, z, mode: str = "eval", rng=None) -> float:
    return float(_d_step(model, np.atleast_2d(x), np.atleast_2d(z), mode, rng)[0])


def loss_G(model: GanModel, x, z, lambda1: float, lambda2: float,
           mode: str = "eval", rng=None) -> float:
    return float(_g_step(model, np.atleast_2d(x), np.atleast_2d(z), lambda1, lambda2,
                         mode, rng)[0])


def loss_E(model: GanModel, x, lambda1: float, lambda2: float,
           mode: str = "eval", rng=None) -> float:
    return float(_e_step(model, np.atleast_2d(x), lambda1, lambda2, mode, rng)[0])


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _train_features(data) -> Tuple[np.ndarray, Optional[FeatureScaler]]:
    if isinstance(data, Dataset):
        return data.features("train"), data.scaler
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 2 or len(arr) == 0:
        raise ValueError("training data must be a nonempty (N, n) array")
    return arr, None


def train(data, cfg: GanConfig = GanConfig(),
          on_checkpoint: Optional[Callable[[GanModel, int], None]] = None) -> GanModel:
    """Train a Reg-GAN on a :class:`Dataset` train split or a raw feature array.

    ``on_checkpoint(model, epoch)`` is called every ``cfg.checkpoint_every``
    epochs when both are set.
    """
    X, scaler = _train_features(data)
    if X.shape[1] != cfg.n:
        raise ValueError(f"feature width {X.shape[1]} does not match config n={cfg.n}")
    rng = child_rng(cfg.seed, "gan")
    model = GanModel.init(cfg, rng, scaler)
    states = {name: AdamState(cfg.lr, tuple(cfg.betas)) for name in "DGE"}
    N, m = len(X), cfg.batch_size
    lam1, lam2 = cfg.lambda1, cfg.lambda2

    def batch():
        return X[rng.integers(0, N, m)], rng.standard_normal((m, cfg.d))

    for epoch in range(1, cfg.epochs + 1):
        x, z = batch()
        t_d, grads, acc = _d_step(model, x, z, "train", rng)
        model.D.step(grads, states["D"])

        x, z = batch()
        t_g, grads = _g_step(model, x, z, lam1, lam2, "train", rng)
        model.G.step(grads, states["G"])

        x, _ = batch()
        if lam1 or lam2:
            t_e, grads = _e_step(model, x, lam1, lam2, "train", rng)
            model.E.step(grads, states["E"])
        else:
            t_e = 0.0

        if not (np.isfinite(t_d) and np.isfinite(t_g) and np.isfinite(t_e)):
            raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
        model.history.append({"epoch": epoch, "T_D": float(t_d), "T_G": float(t_g),
                              "T_E": float(t_e), "d_accuracy": float(acc)})
        if on_checkpoint and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            on_checkpoint(model, epoch)
    return model


def diagnostics(model: GanModel, data, n_samples: int = 1000, bins: int = 20,
                rng: Optional[np.random.Generator] = None) -> dict:
    """Realism and diversity summary of a trained model.

    ``data`` is a :class:`Dataset` (its test split is used) or an array of
    held-out feature vectors. Returns the discriminator's real-vs-fake
    accuracy, the mean pairwise L2 distance among ``n_samples`` generated
    vectors (zero for a fully collapsed generator) and per-feature
    histograms over [-1, 1].
    """
    if rng is None:
        rng = child_rng(model.config.seed, "diagnostics")
    real = data.features("test") if isinstance(data, Dataset) else np.asarray(data, float)
    fake = model.sample(n_samples, rng)
    d_real, d_fake = model.D(real)[:, 0], model.D(fake)[:, 0]
    correct = np.sum(d_real > 0.5) + np.sum(d_fake < 0.5)
    accuracy = float(correct / (len(real) + len(fake)))
    spread = float(np.mean(pdist(fake))) if n_samples > 1 else 0.0
    edges = np.linspace(-1.0, 1.0, bins + 1)
    hists = [np.histogram(np.clip(fake[:, j], -1.0, 1.0), bins=edges)[0]
             for j in range(fake.shape[1])]
    return {"d_accuracy": accuracy, "mean_pairwise_distance": spread,
            "histogram_edges": edges, "histograms": np.array(hists), "n_samples": n_samples}


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_checkpoint(model: GanModel, path) -> None:
    doc = {"format": "fddmimo-reggan/1", "config": model.config.to_dict(),
           "config_hash": model.config.hash(),
           "scaler": None if model.scaler is None else model.scaler.to_dict(),
           "G": model.G.to_dict(), "D": model.D.to_dict(), "E": model.E.to_dict(),
           "epochs_trained": len(model.history)}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc))


def load_checkpoint(path) -> GanModel:
    doc = json.loads(Path(path).read_text())
    cfg = GanConfig.from_dict(doc["config"])
    if doc.get("config_hash") not in (None, cfg.hash()):
        raise ValueError(f"{path}: config hash mismatch")
    scaler = None if doc.get("scaler") is None else FeatureScaler.from_dict(doc["scaler"])
    return GanModel(Mlp.from_dict(doc["G"]), Mlp.from_dict(doc["D"]), Mlp.from_dict(doc["E"]),
                    cfg, scaler)


def write_history_csv(model: GanModel, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in model.history:
            w.writerow({k: (row[k] if k == "epoch" else repr(row[k])) for k in HISTORY_FIELDS})
