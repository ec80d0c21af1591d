"""Synthetic path-parameter populations, feature scaling and dataset files.

The generator stands in for a ray-traced indoor scenario. Users are drawn
from a handful of spatial zones inside a rectangular room; each user's paths
are the line-of-sight ray plus wall reflections (image method, up to second
order), keeping the ``L`` shortest. Per-path angle and delay jitter model
local scattering. The resulting (gain, delay, angle) triples live near a
low-dimensional, multi-modal manifold, which is what the GAN prior is meant
to capture.

File layout
-----------
``<name>.jsonl``
    one JSON object per line with keys ``alpha``, ``tau``, ``theta``,
    ``phi_up``, ``phi_dl`` (lists of ``L`` floats; seconds and radians).
``<name>.jsonl.meta.json``
    sidecar with ``L``, the train/test split, the fitted scaler and
    free-form provenance.
"""
import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .channel import SPEED_OF_LIGHT, TWO_PI, PathParams, wrap_phase
from .linalg import make_rng

__all__ = [
    "ScenarioSpec", "FeatureScaler", "Dataset", "DatasetFormatError", "generate",
    "downlink_gains", "to_features", "from_features", "save", "load", "import_csv",
]

FIELDS = ("alpha", "tau", "theta", "phi_up", "phi_dl")


class DatasetFormatError(ValueError):
    """Raised when a dataset file cannot be parsed."""


@dataclass(frozen=True)
class ScenarioSpec:
    L: int = 5
    user_count: int = 20000
    delay_spread_max: float = 94.5e-9
    cluster_count: int = 4
    cluster_radius: float = 0.8          # m, std of user positions around a zone centre
    angular_spread: float = 0.01         # rad, per-path AoA jitter
    delay_jitter: float = 0.5e-9         # s, per-path delay jitter
    gain_decay: float = 60e-9            # s, exponential power-delay decay constant
    reflection_loss_db: float = 6.0
    shadowing_db: float = 1.0
    alpha_dl_rel_err: float = 0.008
    room: Tuple[float, float] = (10.0, 10.0)
    bs_position: Tuple[float, float] = (5.0, 0.5)
    height_offset: float = 1.5           # m, BS height minus UE height
    carrier_hz: float = 2.4e9
    bandwidth_hz: float = 20e6
    seed: int = 0

    def validate(self):
        if self.L < 1 or self.user_count < 1 or self.cluster_count < 1:
            raise ValueError("L, user_count and cluster_count must be positive")
        for name in ("delay_spread_max", "cluster_radius", "angular_spread", "delay_jitter",
                     "gain_decay", "reflection_loss_db", "shadowing_db", "alpha_dl_rel_err"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")
        if self.delay_spread_max == 0 or self.gain_decay == 0:
            raise ValueError("delay_spread_max and gain_decay must be positive")
        W, D = self.room
        bx, by = self.bs_position
        if not (0 < bx < W and 0 < by < D):
            raise ValueError("base station must lie inside the room")


@dataclass
class FeatureScaler:
    """Per-block affine maps onto [-1, 1].

    Blocks are ``log10(alpha)``, ``tau / Ts``, ``theta`` and ``phi``; each
    maps ``t -> (t - offset) / scale``. The phase block is fixed to
    [0, 2*pi] and never enters the GAN.
    """

    Ts: float
    alpha: Tuple[float, float]
    tau: Tuple[float, float]
    theta: Tuple[float, float]
    phi: Tuple[float, float] = (math.pi, math.pi)

    @classmethod
    def fit(cls, alpha, tau, theta, Ts: float) -> "FeatureScaler":
        def span(t):
            lo, hi = float(np.min(t)), float(np.max(t))
            half = (hi - lo) / 2.0
            return (half if half > 0 else 1.0, (hi + lo) / 2.0)
        alpha = np.asarray(alpha, float)
        if np.any(alpha <= 0):
            raise ValueError("alpha must be strictly positive to take log10")
        return cls(Ts, span(np.log10(alpha)), span(np.asarray(tau) / Ts), span(theta))

    def _blocks(self):
        return self.alpha, self.tau, self.theta

    def forward(self, alpha, tau, theta) -> np.ndarray:
        alpha = np.asarray(alpha, float)
        if np.any(alpha <= 0):
            raise ValueError("alpha must be strictly positive to take log10")
        raw = (np.log10(alpha), np.asarray(tau, float) / self.Ts, np.asarray(theta, float))
        return np.concatenate([(t - off) / sc for t, (sc, off) in zip(raw, self._blocks())],
                              axis=-1)

    def inverse(self, v):
        """``(alpha, tau, theta)`` from features ``v`` of shape ``(..., 3L)``."""
        v = np.asarray(v, float)
        L = v.shape[-1] // 3
        a, t, th = (v[..., i * L:(i + 1) * L] * sc + off
                    for i, (sc, off) in enumerate(self._blocks()))
        return 10.0 ** a, t * self.Ts, th

    def jacobian(self, v) -> np.ndarray:
        """Diagonal of ``d(alpha, tau, theta) / dv``, same shape as ``v``."""
        v = np.asarray(v, float)
        L = v.shape[-1] // 3
        alpha, _, _ = self.inverse(v)
        out = np.empty_like(v)
        out[..., :L] = alpha * math.log(10.0) * self.alpha[0]
        out[..., L:2 * L] = self.Ts * self.tau[0]
        out[..., 2 * L:] = self.theta[0]
        return out

    def phase_forward(self, phi):
        return (np.asarray(phi, float) - self.phi[1]) / self.phi[0]

    def phase_inverse(self, v):
        return np.asarray(v, float) * self.phi[0] + self.phi[1]

    def to_dict(self) -> dict:
        return {"Ts": self.Ts, "alpha": list(self.alpha), "tau": list(self.tau),
                "theta": list(self.theta), "phi": list(self.phi)}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureScaler":
        return cls(float(d["Ts"]), tuple(d["alpha"]), tuple(d["tau"]), tuple(d["theta"]),
                   tuple(d.get("phi", (math.pi, math.pi))))


@dataclass
class Dataset:
    records: List[PathParams]
    train: np.ndarray
    test: np.ndarray
    scaler: FeatureScaler
    provenance: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=int)
        self.test = np.asarray(self.test, dtype=int)
        n = len(self.records)
        both = np.concatenate([self.train, self.test])
        if both.size != n or not np.array_equal(np.sort(both), np.arange(n)):
            raise ValueError("train/test split must partition the records")
        Ls = {r.L for r in self.records}
        if len(Ls) != 1:
            raise ValueError("all records must have the same number of paths")

    @property
    def L(self) -> int:
        return self.records[0].L

    def __len__(self):
        return len(self.records)

    def arrays(self, which: Optional[str] = None) -> Dict[str, np.ndarray]:
        """Stacked ``(N, L)`` arrays of every field, optionally one split only."""
        idx = {None: np.arange(len(self)), "train": self.train, "test": self.test}[which]
        return {f: np.array([getattr(self.records[i], f) for i in idx]).reshape(len(idx), self.L)
                for f in FIELDS}

    def features(self, which: str = "train") -> np.ndarray:
        arr = self.arrays(which)
        return self.scaler.forward(arr["alpha"], arr["tau"], arr["theta"])

    def mean_path_power(self, which: str = "train") -> float:
        """``E[sum_l alpha_l^2]``; with independent uniform phases this is ``E||h_k||^2 / M``."""
        a = self.arrays(which)["alpha"]
        return float(np.mean(np.sum(a ** 2, axis=1)))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.records == other.records and np.array_equal(self.train, other.train)
                and np.array_equal(self.test, other.test) and self.scaler == other.scaler)


def downlink_gains(alpha, rel_err: float, rng: np.random.Generator) -> np.ndarray:
    """Perturb uplink gains so that ``E|alpha_dl / alpha - 1| = rel_err``."""
    alpha = np.asarray(alpha, float)
    if rel_err == 0:
        return alpha.copy()
    eps = rng.normal(0.0, rel_err * math.sqrt(math.pi / 2.0), size=alpha.shape)
    return np.abs(alpha * (1.0 + eps))


def _image_sources(ue_xy, spec: ScenarioSpec):
    """Image positions and reflection orders for a rectangular room (order <= 2)."""
    W, D = spec.room
    x, y = ue_xy
    xs = [(x, 0), (-x, 1), (2 * W - x, 1), (2 * W + x, 2), (x - 2 * W, 2)]
    ys = [(y, 0), (-y, 1), (2 * D - y, 1), (2 * D + y, 2), (y - 2 * D, 2)]
    pts, orders = [], []
    for ix, ox in xs:
        for iy, oy in ys:
            if ox + oy <= 2:
                pts.append((ix, iy))
                orders.append(ox + oy)
    return np.array(pts), np.array(orders)


def _fold_angle(theta):
    """Equivalent angle in [pi/2, 3pi/2].

    A linear array only sees ``sin(theta)``, so ``theta`` and ``pi - theta``
    are the same direction. Folding onto the interval where ``sin`` is
    monotone keeps nearby directions nearby in feature space.
    """
    t = wrap_phase(theta)
    return np.where((t < np.pi / 2) | (t > 1.5 * np.pi), wrap_phase(np.pi - t), t)


def _user_paths(ue_xy, spec: ScenarioSpec, rng: np.random.Generator):
    bx, by = spec.bs_position
    pts, orders = _image_sources(ue_xy, spec)
    dx, dy = pts[:, 0] - bx, pts[:, 1] - by
    dist = np.sqrt(dx ** 2 + dy ** 2 + spec.height_offset ** 2)
    order = np.argsort(dist, kind="stable")[:spec.L]
    dx, dy, dist, orders = dx[order], dy[order], dist[order], orders[order]

    tau = dist / SPEED_OF_LIGHT + np.abs(rng.normal(0.0, spec.delay_jitter, spec.L))
    theta = _fold_angle(np.arctan2(dy, dx) + rng.normal(0.0, spec.angular_spread, spec.L))
    lam = SPEED_OF_LIGHT / spec.carrier_hz
    loss = 10.0 ** (-spec.reflection_loss_db * orders / 20.0)
    shadow = 10.0 ** (rng.normal(0.0, spec.shadowing_db, spec.L) / 20.0)
    alpha = lam / (4 * math.pi * dist) * loss * shadow * np.exp(-tau / (2 * spec.gain_decay))
    return alpha, tau, theta


def generate(spec: ScenarioSpec = ScenarioSpec(), train_fraction: float = 0.8) -> Dataset:
    """Draw ``spec.user_count`` users and split them 80/20 after shuffling."""
    spec.validate()
    rng = make_rng(spec.seed)
    W, D = spec.room
    margin = 0.2
    centres = np.column_stack([rng.uniform(1.0, W - 1.0, spec.cluster_count),
                               rng.uniform(1.5, D - 1.0, spec.cluster_count)])
    records = []
    attempts = 0
    while len(records) < spec.user_count:
        attempts += 1
        if attempts > 50 * spec.user_count:
            raise ValueError("room geometry cannot produce L paths within delay_spread_max")
        c = centres[rng.integers(spec.cluster_count)]
        ue = np.clip(c + rng.normal(0.0, spec.cluster_radius, 2), margin,
                     (W - margin, D - margin))
        alpha, tau, theta = _user_paths(ue, spec, rng)
        if tau.max() > spec.delay_spread_max:
            continue
        phi_up = rng.uniform(0.0, TWO_PI, spec.L)
        phi_dl = rng.uniform(0.0, TWO_PI, spec.L)
        records.append(PathParams.sorted_by_delay(alpha, tau, theta, phi_up, phi_dl))

    n = len(records)
    perm = rng.permutation(n)
    n_train = int(round(train_fraction * n))
    train, test = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    scaler = _fit_scaler(records, train, 1.0 / spec.bandwidth_hz)
    prov = {"generator": "image-method indoor scenario", "spec": _spec_dict(spec)}
    return Dataset(records, train, test, scaler, prov)


def _spec_dict(spec: ScenarioSpec) -> dict:
    d = asdict(spec)
    d["room"] = list(spec.room)
    d["bs_position"] = list(spec.bs_position)
    return d


def _fit_scaler(records, train_idx, Ts) -> FeatureScaler:
    sel = [records[i] for i in train_idx] or records
    return FeatureScaler.fit(np.concatenate([r.alpha for r in sel]),
                             np.concatenate([r.tau for r in sel]),
                             np.concatenate([r.theta for r in sel]), Ts)


def to_features(x: PathParams, scaler: FeatureScaler) -> np.ndarray:
    """GAN-facing vector ``[alpha~, tau~, theta~]`` of length ``3L``."""
    if np.any(x.alpha <= 0):
        raise ValueError("alpha must be strictly positive")
    return scaler.forward(x.alpha, x.tau, x.theta)


def from_features(v, scaler: FeatureScaler):
    return scaler.inverse(v)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def save(ds: Dataset, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for r in ds.records:
            fh.write(json.dumps({f: getattr(r, f).tolist() for f in FIELDS}) + "\n")
    meta = {"L": ds.L, "train": ds.train.tolist(), "test": ds.test.tolist(),
            "scaler": ds.scaler.to_dict(), "provenance": ds.provenance}
    _meta_path(path).write_text(json.dumps(meta, indent=1))


def _parse_record(obj, where: str) -> PathParams:
    if not isinstance(obj, dict):
        raise DatasetFormatError(f"{where}: expected a JSON object")
    missing = [f for f in FIELDS if f not in obj]
    if missing:
        raise DatasetFormatError(f"{where}: missing field(s) {', '.join(missing)}")
    try:
        return PathParams(*(np.asarray(obj[f], dtype=float) for f in FIELDS))
    except (TypeError, ValueError) as exc:
        raise DatasetFormatError(f"{where}: {exc}") from exc


def load(path) -> Dataset:
    path = Path(path)
    records = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"{where}: {exc.msg}") from exc
            records.append(_parse_record(obj, where))
    if not records:
        raise DatasetFormatError(f"{path}: no records")
    meta_file = _meta_path(path)
    try:
        meta = json.loads(meta_file.read_text())
        return Dataset(records, meta["train"], meta["test"],
                       FeatureScaler.from_dict(meta["scaler"]), meta.get("provenance", {}))
    except FileNotFoundError:
        raise DatasetFormatError(f"{meta_file}: sidecar metadata file not found") from None
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DatasetFormatError(f"{meta_file}: malformed metadata ({exc})") from exc


def import_csv(path, seed: int = 0, Ts: float = 1.0 / 20e6,
               train_fraction: float = 0.8) -> Dataset:
    """Read an external parameter table.

    Columns are ``alpha_1..alpha_L``, ``tau_1..tau_L``, ``theta_1..theta_L``,
    ``phi_up_1..phi_up_L``, ``phi_dl_1..phi_dl_L`` (extra columns are
    ignored). Paths are re-sorted by delay and a shuffled split is drawn from
    ``seed``.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        L = sum(1 for c in cols if c.startswith("alpha_"))
        need = [f"{f}_{i}" for f in FIELDS for i in range(1, L + 1)]
        missing = [c for c in need if c not in cols]
        if L == 0 or missing:
            raise DatasetFormatError(f"{path}: missing column(s) {', '.join(missing) or 'alpha_1'}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            try:
                vals = {f: [float(row[f"{f}_{i}"]) for i in range(1, L + 1)] for f in FIELDS}
                records.append(PathParams.sorted_by_delay(**vals))
            except (TypeError, ValueError) as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from exc
    if not records:
        raise DatasetFormatError(f"{path}: no records")
    perm = make_rng(seed).permutation(len(records))
    n_train = int(round(train_fraction * len(records)))
    train, test = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    return Dataset(records, train, test, _fit_scaler(records, train, Ts),
                   {"generator": "csv import", "source": path.name})
