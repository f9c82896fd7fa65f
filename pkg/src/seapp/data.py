"""Corpus ingestion, windowing and a synthetic domain-shift generator.

A corpus is held as one dense array ``X`` of shape (n_windows, N, L) plus an
optional label vector; :class:`MtsSample` is the per-window view.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import pandas as pd

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = [
    "DataError",
    "MtsSample",
    "Corpus",
    "NormStats",
    "CorpusSpec",
    "SyntheticShiftSpec",
    "window_starts",
    "sliding_windows",
    "interpolate_missing",
    "cap_rul",
    "load_csv_corpus",
    "read_manifest",
    "generate_synthetic",
    "write_corpus_csv",
]

SCHEMAS = ("rul_regression", "activity_classification", "synthetic")
MISSING = ["", "NaN"]


class DataError(ValueError):
    """Malformed or missing input data."""


@dataclass
class MtsSample:
    values: np.ndarray  # (N, L)
    label: float | int | None = None


@dataclass
class Corpus:
    X: np.ndarray  # (n, N, L)
    y: np.ndarray | None
    sensors: list[str]
    task: str = "classification"  # or "regression"
    n_classes: int = 0
    classes: list = field(default_factory=list)
    stats: "NormStats | None" = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 3:
            raise DataError(f"corpus array must be (n, N, L), got {self.X.shape}")
        if self.y is not None:
            self.y = np.asarray(self.y)
            if len(self.y) != len(self.X):
                raise DataError("label count does not match window count")

    def __len__(self) -> int:
        return len(self.X)

    def __getitem__(self, i: int) -> MtsSample:
        label = None
        if self.y is not None:
            label = int(self.y[i]) if self.task == "classification" else float(self.y[i])
        return MtsSample(self.X[i], label)

    def __iter__(self) -> Iterator[MtsSample]:
        return (self[i] for i in range(len(self)))

    @property
    def n_sensors(self) -> int:
        return self.X.shape[1]

    @property
    def window_len(self) -> int:
        return self.X.shape[2]

    @property
    def labeled(self) -> bool:
        return self.y is not None

    def without_labels(self) -> "Corpus":
        return replace(self, y=None)

    def normalized(self, stats: "NormStats") -> "Corpus":
        return replace(self, X=stats.apply(self.X), stats=stats)


@dataclass
class NormStats:
    mean: np.ndarray  # (N,)
    std: np.ndarray  # (N,)

    @classmethod
    def fit(cls, X: np.ndarray) -> "NormStats":
        """Per-sensor statistics over every window and timestamp of (n, N, L) or (M, N) data."""
        X = np.asarray(X, dtype=np.float64)
        axes = (0, 2) if X.ndim == 3 else (0,)
        mean = X.mean(axis=axes)
        std = X.std(axis=axes)
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std)

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 3:
            return (X - self.mean[None, :, None]) / self.std[None, :, None]
        return (X - self.mean) / self.std


# ------------------------------------------------------------------ windowing


def _stride(window_len: int, overlap: float) -> int:
    if not 0 <= overlap < 1:
        raise ValueError(f"overlap must be in [0, 1), got {overlap}")
    if window_len < 1:
        raise ValueError("window_len must be >= 1")
    return max(1, int(round(window_len * (1.0 - overlap))))


def window_starts(length: int, window_len: int, overlap: float = 0.0) -> np.ndarray:
    stride = _stride(window_len, overlap)
    if length < window_len:
        return np.zeros(0, dtype=int)
    return np.arange(0, length - window_len + 1, stride)


def sliding_windows(stream: np.ndarray, window_len: int, overlap: float = 0.0) -> np.ndarray:
    """(M, N) stream -> (n, N, L) windows, ``n = 1 + (M - L) // stride``."""
    stream = np.asarray(stream, dtype=np.float64)
    starts = window_starts(len(stream), window_len, overlap)
    if len(starts) == 0:
        return np.zeros((0, stream.shape[1], window_len))
    idx = starts[:, None] + np.arange(window_len)[None, :]
    return np.transpose(stream[idx], (0, 2, 1))


def interpolate_missing(series) -> np.ndarray:
    """Fill NaN gaps: linear inside, nearest observed value at the edges.

    Accepts a 1-D series or an (M, N) array (one column per sensor).
    """
    arr = np.array(series, dtype=np.float64)
    cols = arr[:, None] if arr.ndim == 1 else arr
    pos = np.arange(len(cols))
    for j in range(cols.shape[1]):
        col = cols[:, j]
        ok = ~np.isnan(col)
        if not ok.any():
            raise DataError(f"sensor column {j} has no observed values")
        if not ok.all():
            col[~ok] = np.interp(pos[~ok], pos[ok], col[ok])
    return arr


def cap_rul(labels, cap: float = 125.0) -> np.ndarray:
    if cap <= 0:
        raise ValueError("cap must be positive")
    labels = np.asarray(labels, dtype=np.float64)
    if np.any(labels < 0):
        raise DataError("RUL labels must be non-negative")
    return np.minimum(labels, cap)


# ------------------------------------------------------------------ CSV corpora


@dataclass
class CorpusSpec:
    path: str
    schema: str = "rul_regression"
    window_len: int = 60
    overlap: float = 0.0
    sensors: list[str] | None = None
    label: str | None = None
    unit: str | None = None
    cap: float = 125.0
    test_path: str | None = None

    def __post_init__(self):
        if self.schema not in SCHEMAS:
            raise ValueError(f"schema must be one of {SCHEMAS}")
        if not 0 <= self.overlap < 1:
            raise ValueError("overlap must be in [0, 1)")
        if self.window_len < 1:
            raise ValueError("window_len must be >= 1")

    @classmethod
    def har(cls, path: str, **kw) -> "CorpusSpec":
        """Activity-recognition defaults: 128-step windows with 50% overlap."""
        kw.setdefault("window_len", 128)
        kw.setdefault("overlap", 0.5)
        return cls(path, schema="activity_classification", **kw)

    @classmethod
    def cmapss(cls, path: str, **kw) -> "CorpusSpec":
        """Run-to-failure defaults: 60-step windows, unit column ``unit``."""
        kw.setdefault("window_len", 60)
        kw.setdefault("unit", "unit")
        return cls(path, schema="rul_regression", **kw)


def read_manifest(path) -> dict:
    """Parse a TOML-style key-value manifest."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise DataError(f"bad manifest {path}: {exc}") from None


def _read_frame(path: str) -> pd.DataFrame:
    p = Path(path)
    if not p.exists():
        raise DataError(f"file not found: {p}")
    try:
        df = pd.read_csv(
            p, keep_default_na=False, na_values=MISSING, encoding="utf-8", float_precision="round_trip"
        )
    except pd.errors.EmptyDataError:
        raise DataError(f"empty file: {p}") from None
    if df.empty:
        raise DataError(f"no data rows in {p}")
    return df


def _numeric(df: pd.DataFrame, cols: Sequence[str], path: str) -> np.ndarray:
    out = np.empty((len(df), len(cols)))
    for j, c in enumerate(cols):
        raw = df[c]
        num = pd.to_numeric(raw, errors="coerce")
        bad = num.isna() & raw.notna()
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise DataError(f"{path}: non-numeric value {raw.iloc[row]!r} in column {c!r}, row {row}")
        out[:, j] = num.to_numpy(dtype=np.float64)
    return out


def _mode(labels: np.ndarray) -> int:
    vals, counts = np.unique(labels, return_counts=True)
    return int(vals[np.argmax(counts)])


def _windows_from_frame(df: pd.DataFrame, spec: CorpusSpec, path: str, classes=None):
    sensors = spec.sensors
    if sensors is None:
        skip = {spec.label, spec.unit}
        sensors = [c for c in df.columns if c not in skip]
    missing = [c for c in list(sensors) + [spec.label, spec.unit] if c and c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing column(s) {missing}")
    values = _numeric(df, sensors, path)
    units = df[spec.unit].to_numpy() if spec.unit else np.zeros(len(df), dtype=int)

    regression = spec.schema == "rul_regression"
    if spec.label is None:
        labels = None
    elif regression:
        labels = _numeric(df, [spec.label], path)[:, 0]
    else:
        raw = df[spec.label].astype(str).to_numpy()
        if classes is None:
            classes = sorted(set(raw))
        lookup = {c: i for i, c in enumerate(classes)}
        unknown = set(raw) - set(lookup)
        if unknown:
            raise DataError(f"{path}: unseen class label(s) {sorted(unknown)}")
        labels = np.array([lookup[c] for c in raw])

    xs, ys = [], []
    for u in pd.unique(units):
        rows = np.flatnonzero(units == u)
        stream = interpolate_missing(values[rows])
        starts = window_starts(len(rows), spec.window_len, spec.overlap)
        if len(starts) == 0:
            continue
        xs.append(sliding_windows(stream, spec.window_len, spec.overlap))
        if regression:
            if labels is None:
                # run-to-failure: remaining steps until the unit's last row
                rul = (len(rows) - 1 - np.arange(len(rows))).astype(float)
            else:
                rul = labels[rows]
            ys.append(cap_rul(rul[starts + spec.window_len - 1], spec.cap))
        elif labels is not None:
            lab = labels[rows]
            ys.append(np.array([_mode(lab[s : s + spec.window_len]) for s in starts]))
    if not xs:
        raise DataError(f"{path}: no stream is long enough for window_len={spec.window_len}")
    X = np.concatenate(xs)
    y = np.concatenate(ys) if ys else None
    return X, y, list(sensors), classes


def load_csv_corpus(
    spec: CorpusSpec, stats: NormStats | None = None, classes: list | None = None
) -> dict[str, Corpus]:
    """Load ``train`` (and ``test`` if configured) splits as normalized corpora.

    Normalization statistics come from ``stats`` when given (e.g. those of a
    source domain), else from this corpus's training split; either way the
    same statistics are applied to every split and stored on the result.
    ``classes`` fixes the label-to-index mapping (pass the source's).
    """
    df = _read_frame(spec.path)
    X, y, sensors, classes = _windows_from_frame(df, spec, spec.path, classes)
    if stats is None:
        stats = NormStats.fit(X)
    task = "regression" if spec.schema == "rul_regression" else "classification"
    n_classes = len(classes) if classes else 0
    out = {"train": Corpus(stats.apply(X), y, sensors, task, n_classes, classes or [], stats)}
    if spec.test_path:
        tdf = _read_frame(spec.test_path)
        Xt, yt, _, _ = _windows_from_frame(tdf, spec, spec.test_path, classes)
        out["test"] = Corpus(stats.apply(Xt), yt, sensors, task, n_classes, classes or [], stats)
    return out


# ------------------------------------------------------------------ synthetic


@dataclass(frozen=True)
class SyntheticShiftSpec:
    """Shared latent process observed through N sensors in two domains.

    The target domain sees sensor ``m`` carry the loadings of sensor
    ``permutation[m]`` and then applies ``scale[m] * x + offset[m]``.
    ``n_classes == 0`` switches to RUL regression with labels in
    ``[0, rul_horizon]``.
    """

    n_sensors: int = 6
    window_len: int = 32
    latent_dim: int = 3
    n_classes: int = 4
    rul_horizon: float = 125.0
    n_source: int = 2000
    n_target: int = 2000
    scale: tuple[float, ...] | None = None
    offset: tuple[float, ...] | None = None
    permutation: tuple[int, ...] | None = None
    noise_std: float = 0.3
    seed: int = 0

    def __post_init__(self):
        n = self.n_sensors
        for name in ("scale", "offset"):
            v = getattr(self, name)
            if v is not None and len(v) != n:
                raise ValueError(f"{name} needs {n} entries")
        if self.scale is not None and any(s <= 0 for s in self.scale):
            raise ValueError("scales must be positive")
        if self.permutation is not None and sorted(self.permutation) != list(range(n)):
            raise ValueError("permutation must be a bijection on sensors")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")

    @classmethod
    def benchmark(cls, seed: int = 0, **kw) -> "SyntheticShiftSpec":
        """6-sensor, 4-class shift task: scales up to 2x, two rewired sensor pairs."""
        base = dict(
            n_sensors=6,
            window_len=32,
            n_classes=4,
            scale=(2.0, 1.0, 0.6, 1.5, 1.0, 1.8),
            offset=(1.0, 0.0, -0.8, 0.5, 0.0, -1.0),
            permutation=(1, 0, 2, 4, 3, 5),
            seed=seed,
        )
        base.update(kw)
        return cls(**base)

    @property
    def scales(self) -> np.ndarray:
        return np.ones(self.n_sensors) if self.scale is None else np.asarray(self.scale, float)

    @property
    def offsets(self) -> np.ndarray:
        return np.zeros(self.n_sensors) if self.offset is None else np.asarray(self.offset, float)

    @property
    def perm(self) -> np.ndarray:
        if self.permutation is None:
            return np.arange(self.n_sensors)
        return np.asarray(self.permutation, dtype=int)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    def spec_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _structure(spec: SyntheticShiftSpec, rng: np.random.Generator):
    """Domain-independent pieces: sensor loadings and per-class latent dynamics."""
    k, N = spec.latent_dim, spec.n_sensors
    loadings = rng.normal(size=(N, k))
    loadings /= np.linalg.norm(loadings, axis=1, keepdims=True)
    n_cls = max(spec.n_classes, 1)
    freqs = rng.uniform(0.5, 4.0, size=(n_cls, k))  # cycles per window
    amps = rng.uniform(0.5, 1.5, size=(n_cls, k))
    return loadings, freqs, amps


def _draw(spec, n, loadings, freqs, amps, rng):
    N, L, k = spec.n_sensors, spec.window_len, spec.latent_dim
    t = np.arange(L) / L
    if spec.n_classes > 0:
        y = rng.integers(0, spec.n_classes, size=n)
        f = freqs[y] * rng.uniform(0.9, 1.1, size=(n, k))
        a = amps[y]
        trend = np.zeros((n, k, 1))
    else:
        y = rng.uniform(0.0, spec.rul_horizon, size=n)
        health = 1.0 - y / spec.rul_horizon  # 0 when new, 1 at failure
        f = freqs[0] * (1.0 + health[:, None]) * rng.uniform(0.9, 1.1, size=(n, k))
        a = amps[0] * np.ones((n, 1))
        trend = 2.0 * health[:, None, None] * (0.5 + t) * np.ones((1, k, 1))
    phase = rng.uniform(0, 2 * np.pi, size=(n, k, 1))
    latent = a[..., None] * np.sin(2 * np.pi * f[..., None] * t + phase) + trend
    X = np.einsum("mk,nkl->nml", loadings, latent)
    X += spec.noise_std * rng.normal(size=X.shape)
    return X, y


def generate_synthetic(spec: SyntheticShiftSpec) -> tuple[Corpus, Corpus]:
    """Deterministic (source, target) corpora for a seed.  Values are raw (unnormalized)."""
    root = np.random.SeedSequence(spec.seed)
    s_struct, s_src, s_tgt = root.spawn(3)
    loadings, freqs, amps = _structure(spec, np.random.default_rng(s_struct))
    Xs, ys = _draw(spec, spec.n_source, loadings, freqs, amps, np.random.default_rng(s_src))
    Xt, yt = _draw(spec, spec.n_target, loadings[spec.perm], freqs, amps, np.random.default_rng(s_tgt))
    Xt = spec.scales[None, :, None] * Xt + spec.offsets[None, :, None]
    sensors = [f"s{m}" for m in range(spec.n_sensors)]
    if spec.n_classes > 0:
        task, n_cls, classes = "classification", spec.n_classes, list(range(spec.n_classes))
    else:
        task, n_cls, classes = "regression", 0, []
    return (
        Corpus(Xs, ys, sensors, task, n_cls, classes),
        Corpus(Xt, yt, sensors, task, n_cls, classes),
    )


def write_corpus_csv(corpus: Corpus, path, label: str = "label") -> None:
    """Write windows as rows of one stream per window (column ``window`` is the unit id)."""
    n, N, L = corpus.X.shape
    frame = {"window": np.repeat(np.arange(n), L)}
    for m, name in enumerate(corpus.sensors):
        frame[name] = corpus.X[:, m, :].reshape(-1)
    if corpus.y is not None:
        frame[label] = np.repeat(corpus.y, L)
    pd.DataFrame(frame).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
