"""Adam, the joint source/target training loop and evaluation metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .alignment import AlignmentConfig, EndoInputs, total_loss
from .data import Corpus, NormStats
from .encoder import EncoderConfig, EncoderParams, encode, global_features
from .tensor import Tensor

__all__ = [
    "METHODS",
    "TrainingError",
    "TrainConfig",
    "MetricsReport",
    "Model",
    "AdamState",
    "adam_step",
    "Adam",
    "rmse",
    "score",
    "accuracy",
    "task_loss",
    "forward_losses",
    "train",
    "predict",
    "evaluate",
]

METHODS = ("seapp", "sea", "source-only")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 50
    epochs: int = 20
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    method: str = "seapp"
    alignment: AlignmentConfig = field(default_factory=AlignmentConfig)
    patch: int = 8
    n_branches: int = 3
    hidden: int = 32
    eval_every: int = 0
    score_divisors: tuple[float, float] = (13.0, 10.0)

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        variant = {"seapp": "SEA++", "sea": "SEA"}.get(self.method)
        if variant and self.alignment.variant != variant:
            self.alignment = replace(self.alignment, variant=variant)

    @property
    def aligned(self) -> bool:
        return self.method != "source-only"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["score_divisors"] = list(self.score_divisors)
        return d


@dataclass
class MetricsReport:
    n: int = 0
    rmse: float | None = None
    score: float | None = None
    accuracy: float | None = None
    trace: list[dict] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        out = {"n": self.n}
        for k in ("rmse", "score", "accuracy"):
            v = getattr(self, k)
            if v is not None:
                out[k] = v
        return out


@dataclass
class Model:
    params: EncoderParams
    task: str  # "classification" | "regression"
    target_scale: float = 1.0
    stats: NormStats | None = None  # input normalization the model was trained under

    @property
    def config(self) -> EncoderConfig:
        return self.params.config


# ------------------------------------------------------------------ Adam


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, arrays: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray | None],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state lengths differ")
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p)
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, state {m.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


class Adam:
    def __init__(self, params: Sequence[Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState.zeros_like([p.values for p in self.params])

    def zero_grad(self) -> None:
        T.zero_grad(self.params)

    def step(self) -> None:
        adam_step(
            [p.values for p in self.params],
            [p.grad for p in self.params],
            self.state,
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
        )


# ------------------------------------------------------------------ metrics


def rmse(pred, true) -> float:
    d = np.asarray(pred, float) - np.asarray(true, float)
    return float(np.sqrt(np.mean(d * d)))


def score(pred, true, divisors: tuple[float, float] = (13.0, 10.0)) -> float:
    """Asymmetric exponential RUL score; late predictions cost more than early ones."""
    d = np.asarray(pred, float) - np.asarray(true, float)
    early, late = divisors
    return float(np.sum(np.where(d < 0, np.exp(-d / early) - 1.0, np.exp(d / late) - 1.0)))


def accuracy(pred_labels, true_labels) -> float:
    return float(np.mean(np.asarray(pred_labels) == np.asarray(true_labels)))


# ------------------------------------------------------------------ training


def task_loss(out: Tensor, y: np.ndarray, task: str, target_scale: float = 1.0) -> Tensor:
    """Cross-entropy over class logits, or MSE of scaled regression outputs."""
    if task == "classification":
        onehot = np.zeros(out.shape)
        onehot[np.arange(len(y)), np.asarray(y, dtype=int)] = 1.0
        logp = T.log_softmax_lastdim(out)
        return T.scale(T.sum_(logp * onehot), -1.0 / len(y))
    target = np.asarray(y, float)[:, None] / target_scale
    return T.mean(T.square(out - target))


def forward_losses(model: Model, xs, ys, xt, align: AlignmentConfig | None):
    """Loss parts for one source batch (labeled) and optional target batch.

    ``align=None`` means source-only: the target batch is not encoded.
    """
    params = model.params
    src = encode(xs, params)
    Ps, out = global_features(src.Z, params)
    lc = task_loss(out, ys, model.task, model.target_scale)
    if align is None:
        return lc, {"task": lc.item(), "exo": 0.0, "endo": 0.0}
    tgt = encode(xt, params)
    Pt, _ = global_features(tgt.Z, params)
    parts = total_loss(lc, EndoInputs(src.Z, tgt.Z, src.E, tgt.E), Ps, Pt, align)
    return parts.total, parts.values


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    # same key for both domains: identical corpora yield identical batches
    return np.random.default_rng([seed, epoch]).permutation(n)


def build_model(source: Corpus, cfg: TrainConfig) -> Model:
    n_out = source.n_classes if source.task == "classification" else 1
    enc = EncoderConfig(
        n_sensors=source.n_sensors,
        window_len=source.window_len,
        patch=cfg.patch,
        n_branches=cfg.n_branches,
        hidden=cfg.hidden,
        n_outputs=max(n_out, 1),
    )
    params = EncoderParams.init(enc, np.random.default_rng([cfg.seed, 1_000_003]))
    scale = 1.0
    if source.task == "regression":
        scale = float(np.max(np.abs(source.y))) or 1.0
    return Model(params, source.task, scale, source.stats)


def train(
    source: Corpus,
    target: Corpus | None,
    cfg: TrainConfig,
    log: Callable[[dict], None] | None = None,
    eval_corpus: Corpus | None = None,
) -> tuple[Model, MetricsReport]:
    """Train on labeled ``source`` while aligning to unlabeled ``target``.

    Each step pairs one source batch with one target batch.  An epoch runs
    over the larger domain's batch count and cycles the smaller one; the
    last partial batch is dropped.  Target labels are never read.
    """
    if len(source) == 0:
        raise TrainingError("source corpus is empty")
    if source.y is None:
        raise TrainingError("source corpus must be labeled")
    aligned = cfg.aligned
    if aligned and (target is None or len(target) == 0):
        raise TrainingError("target corpus is empty")
    bs = cfg.batch_size
    ns = len(source) // bs
    nt = len(target) // bs if aligned else 0
    if ns == 0 or (aligned and nt == 0):
        raise TrainingError(f"a domain has fewer samples than batch_size={bs}")

    model = build_model(source, cfg)
    opt = Adam(model.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    align = cfg.alignment if aligned else None
    report = MetricsReport()
    step = 0
    for epoch in range(cfg.epochs):
        order_s = _epoch_order(cfg.seed, epoch, len(source))
        order_t = _epoch_order(cfg.seed, epoch, len(target)) if aligned else None
        for b in range(max(ns, nt)):
            idx_s = order_s[(b % ns) * bs : (b % ns + 1) * bs]
            xs, ys = source.X[idx_s], source.y[idx_s]
            xt = None
            if aligned:
                xt = target.X[order_t[(b % nt) * bs : (b % nt + 1) * bs]]
            opt.zero_grad()
            loss, parts = forward_losses(model, xs, ys, xt, align)
            total = loss.item()
            if not math.isfinite(total):
                raise TrainingError(f"non-finite loss {total} at step {step}")
            T.backward(loss)
            opt.step()
            rec = {"step": step, "epoch": epoch, **parts, "total": total}
            report.trace.append(rec)
            if log is not None:
                log(rec)
            step += 1
        if eval_corpus is not None and cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            m = evaluate(model, eval_corpus, cfg.score_divisors)
            report.history.append({"epoch": epoch, **m.summary()})
    return model, report


# ------------------------------------------------------------------ evaluation


def predict(model: Model, X: np.ndarray, batch: int = 500) -> np.ndarray:
    """Raw model outputs: class logits (n, C) or regression values (n,)."""
    outs = []
    with T.no_grad():
        for i in range(0, len(X), batch):
            z = encode(X[i : i + batch], model.params).Z
            _, out = global_features(z, model.params)
            outs.append(out.values)
    out = np.concatenate(outs) if outs else np.zeros((0, model.config.n_outputs))
    if model.task == "regression":
        return out[:, 0] * model.target_scale
    return out


def evaluate(model: Model, corpus: Corpus, score_divisors=(13.0, 10.0)) -> MetricsReport:
    if corpus.y is None:
        raise ValueError("evaluation needs a labeled corpus")
    out = predict(model, corpus.X)
    rep = MetricsReport(n=len(corpus))
    if model.task == "classification":
        rep.accuracy = accuracy(np.argmax(out, axis=1), corpus.y)
    else:
        rep.rmse = rmse(out, corpus.y)
        rep.score = score(out, corpus.y, score_divisors)
    return rep


def dump_jsonl(records: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
