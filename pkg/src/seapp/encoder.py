"""Graph-based spatial-temporal encoder.

Pipeline per batch ``x`` of shape (B, N, L):

    segment -> f_L -> msgc_edges (per patch) -> mpnn_update -> temporal_update

and a global head mapping the stacked sensor features to global features
``P`` plus task outputs.  All array arguments are :class:`~seapp.tensor.Tensor`
(or plain arrays, treated as constants); shapes follow the convention
``Z: (B, L_hat, N, d)``, ``E: (B, L_hat, N, N)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "EncoderConfig",
    "EncoderParams",
    "SeqGraphBatch",
    "segment",
    "msgc_edges",
    "mpnn_update",
    "lstm_step",
    "temporal_update",
    "encode",
    "global_features",
]


@dataclass(frozen=True)
class EncoderConfig:
    n_sensors: int
    window_len: int
    patch: int = 8
    n_branches: int = 3
    hidden: int = 32
    n_outputs: int = 1

    def __post_init__(self):
        if self.patch < 1:
            raise ValueError("patch size must be >= 1")
        if self.patch > self.window_len:
            raise ValueError(f"patch size {self.patch} exceeds window length {self.window_len}")
        if self.n_sensors < 1 or self.n_branches < 1 or self.hidden < 1 or self.n_outputs < 1:
            raise ValueError("n_sensors, n_branches, hidden and n_outputs must be >= 1")

    @property
    def n_patches(self) -> int:
        return self.window_len // self.patch


@dataclass
class SeqGraphBatch:
    Z: Tensor  # (B, L_hat, N, d)
    E: Tensor  # (B, L_hat, N, N)


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class EncoderParams:
    """Named trainable tensors of the encoder, global head and task head.

    Iteration order is the insertion order below, which is also the order
    used by the optimizer and by serialization.
    """

    def __init__(self, config: EncoderConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors

    @classmethod
    def init(cls, config: EncoderConfig, seed: int | np.random.Generator = 0) -> "EncoderParams":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        d, F = config.patch, config.hidden
        flat = config.n_patches * config.n_sensors * d
        shapes: dict[str, tuple[tuple[int, ...], int]] = {
            "patch.W": ((d, d), d),
            "patch.b": ((d,), d),
        }
        for i in range(config.n_branches):
            shapes[f"msgc.{i}.WQ"] = ((d, d), d)
            shapes[f"msgc.{i}.WK"] = ((d, d), d)
        shapes.update(
            {
                "gnn.W": ((d, d), d),
                # gate order along the last axis: input, forget, candidate, output
                "lstm.Wx": ((d, 4 * d), d),
                "lstm.Wh": ((d, 4 * d), d),
                "lstm.b": ((4 * d,), d),
                "head.W1": ((flat, F), flat),
                "head.b1": ((F,), flat),
                "head.W2": ((F, F), F),
                "head.b2": ((F,), F),
                "task.W": ((F, config.n_outputs), F),
                "task.b": ((config.n_outputs,), F),
            }
        )
        tensors = {k: T.parameter(_uniform(rng, fan, shp)) for k, (shp, fan) in shapes.items()}
        return cls(config, tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.tensors.values())

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def branches(self) -> list[tuple[Tensor, Tensor]]:
        return [
            (self.tensors[f"msgc.{i}.WQ"], self.tensors[f"msgc.{i}.WK"])
            for i in range(self.config.n_branches)
        ]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            self.config, {k: T.parameter(v.values.copy()) for k, v in self.tensors.items()}
        )

    def n_values(self) -> int:
        return sum(t.size for t in self)


# ------------------------------------------------------------------ stages


def segment(x, patch: int, W: Tensor | None = None, b: Tensor | None = None) -> Tensor:
    """Cut (B, N, L) windows into (B, L_hat, N, d) patches.

    Patch ``T`` covers timestamps ``[T*d, (T+1)*d)``; the trailing ``L mod d``
    timestamps are dropped.  With ``W`` and ``b`` given, each patch is passed
    through ``relu(z @ W + b)``.
    """
    x = T.tensor(x)
    if x.ndim != 3:
        raise T.ShapeError(f"expected (B, N, L) input, got {x.shape}")
    B, N, L = x.shape
    if patch < 1 or patch > L:
        raise ValueError(f"patch size {patch} invalid for window length {L}")
    n_patches = L // patch
    z = x[:, :, : n_patches * patch] if n_patches * patch != L else x
    z = T.transpose(T.reshape(z, (B, N, n_patches, patch)), (0, 2, 1, 3))
    if W is None:
        return z
    return T.relu(z @ W + b)


def msgc_edges(Z, branches) -> Tensor:
    """Multi-branch attention edges for each graph: (..., N, d) -> (..., N, N).

    Each branch takes a row-wise softmax of ``(Z WQ)(Z WK)^T / sqrt(d)``; the
    branch matrices are averaged.
    """
    Z = T.tensor(Z)
    if len(branches) < 1:
        raise ValueError("need at least one branch")
    d = Z.shape[-1]
    inv = 1.0 / np.sqrt(d)
    acc = None
    for WQ, WK in branches:
        logits = T.scale((Z @ WQ) @ T.swapaxes(Z @ WK, -1, -2), inv)
        e = T.softmax_lastdim(logits)
        acc = e if acc is None else acc + e
    return T.scale(acc, 1.0 / len(branches))


def mpnn_update(Z, E, W_G) -> Tensor:
    """Edge-weighted aggregation over all sensors (self included), then ReLU(h W_G)."""
    Z, E = T.tensor(Z), T.tensor(E)
    if E.shape[-1] != Z.shape[-2] or E.shape[-2] != Z.shape[-2]:
        raise T.ShapeError(f"edge shape {E.shape} does not match features {Z.shape}")
    return T.relu((E @ Z) @ W_G)


def lstm_step(x, h, c, Wx, Wh, b):
    """One gated step; returns the new (h, c)."""
    gates = x @ Wx + h @ Wh + b
    d = h.shape[-1]
    i = T.sigmoid(gates[..., :d])
    f = T.sigmoid(gates[..., d : 2 * d])
    g = T.tanh(gates[..., 2 * d : 3 * d])
    o = T.sigmoid(gates[..., 3 * d :])
    c = f * c + i * g
    h = o * T.tanh(c)
    return h, c


def temporal_update(Z, Wx, Wh, b) -> Tensor:
    """Run one recurrent cell per sensor along the graph axis, weights shared.

    Input and output are (B, L_hat, N, d); output row ``T`` is the hidden
    state after consuming graph ``T``.  Initial hidden and cell states are 0.
    """
    Z = T.tensor(Z)
    B, n_patches, N, _ = Z.shape
    hid = Wh.shape[0]
    h = T.tensor(np.zeros((B, N, hid)))
    c = T.tensor(np.zeros((B, N, hid)))
    outs = []
    for t in range(n_patches):
        h, c = lstm_step(Z[:, t], h, c, Wx, Wh, b)
        outs.append(h)
    return T.stack(outs, axis=1)


def encode(x, params: EncoderParams) -> SeqGraphBatch:
    """Full encoder.  ``E`` is the MSGC output fed to the MPNN (what SCA aligns)."""
    cfg = params.config
    x = T.tensor(x)
    if x.shape[1] != cfg.n_sensors or x.shape[2] != cfg.window_len:
        raise T.ShapeError(
            f"input {x.shape} does not match config (N={cfg.n_sensors}, L={cfg.window_len})"
        )
    z = segment(x, cfg.patch, params["patch.W"], params["patch.b"])
    E = msgc_edges(z, params.branches)
    z = mpnn_update(z, E, params["gnn.W"])
    z = temporal_update(z, params["lstm.Wx"], params["lstm.Wh"], params["lstm.b"])
    return SeqGraphBatch(Z=z, E=E)


def global_features(Z, params: EncoderParams) -> tuple[Tensor, Tensor]:
    """Stack sensor features per sample and map them to (P, task outputs).

    P = W2 relu(W1 flat + b1) + b2, outputs = P Wt + bt.
    """
    Z = T.tensor(Z)
    flat = T.reshape(Z, (Z.shape[0], -1))
    hidden = T.relu(flat @ params["head.W1"] + params["head.b1"])
    P = hidden @ params["head.W2"] + params["head.b2"]
    out = P @ params["task.W"] + params["task.b"]
    return P, out
