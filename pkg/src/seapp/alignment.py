"""Domain discrepancy losses: Coral, SCA/SFA (SEA) and iSCA/iSFA with
multi-graph weighting (SEA++), exo-feature alignment and the composite
objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "AlignmentConfig",
    "EndoInputs",
    "covariance",
    "coral",
    "sca_loss",
    "sfa_loss",
    "isca_loss_per_graph",
    "isca_losses",
    "isfa_loss_per_graph",
    "isfa_losses",
    "mga_weights",
    "endo_loss",
    "exo_loss",
    "total_loss",
]

VARIANTS = ("SEA", "SEA++")


@dataclass(frozen=True)
class AlignmentConfig:
    variant: str = "SEA++"
    lambda_sca: float = 0.1
    lambda_sfa: float = 0.1
    mga_weight_mode: str = "raw"
    allow_single_sample: bool = False
    exo_weight: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.lambda_sca < 0 or self.lambda_sfa < 0 or self.exo_weight < 0:
            raise ValueError("loss weights must be non-negative")
        if self.mga_weight_mode not in ("raw", "normalized"):
            raise ValueError("mga_weight_mode must be 'raw' or 'normalized'")


@dataclass
class EndoInputs:
    Zs: Tensor  # (ns, L_hat, N, d)
    Zt: Tensor  # (nt, L_hat, N, d)
    Es: Tensor  # (ns, L_hat, N, N)
    Et: Tensor  # (nt, L_hat, N, N)

    def __post_init__(self):
        self.Zs, self.Zt = T.tensor(self.Zs), T.tensor(self.Zt)
        self.Es, self.Et = T.tensor(self.Es), T.tensor(self.Et)
        if self.Zs.shape[1:] != self.Zt.shape[1:]:
            raise T.ShapeError(f"feature shapes differ: {self.Zs.shape} vs {self.Zt.shape}")
        if self.Es.shape[1:] != self.Et.shape[1:]:
            raise T.ShapeError(f"edge shapes differ: {self.Es.shape} vs {self.Et.shape}")


def _check_batch(n: int, allow_single: bool) -> None:
    if n < 2 and not allow_single:
        raise ValueError(
            f"covariance needs at least 2 samples, got {n} (set allow_single_sample for smoke runs)"
        )


def covariance(H, allow_single_sample: bool = False) -> Tensor:
    """Unbiased covariance over axis 0: (n, ..., f) -> (..., f, f).

    Leading axes after the sample axis are treated as independent batches.
    A single sample gives the zero matrix when ``allow_single_sample`` is set.
    """
    H = T.tensor(H)
    n = H.shape[0]
    _check_batch(n, allow_single_sample)
    f = H.shape[-1]
    if n < 2:
        return T.tensor(np.zeros(H.shape[1:-1] + (f, f)))
    centered = H - T.mean(H, axis=0, keepdims=True)
    # move samples to the second-to-last axis: (..., n, f)
    perm = tuple(range(1, H.ndim - 1)) + (0, H.ndim - 1)
    Hc = T.transpose(centered, perm)
    return T.scale(T.swapaxes(Hc, -1, -2) @ Hc, 1.0 / (n - 1))


def _scaled_frob(diff: Tensor, f: int) -> Tensor:
    return T.scale(T.frobenius_sq(diff, axis=(-2, -1)), 1.0 / (4.0 * f * f))


def _coral_from_cov(Cs: Tensor, Ct: Tensor, f: int) -> Tensor:
    return _scaled_frob(Cs - Ct, f)


def coral(Hs, Ht, allow_single_sample: bool = False) -> Tensor:
    """Deep Coral discrepancy ``||C_s - C_t||_F^2 / (4 f^2)`` of (n, f) batches."""
    Hs, Ht = T.tensor(Hs), T.tensor(Ht)
    if Hs.ndim != 2 or Ht.ndim != 2 or Hs.shape[1] != Ht.shape[1]:
        raise T.ShapeError(f"coral needs (n, f) batches with equal f, got {Hs.shape}, {Ht.shape}")
    f = Hs.shape[1]
    return _coral_from_cov(
        covariance(Hs, allow_single_sample), covariance(Ht, allow_single_sample), f
    )


def sca_loss(Es, Et) -> Tensor:
    """Mean absolute difference of batch- and graph-averaged edge weights over all N^2 pairs."""
    Es, Et = T.tensor(Es), T.tensor(Et)
    es = T.mean(Es, axis=(0, 1))
    et = T.mean(Et, axis=(0, 1))
    return T.mean(T.abs_(es - et))


def _contrast(logits: Tensor) -> Tensor:
    # -(1/N) sum_m log softmax(logits[m])[m]
    lse = T.logsumexp_lastdim(logits)
    return T.mean(lse - T.diagonal_lastdims(logits), axis=-1)


def sfa_loss(Zs, Zt) -> Tensor:
    """Sensor contrasting of batch- and graph-averaged sensor prototypes."""
    Zs, Zt = T.tensor(Zs), T.tensor(Zt)
    ps = T.mean(Zs, axis=(0, 1))  # (N, d)
    pt = T.mean(Zt, axis=(0, 1))
    return _contrast(ps @ pt.T)


def isca_losses(Es, Et, allow_single_sample: bool = False) -> Tensor:
    """iSCA for every graph at once: (n, L_hat, N, N) pairs -> (L_hat,).

    Each edge's batch of weights is a 1-feature Coral problem, so its
    discrepancy is ``(var_s - var_t)^2 / 4``.
    """
    Es, Et = T.tensor(Es), T.tensor(Et)
    vs = covariance(T.reshape(Es, Es.shape + (1,)), allow_single_sample)
    vt = covariance(T.reshape(Et, Et.shape + (1,)), allow_single_sample)
    d = _coral_from_cov(vs, vt, 1)  # (L_hat, N, N)
    return T.mean(d, axis=(-2, -1))


def isca_loss_per_graph(Es_T, Et_T, allow_single_sample: bool = False) -> Tensor:
    """iSCA for one graph: (n, N, N) edge batches -> scalar."""
    Es_T, Et_T = T.tensor(Es_T), T.tensor(Et_T)
    return isca_losses(
        T.reshape(Es_T, (Es_T.shape[0], 1) + Es_T.shape[1:]),
        T.reshape(Et_T, (Et_T.shape[0], 1) + Et_T.shape[1:]),
        allow_single_sample,
    )[0]


def _sensor_discrepancies(Zs, Zt, allow_single_sample: bool) -> Tensor:
    """Coral between every (source sensor n, target sensor j): (L_hat, N, N)."""
    d = Zs.shape[-1]
    Cs = covariance(Zs, allow_single_sample)  # (L_hat, N, d, d)
    Ct = covariance(Zt, allow_single_sample)
    diff = T.reshape(Cs, Cs.shape[:-3] + (Cs.shape[-3], 1, d, d)) - T.reshape(
        Ct, Ct.shape[:-3] + (1, Ct.shape[-3], d, d)
    )
    return _scaled_frob(diff, d)


def isfa_losses(Zs, Zt, allow_single_sample: bool = False) -> Tensor:
    """iSFA for every graph at once: (n, L_hat, N, d) pairs -> (L_hat,).

    Contrasts ``exp(-M_c)`` so that minimizing the loss shrinks the
    discrepancy between corresponding sensors relative to the others.
    """
    Zs, Zt = T.tensor(Zs), T.tensor(Zt)
    M = _sensor_discrepancies(Zs, Zt, allow_single_sample)
    return _contrast(T.neg(M))


def isfa_loss_per_graph(Zs_T, Zt_T, allow_single_sample: bool = False) -> Tensor:
    Zs_T, Zt_T = T.tensor(Zs_T), T.tensor(Zt_T)
    return isfa_losses(
        T.reshape(Zs_T, (Zs_T.shape[0], 1) + Zs_T.shape[1:]),
        T.reshape(Zt_T, (Zt_T.shape[0], 1) + Zt_T.shape[1:]),
        allow_single_sample,
    )[0]


def mga_weights(Zs, Zt, mode: str = "raw", allow_single_sample: bool = False) -> np.ndarray:
    """Per-graph Coral discrepancy of the sensor-flattened features.

    Returned as a plain array: the weights are a measurement and carry no
    gradient.  ``mode="normalized"`` rescales them to sum to ``L_hat``.
    """
    zs = Zs.values if isinstance(Zs, Tensor) else np.asarray(Zs, dtype=np.float64)
    zt = Zt.values if isinstance(Zt, Tensor) else np.asarray(Zt, dtype=np.float64)
    n_s, n_patches = zs.shape[:2]
    n_t = zt.shape[0]
    flat_s = T.tensor(zs.reshape(n_s, n_patches, -1))
    flat_t = T.tensor(zt.reshape(n_t, n_patches, -1))
    f = flat_s.shape[-1]
    Cs = covariance(flat_s, allow_single_sample)
    Ct = covariance(flat_t, allow_single_sample)
    W = _coral_from_cov(Cs, Ct, f).values.copy()
    if mode == "normalized":
        total = W.sum()
        if total > 0:
            W = W * (n_patches / total)
    elif mode != "raw":
        raise ValueError(f"unknown weight mode {mode!r}")
    return W


def endo_loss(inputs: EndoInputs, cfg: AlignmentConfig, weights=None) -> Tensor:
    """Local sensor-level alignment term for the configured variant.

    ``weights`` overrides the per-graph weights of SEA++ (they are otherwise
    measured from ``inputs`` by :func:`mga_weights`).
    """
    if cfg.variant == "SEA":
        parts = []
        if cfg.lambda_sca:
            parts.append(T.scale(sca_loss(inputs.Es, inputs.Et), cfg.lambda_sca))
        if cfg.lambda_sfa:
            parts.append(T.scale(sfa_loss(inputs.Zs, inputs.Zt), cfg.lambda_sfa))
    else:
        if not (cfg.lambda_sca or cfg.lambda_sfa):
            return T.tensor(0.0)
        single = cfg.allow_single_sample
        if weights is None:
            weights = mga_weights(inputs.Zs, inputs.Zt, cfg.mga_weight_mode, single)
        W = T.tensor(np.asarray(weights, dtype=np.float64))
        parts = []
        if cfg.lambda_sca:
            parts.append(T.scale(isca_losses(inputs.Es, inputs.Et, single), cfg.lambda_sca))
        if cfg.lambda_sfa:
            parts.append(T.scale(isfa_losses(inputs.Zs, inputs.Zt, single), cfg.lambda_sfa))
        per_graph = parts[0] if len(parts) == 1 else parts[0] + parts[1]
        return T.sum_(W * per_graph)
    if not parts:
        return T.tensor(0.0)
    return parts[0] if len(parts) == 1 else parts[0] + parts[1]


def exo_loss(Ps, Pt, allow_single_sample: bool = False) -> Tensor:
    """Global feature alignment: Coral between the pooled feature batches."""
    return coral(Ps, Pt, allow_single_sample)


@dataclass
class LossParts:
    total: Tensor
    task: Tensor
    exo: Tensor
    endo: Tensor
    values: dict = field(default_factory=dict)


def total_loss(task_loss, inputs: EndoInputs, Ps, Pt, cfg: AlignmentConfig, weights=None) -> LossParts:
    """task + exo_weight * exo + endo; returns the total and its parts."""
    task_loss = T.tensor(task_loss)
    exo = exo_loss(Ps, Pt, cfg.allow_single_sample)
    if cfg.exo_weight != 1.0:
        exo = T.scale(exo, cfg.exo_weight)
    endo = endo_loss(inputs, cfg, weights)
    total = task_loss + exo + endo
    return LossParts(
        total=total,
        task=task_loss,
        exo=exo,
        endo=endo,
        values={"task": task_loss.item(), "exo": exo.item(), "endo": endo.item()},
    )
