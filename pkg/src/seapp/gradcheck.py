"""Finite-difference verification of every differentiable loss path.

Each component is evaluated end to end on a 3-sensor toy (source and target
batches pushed through the shared encoder), and its tape gradient with
respect to every encoder parameter is compared with central differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import alignment as A
from . import tensor as T
from .encoder import EncoderConfig, EncoderParams, encode, global_features
from .training import task_loss

__all__ = ["COMPONENTS", "GradcheckRow", "toy_problem", "component_loss", "run_gradcheck"]

# component -> variants it applies to
COMPONENTS: dict[str, tuple[str, ...]] = {
    "coral": ("SEA", "SEA++"),
    "exo": ("SEA", "SEA++"),
    "task": ("SEA", "SEA++"),
    "sca": ("SEA",),
    "sfa": ("SEA",),
    "isca": ("SEA++",),
    "isfa": ("SEA++",),
    "endo": ("SEA", "SEA++"),
    "total": ("SEA", "SEA++"),
}

TOLERANCE = 1e-4


@dataclass
class GradcheckRow:
    component: str
    variant: str
    max_rel_err: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < TOLERANCE


def toy_problem(
    seed: int = 0,
    n_sensors: int = 3,
    window_len: int = 8,
    patch: int = 2,
    batch: int = 4,
    weight_scale: float = 4.0,
):
    """Random toy encoder and batches.

    Weights are scaled up from the default init so that recurrent features,
    and hence every Coral discrepancy, are large enough for central
    differences to resolve.
    """
    rng = np.random.default_rng(seed)
    cfg = EncoderConfig(
        n_sensors=n_sensors, window_len=window_len, patch=patch, n_branches=2, hidden=4, n_outputs=3
    )
    params = EncoderParams.init(cfg, rng)
    for p in params:
        p.values *= weight_scale
    xs = rng.normal(size=(batch, n_sensors, window_len))
    xt = 1.5 * rng.normal(size=(batch, n_sensors, window_len)) + 0.3
    ys = rng.integers(0, 3, size=batch)
    return params, xs, xt, ys


def component_loss(component: str, variant: str, params, xs, xt, ys) -> Callable[[], T.Tensor]:
    cfg = A.AlignmentConfig(variant=variant, lambda_sca=0.7, lambda_sfa=0.3)
    # graph weights are constants on the tape; hold them fixed for the differences too
    weights = None
    if variant == "SEA++":
        with T.no_grad():
            weights = A.mga_weights(encode(xs, params).Z, encode(xt, params).Z, cfg.mga_weight_mode)

    def f() -> T.Tensor:
        src, tgt = encode(xs, params), encode(xt, params)
        Ps, out = global_features(src.Z, params)
        Pt, _ = global_features(tgt.Z, params)
        inputs = A.EndoInputs(src.Z, tgt.Z, src.E, tgt.E)
        if component == "coral":
            return A.coral(T.reshape(src.Z, (src.Z.shape[0], -1)), T.reshape(tgt.Z, (tgt.Z.shape[0], -1)))
        if component == "exo":
            return A.exo_loss(Ps, Pt)
        if component == "task":
            return task_loss(out, ys, "classification")
        if component == "sca":
            return A.sca_loss(src.E, tgt.E)
        if component == "sfa":
            return A.sfa_loss(src.Z, tgt.Z)
        if component == "isca":
            return T.sum_(A.isca_losses(src.E, tgt.E))
        if component == "isfa":
            return T.sum_(A.isfa_losses(src.Z, tgt.Z))
        if component == "endo":
            return A.endo_loss(inputs, cfg, weights)
        if component == "total":
            lc = task_loss(out, ys, "classification")
            return A.total_loss(lc, inputs, Ps, Pt, cfg, weights).total
        raise ValueError(f"unknown component {component!r}")

    return f


def run_gradcheck(
    components=None, variants=None, seed: int = 0, eps: float = 1e-5
) -> list[GradcheckRow]:
    """One row per applicable (component, variant) pair."""
    names = list(COMPONENTS) if not components else list(components)
    unknown = [c for c in names if c not in COMPONENTS]
    if unknown:
        raise ValueError(f"unknown component(s) {unknown}; choose from {sorted(COMPONENTS)}")
    rows = []
    for comp in names:
        for variant in COMPONENTS[comp]:
            if variants and variant not in variants:
                continue
            params, xs, xt, ys = toy_problem(seed)
            f = component_loss(comp, variant, params, xs, xt, ys)
            rows.append(GradcheckRow(comp, variant, T.grad_check(f, list(params), eps)))
    return rows
