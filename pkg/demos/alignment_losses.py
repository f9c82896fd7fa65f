"""
Alignment losses on hand-made sensor features
=============================================

Coral compares second-order statistics, SCA compares averaged edge weights,
and the sensor-contrastive terms reward each source sensor for looking like
its own target counterpart rather than the others.
"""

import math

import numpy as np

from seapp import alignment as A

rng = np.random.default_rng(0)

# Coral: a shifted copy has the same covariance, a rescaled one does not
H = rng.normal(size=(200, 3))
print("coral(H, H + 5)  =", A.coral(H, H + 5.0).item())
print("coral(H, 2 H)    =", round(A.coral(H, 2 * H).item(), 4))

# features shaped (batch, graphs, sensors, feature width)
n, L, N, d = 64, 3, 4, 2
Zs = rng.normal(size=(n, L, N, d)) * np.array([1.0, 2.0, 0.5, 1.5])[None, None, :, None]
Zt_same = Zs[rng.permutation(n)]
Zt_drift = Zs.copy()
Zt_drift[:, 2] *= 3.0  # only the last graph drifts

# graph weights measure where the domains disagree
print("weights, same distribution:", np.round(A.mga_weights(Zs, Zt_same), 5))
print("weights, last graph drifts:", np.round(A.mga_weights(Zs, Zt_drift), 5))
print("normalized weights:        ", np.round(A.mga_weights(Zs, Zt_drift, "normalized"), 3))

# iSFA sits below log N when matching sensors agree and unmatched ones differ
print("log N                      ", round(math.log(N), 4))
print("iSFA, matched sensors      ", np.round(A.isfa_losses(Zs, Zt_same).values, 4))
print("iSFA, sensors rotated      ", np.round(A.isfa_losses(Zs, Zt_same[:, :, [1, 2, 3, 0]]).values, 4))

# with all sensors alike there is nothing to contrast
flat = np.repeat(Zs[:, :, :1], N, axis=2)
print("SFA, indistinguishable     ", round(A.sfa_loss(flat, flat).item(), 4))

# the combined local term for both variants
Es = rng.dirichlet(np.ones(N), size=(n, L, N))
Et = rng.dirichlet(np.ones(N) * 0.3, size=(n, L, N))
inputs = A.EndoInputs(Zs, Zt_drift, Es, Et)
for variant in ("SEA", "SEA++"):
    cfg = A.AlignmentConfig(variant=variant)
    print(f"{variant:<6} endo loss = {A.endo_loss(inputs, cfg).item():.6f}")
