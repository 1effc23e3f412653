"""The loss zoo: redundancy reduction, contrastive, predictor/stop-gradient,
and the continual regularizers (plain and projected feature distillation).

The highlight is the null-space property: a feature direction the temporal
projector ignores is free under the projected penalty but taxed by plain
distillation -- that asymmetry is what preserves plasticity.
"""
import numpy as np

from cssl.autodiff import Tensor
from cssl.losses import (barlow_loss, barlow_twins_loss, cosine_sim,
                         cross_correlation, fd_loss, ntxent_loss, pfr_loss)
from cssl.models import ModelArch, build_model

rng = np.random.default_rng(0)

# Perfectly aligned, decorrelated views: the correlation matrix is the identity
# and the redundancy-reduction loss vanishes.
z = Tensor(np.eye(4))
c = cross_correlation(z, z, standardize=False)
print("C on orthonormal self-views:\n", np.round(c.data, 3))
print("loss at C=I:", barlow_loss(c).item())

# Independent noise views: strong invariance penalty.
za, zb = Tensor(rng.standard_normal((16, 4))), Tensor(rng.standard_normal((16, 4)))
print("loss on unrelated views:", round(barlow_twins_loss(za, zb).item(), 3))

# Contrastive NT-Xent: identical embeddings give exactly log(2B-1).
b = 8
same = Tensor(np.tile(rng.standard_normal(6), (b, 1)))
print("ntxent at uniform logits:", ntxent_loss(same, same, 0.5).item(),
      "== log(2B-1):", np.log(2 * b - 1))

# Cosine alignment: -1 at perfect alignment, +1 at opposition.
a = Tensor(rng.standard_normal((5, 6)))
print("S(a,a) =", cosine_sim(a, Tensor(a.data.copy())).item(),
      " S(a,-a) =", cosine_sim(a, Tensor(-a.data)).item())

# The null-space property. Build a temporal projector and kill one input
# column of its first linear layer; perturbing features along that direction
# changes the projected penalty not at all, while plain distillation pays.
arch = ModelArch(input_dim=6, hidden=(8,), feature_dim=6, proj_hidden=8,
                 proj_dim=6, temporal_hidden=8)
bundle = build_model(arch, 1, with_temporal=True)
dead = 3
bundle.temporal.layers[0].W.data[dead, :] = 0.0

feats = rng.standard_normal((10, 6))
prev = feats.copy()
bumped = feats.copy()
bumped[:, dead] += 1.0  # a brand-new feature direction

base = pfr_loss(bundle.temporal.forward(Tensor(feats)), Tensor(prev)).item()
after = pfr_loss(bundle.temporal.forward(Tensor(bumped)), Tensor(prev)).item()
print("projected penalty before/after new-direction bump:", base, after,
      "| unchanged:", base == after)
print("plain distillation before/after:",
      round(fd_loss(Tensor(feats), Tensor(prev)).item(), 6),
      round(fd_loss(Tensor(bumped), Tensor(prev)).item(), 6))
