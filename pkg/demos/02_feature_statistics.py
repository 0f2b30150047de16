"""The feature-statistics projection: channelwise spatial moments of tapped
conv feature maps. This compact summary is what the latent heads read, and
what the adversarial similarity guidance compares between an input and its
reconstruction.
"""

import numpy as np

from aenib.datasets import load_digit_dataset
from aenib.models import DecoderSpec, EncoderSpec, build_model, project_feature_stats

ds = load_digit_dataset("data/mnist", "test")
model = build_model(EncoderSpec(), DecoderSpec(), np.random.default_rng(0)).eval()

# Tap the (untrained) trunk on one digit and inspect the projection.
x = ds.images[:1]
stats = model.trunk_stats(x)
print(f"tapped layers: {stats.num_layers}")
for i, (m, s) in enumerate(stats.to_arrays()):
    print(f"  stage {i}: {m.shape[-1]:3d} channels | mean of m = {m.mean():+.3f} "
          f"| mean of s = {s.mean():.3f}")
flat = stats.flat()
print("flattened projection dimension:", flat.shape[-1])

# The moments ignore *where* things are: a spatial shuffle leaves them alone.
fm = np.random.default_rng(1).random((6, 6, 3))
shuffled = fm.reshape(36, 3)[np.random.default_rng(2).permutation(36)].reshape(6, 6, 3)
a = project_feature_stats([fm]).to_arrays()[0]
b = project_feature_stats([shuffled]).to_arrays()[0]
print("moments invariant to spatial permutation:",
      np.allclose(a[0], b[0]) and np.allclose(a[1], b[1]))
