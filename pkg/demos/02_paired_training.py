"""Train the full network and its Taylorized versions side by side.

All models start from the same init and see the same minibatches.  Higher
orders should end closer to the full network, both in test accuracy and in
the direction their test logits move.  Sizes are cut down so this runs in
well under a minute; the full recipe lives in configs/blobs-train-compare.ini.
"""

from taylorized.data import make_blobs
from taylorized.metrics import layer_movement, profile_shape_distance, similarity_series
from taylorized.models import Architecture
from taylorized.train import OptimizerConfig, paired_run

data = make_blobs(n_train=512, n_test=256, dim=16, clusters_per_class=8, informative=8, seed=0)
arch = Architecture("mlp", (16, 32, 32, 2), "softplus(1)")
runs = paired_run(arch, (1, 2, 3, 4), OptimizerConfig(lr=0.05, batch_size=64, steps=600, clip=5.0), data, seed=0)

full = runs["full"]
full_profile = layer_movement(full.params_at(-1))
print(f"{'model':>5} {'test acc':>9} {'mean cos_func':>14} {'mean cos_param':>15} {'layer-shape gap':>16}")
for tag, rec in runs.items():
    if tag == "full":
        print(f"{tag:>5} {rec.test_acc[-1]:>9.3f}")
        continue
    s = similarity_series(full, rec)
    gap = profile_shape_distance(layer_movement(rec.params_at(-1)), full_profile)
    print(f"{tag:>5} {rec.test_acc[-1]:>9.3f} {s.mean_cos_func():>14.3f} {s.mean_cos_param():>15.3f} {gap:>16.3f}")
