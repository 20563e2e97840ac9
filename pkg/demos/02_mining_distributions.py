"""
Per-image negative sampling distributions
=========================================

Compares the Random, Uncertainty and Uncertainty/Correlation distributions
for one training image of a synthetic task, then grows a negative set for a
few epochs.
"""

import numpy as np

from zscmine.data import SyntheticSpec, build_candidate_pool, generate_synthetic, standardize
from zscmine.mining import bootstrap_negatives, image_distribution, init_mining, sample_epoch_negatives
from zscmine.model import ModelParameters, PairSet

ds = standardize(generate_synthetic(SyntheticSpec(C_total=8, C_test=2, images_per_class=10, seed=1)))
pool = build_candidate_pool(ds)
rng = np.random.default_rng(0)
model = ModelParameters.initialize(ds.d, ds.a, 8, rng, std=0.3, metric_std=0.5)

###############################################################################
# The uncertainty distribution favours candidates the model finds close to
# the image's own attributes. The correlation factor further favours
# attribute vectors typical of their class.

image = int(pool.train_indices[0])
for strategy in ("random", "uncertainty", "unc-cor"):
    cands, probs = image_distribution(strategy, model, pool, image)
    top = np.argsort(probs)[::-1][:3]
    print(f"{strategy:12s} top candidates {cands[top].tolist()} with mass {probs[top].round(4).tolist()}")

###############################################################################
# Epoch-wise growth: one random negative per positive first, then one per
# positive from the strategy until the ratio is reached.

d_plus = PairSet.positives(ds, pool.train_indices)
state = init_mining("unc-cor", pool, len(d_plus), 3, rng)
bootstrap_negatives(state, pool, d_plus)
print("epoch 1 |D-| =", len(state))
for epoch in range(2, 5):
    sample_epoch_negatives(state, model, pool, d_plus, 1)
    print(f"epoch {epoch} |D-| =", len(state))
