"""
Convergence speed per mining strategy
=====================================

Epochs needed to reach 95% of the final accuracy, and the learning curve of
one run per strategy.
"""

from zscmine.data import SyntheticSpec, generate_synthetic, standardize
from zscmine.experiments import convergence_study, default_config

ds = standardize(generate_synthetic(SyntheticSpec(min_prototype_correlation=0.8)))
study = convergence_study(ds, default_config(neg_ratio=10, epochs=30), seeds=range(3))
for strategy, entry in study.items():
    curve = entry["curves"][0]
    head = ", ".join(f"{a:.2f}" for a in curve.val_accuracy[:6])
    print(f"{strategy:12s} epochs to 95%: {entry['epochs']} (mean {entry['mean']:.1f}); first accuracies {head}")
