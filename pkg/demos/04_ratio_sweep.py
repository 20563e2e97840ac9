"""
Negative-to-positive ratio sweep
================================

On a task whose class prototypes are strongly correlated, more negative
pairs per positive improve zero-shot accuracy.
"""

from zscmine.data import SyntheticSpec, generate_synthetic, standardize
from zscmine.experiments import default_config, ratio_sweep, sweep_csv

ds = standardize(generate_synthetic(SyntheticSpec(min_prototype_correlation=0.8)))
table = ratio_sweep(ds, default_config(), ratios=[1, 10], seeds=range(3))
print(sweep_csv(table, metadata={"seeds": [0, 1, 2]}))
