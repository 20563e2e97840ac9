"""
Dataset files, model files and the command line
===============================================

Writes a synthetic dataset to disk, reloads it, and drives the same
pipeline through the ``zscmine`` command.
"""

import tempfile
from pathlib import Path

from zscmine.cli import main
from zscmine.data import SyntheticSpec, generate_synthetic, load, save, standardize
from zscmine.model import load_model

root = Path(tempfile.mkdtemp())
# standardized features keep the ReLU units alive at initialization
manifest = save(standardize(generate_synthetic(SyntheticSpec(seed=3))), root / "data")
ds = load(manifest)
print(f"reloaded N={ds.n}, d={ds.d}, a={ds.a}, test classes {ds.classes_with_role('test')}")

###############################################################################
# The command line: train, then evaluate the saved model.

main(["train", "--data", str(manifest), "--strategy", "uncertainty", "--neg-ratio", "5", "--epochs", "20",
      "--out", str(root / "run")])
main(["evaluate", "--data", str(manifest), "--model", str(root / "run" / "model.zscm")])
params, header = load_model(root / "run" / "model.zscm")
print("model dims", header["dims"], "tau", header["tau"])
