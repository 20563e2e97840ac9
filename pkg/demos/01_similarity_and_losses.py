"""
Similarity, losses and the weighted objective
=============================================

Builds a tiny model by hand, scores a few image/attribute pairs and checks
the analytic gradient against central finite differences.
"""

import numpy as np

from zscmine import gradcheck
from zscmine.model import (
    Hyperparameters,
    ModelParameters,
    PairSet,
    embed,
    hinge_loss,
    objective_gradient,
    similarity,
    weighted_objective,
)

###############################################################################
# An identity embedding and metric: the similarity is then the plain
# Euclidean distance between the clamped features and the attributes.

params = ModelParameters(np.eye(2), np.zeros(2), np.eye(2), tau=1.0)
x = np.array([1.0, -2.0])
print("embed(x) =", embed(params, x))
print("S(x, (0, 0)) =", similarity(params, x, np.zeros(2)))
print("hinge, positive pair at S^2 = 1, tau = 0.5:", hinge_loss(1.0, +1, 0.5))

###############################################################################
# Two positives and three negatives. Positive terms are averaged over D+,
# negative terms over D-, so each side carries the same total weight.

features = np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0], [2.0, 1.0], [1.0, 1.0]])
d_plus = PairSet([0, 1], [[1.0, 0.0], [0.5, 0.5]], [1, 1])
d_minus = PairSet([2, 3, 4], [[1.0, 0.0], [0.0, 0.0], [2.0, 2.0]], [-1, -1, -1])
hp = Hyperparameters(lam=1.0, mu=0.01)
print("objective =", weighted_objective(params, hp, d_plus, d_minus, features))
grad = objective_gradient(params, hp, d_plus, d_minus, features)
print("dL/dtau =", grad.tau)

###############################################################################
# Finite-difference check on random kink-free problems.

errors = gradcheck.run(seed=0, points=20)
print(f"max relative gradient error over 20 problems: {max(errors):.2e}")
