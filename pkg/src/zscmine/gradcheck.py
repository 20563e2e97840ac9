"""Finite-difference verification of the analytic objective gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    Hyperparameters,
    ModelParameters,
    PairSet,
    finite_difference_gradient,
    kink_margins,
    objective_gradient,
    relative_error,
)

TOLERANCE = 1e-4
STEP = 1e-5


@dataclass
class GradcheckProblem:
    params: ModelParameters
    hp: Hyperparameters
    d_plus: PairSet
    d_minus: PairSet
    features: np.ndarray


def random_problem(rng, d=6, a=4, m=3, n_pos=4, n_neg=6, min_margin=1e-3, max_tries=10000):
    """Seeded random objective instance whose hinge and ReLU arguments avoid their kinks.

    Every hinge argument and every ReLU pre-activation is at least
    ``min_margin`` away from zero, so the objective is differentiable in a
    neighbourhood wider than the finite-difference step.
    """
    for _ in range(max_tries):
        params = ModelParameters(
            W_X=rng.normal(0.0, 0.5, size=(d, a)),
            b_X=rng.normal(0.0, 0.5, size=a),
            W_A=rng.normal(0.0, 0.5, size=(a, m)),
            tau=rng.uniform(0.5, 2.0),
        )
        hp = Hyperparameters(lam=rng.uniform(0.1, 2.0), mu=rng.uniform(0.0, 0.5), m=m)
        features = rng.normal(0.0, 1.0, size=(n_pos + n_neg, d))
        d_plus = PairSet(np.arange(n_pos), rng.uniform(0.0, 1.0, size=(n_pos, a)), np.ones(n_pos))
        d_minus = PairSet(np.arange(n_pos, n_pos + n_neg), rng.uniform(0.0, 1.0, size=(n_neg, a)),
                          -np.ones(n_neg))
        hinge_gap, relu_gap = kink_margins(params, d_plus, d_minus, features)
        if hinge_gap > min_margin and relu_gap > min_margin:
            return GradcheckProblem(params, hp, d_plus, d_minus, features)
    raise RuntimeError("could not draw a kink-free gradient-check problem")


def check(problem, step=STEP):
    """Maximum coordinate-wise relative error between analytic and numeric gradients."""
    analytic = objective_gradient(problem.params, problem.hp, problem.d_plus, problem.d_minus,
                                  problem.features).flat()
    numeric = finite_difference_gradient(problem.params, problem.hp, problem.d_plus, problem.d_minus,
                                         problem.features, step=step)
    return float(relative_error(analytic, numeric).max())


def run(seed=0, points=100, **dims):
    """Check ``points`` random problems; returns the list of maximum errors."""
    rng = np.random.default_rng(seed)
    return [check(random_problem(rng, **dims)) for _ in range(points)]
