"""Built-in benchmark plants and reference certificates.

``two-state`` is a two-parameter, two-state plant with an open-loop unstable
second vertex matrix; ``five-state`` has a seeded random ground truth on a
three-parameter box.
"""
from __future__ import annotations

import numpy as np

from .lpv import LpvaPlant, ParamPolytope, make_rng

TWO_STATE_A = np.array([
    [[-0.2396, -0.5845], [0.5845, -0.2396]],
    [[-0.1696, 0.8434], [0.8434, 0.4140]],
])
TWO_STATE_B = np.array([[0.0, -1.0072], [0.4848, 0.0]])
TWO_STATE_VERTICES = np.array([[0.0, 1.0], [0.0, -1.0], [2.0, 1.0], [2.0, -1.0]])
TWO_STATE_A2_EIGS = np.array([-0.7703, 1.0146])

# Four-decimal reference certificates for the two-state plant, vertex order
# as in TWO_STATE_VERTICES.
REFERENCE_CT_GAINS = np.array([
    [[-4.5348, -10.0625], [9.9319, 6.7597]],
    [[-4.7998, -10.5553], [10.7794, 7.1231]],
    [[-4.7566, -9.8257], [9.5553, 6.4091]],
    [[-4.7646, -9.7462], [9.8597, 6.4104]],
])
REFERENCE_CT_P = np.array([[0.0738, -0.0149], [-0.0149, 0.0361]])
REFERENCE_DT_GAINS = np.array([
    [[-1.2258, -0.6755], [-0.1672, 0.7948]],
    [[1.2258, 0.6755], [0.1672, -0.7948]],
    [[-3.4132, 0.1113], [-0.6730, -0.3555]],
    [[-0.5723, 1.4858], [-0.3528, -1.9440]],
])
REFERENCE_DT_P = np.array([[0.0588, 0.0014], [0.0014, 0.1022]])
REFERENCE_DT_H2_GAMMA = 9.334

FIVE_STATE_LOWER = np.array([-0.3, 0.2, 0.5])
FIVE_STATE_UPPER = np.array([0.3, 0.8, 1.5])
FIVE_STATE_SEED = 0
FIVE_STATE_SCALE = 0.6

PLANT_NAMES = ("two-state", "five-state")


def two_state_h2_spec():
    """``(C, D, F)`` penalising both states and both inputs (weight 2) under unit noise."""
    C = np.vstack([np.eye(2), np.zeros((2, 2))])
    D = np.vstack([np.zeros((2, 2)), np.sqrt(2.0) * np.eye(2)])
    return C, D, np.eye(2)


def five_state_matrices(seed=FIVE_STATE_SEED, scale=FIVE_STATE_SCALE):
    """Random ``(A_list, B)`` with ``n = 5``, ``m = 3``, ``L = 3``.

    Entries are Gaussian with ``A_ℓ`` scaled by ``scale / sqrt(n)`` and ``B``
    by ``1 / sqrt(m)``. The default seed gives a plant that is open-loop
    unstable at some vertex of the box.
    """
    rng = make_rng(seed)
    A = scale * rng.standard_normal((3, 5, 5)) / np.sqrt(5)
    B = rng.standard_normal((5, 3)) / np.sqrt(3)
    return A, B


def builtin_plant(name, domain, seed=None):
    """Return ``(plant, polytope)`` for a named built-in."""
    if name == "two-state":
        return LpvaPlant(TWO_STATE_A, TWO_STATE_B, domain), ParamPolytope(TWO_STATE_VERTICES)
    if name == "five-state":
        A, B = five_state_matrices(FIVE_STATE_SEED if seed is None else seed)
        return LpvaPlant(A, B, domain), ParamPolytope.box(FIVE_STATE_LOWER, FIVE_STATE_UPPER)
    raise KeyError(f"unknown built-in plant {name!r}; choose from {', '.join(PLANT_NAMES)}")
