#!/usr/bin/env python3
"""Regenerates the synthetic scenario presets in scenarios/."""
import json
import pathlib

import numpy as np


def synthetic_b(n, seed):
    # diagonal dominance keeps cond(B) small; off-diagonals are weak couplings
    rng = np.random.default_rng(seed)
    off = rng.uniform(-0.05, 0.05, size=(n, n))
    np.fill_diagonal(off, 0.0)
    diag = rng.uniform(0.8, 1.2, size=n) + np.abs(off).sum(axis=1)
    b = off + np.diag(diag)
    assert np.linalg.cond(b) < 50
    return [[round(float(v), 6) for v in row] for row in b]


def chi2_95(n):
    from scipy.stats import chi2
    return round(float(chi2.ppf(0.95, n)), 4)


root = pathlib.Path(__file__).resolve().parent.parent / "scenarios"
root.mkdir(exist_ok=True)
presets = {
    "ieee9": {
        "name": "ieee9-bus5",
        "description": "single attacked pilot bus; setpoint 0.835 pu, start 1.0 pu",
        "n_pilot": 1, "x0": 0.835, "x_init": 1.0, "alpha_ctrl": 1.0, "B": [[1.0]],
        "noise": {"process_sigma": 0.01, "measurement_sigma": 0.02},
        "a_max": 0.2, "action_step": 0.02, "eta": 5.0, "attack_norm": "l2",
        "grid": {"lower": -0.35, "upper": 0.15, "levels": 101},
    },
    "ieee39": {
        "name": "ieee39-surrogate",
        "description": "10 pilot buses, synthetic B, start 0.3 pu",
        "n_pilot": 10, "x0": 1.0, "x_init": 0.3, "alpha_ctrl": 1.0, "B": synthetic_b(10, 39),
        "noise": {"process_sigma": 0.01, "measurement_sigma": 0.02},
        "a_max": 0.2, "action_step": 0.02, "eta": chi2_95(10), "attack_norm": "linf",
        "grid": {"lower": -0.35, "upper": 0.15, "levels": 21},
    },
    "ieee118": {
        "name": "ieee118-surrogate",
        "description": "30 pilot buses, synthetic B",
        "n_pilot": 30, "x0": 1.0, "x_init": 1.0, "alpha_ctrl": 1.0, "B": synthetic_b(30, 118),
        "noise": {"process_sigma": 0.01, "measurement_sigma": 0.02},
        "a_max": 0.2, "action_step": 0.02, "eta": chi2_95(30), "attack_norm": "linf",
        "grid": {"lower": -0.35, "upper": 0.15, "levels": 21},
    },
}
for name, body in presets.items():
    (root / f"{name}.json").write_text(json.dumps(body, indent=2) + "\n")
