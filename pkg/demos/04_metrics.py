"""
Rank and linear correlation
===========================

SROCC and PLCC on hand-sized examples, the logistic mapping applied
before PLCC, and what happens with a constant predictor.
"""

import numpy as np

from nrvqa import evaluate_predictions, plcc, srocc
from nrvqa.metrics import fit_logistic, logistic4

labels = [1, 2, 3, 4, 5]

# Swapping the last two predictions costs 1 - 6 * 2 / (5 * 24).
print("srocc, one swap:", srocc([1, 2, 3, 5, 4], labels))

# SROCC only sees the order, so a monotone distortion is free.
print("srocc, exp():", srocc(np.exp(labels), labels))

# PLCC sees the scale.
print("plcc, 3 points:", round(plcc([0, 1, 2], [0, 1, 4]), 4))

# Labels that saturate at both ends of the prediction range: raw PLCC
# suffers, while the four-parameter logistic mapping absorbs the curve.
rng = np.random.default_rng(0)
pred = np.sort(rng.uniform(-3, 3, 40))
mos = logistic4(pred, 95.0, 10.0, 0.0, 0.6) + rng.normal(0, 2.0, 40)
print("raw plcc:", round(plcc(pred, mos), 4), " logistic plcc:", round(plcc(pred, mos, apply_logistic=True), 4))
mapped = fit_logistic(pred, mos)
print("mapped range:", round(float(mapped.min()), 1), "to", round(float(mapped.max()), 1))

# A collapsed model gives an undefined report instead of an exception.
print(evaluate_predictions(np.zeros(5), labels).as_dict())
