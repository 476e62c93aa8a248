"""
Objective metrics and average rank
==================================

The metric functions work on plain embedding or probability matrices, so
they can be tried without any audio at all.
"""

import numpy as np

from videomusic.metrics import alignment_score, average_rank, density_coverage, frechet, prediction_kl

rng = np.random.default_rng(0)
ref = rng.standard_normal((200, 8))

###############################################################################
# Frechet distance grows as the generated set drifts away from the reference.

for shift in (0.0, 0.25, 0.5, 1.0):
    gen = rng.standard_normal((200, 8)) + shift
    d, c = density_coverage(gen, ref, k=5)
    print(f"shift {shift:4.2f}  frechet {frechet(gen, ref):6.3f}  density {d:.3f}  coverage {c:.3f}")

print("frechet(ref, ref) =", frechet(ref, ref))

###############################################################################
# KL between tagger predictions, reference first.  A one-hot reference
# against a uniform prediction gives ln 2 for two classes.

print("KL =", prediction_kl([[0.5, 0.5]], [[1.0, 0.0]]), "ln 2 =", np.log(2))

a = rng.standard_normal((10, 4))
print("alignment with itself:", alignment_score(a, a))

###############################################################################
# Average rank over an ablation table.  KL, FD and FAD are better when
# lower; density, coverage and the alignment score when higher.  Tied
# cells share the mean of their rank positions.

table = np.array([
    [0.820, 51.101, 4.117, 1.430, 0.74, 0.148],
    [0.849, 41.131, 2.709, 1.406, 0.803, 0.181],
    [0.843, 41.354, 2.413, 1.487, 0.840, 0.193],
    [0.800, 51.540, 4.343, 1.271, 0.787, 0.145],
    [0.830, 41.154, 2.562, 1.278, 0.823, 0.176],
    [0.849, 40.032, 2.418, 1.538, 0.843, 0.193],
    [0.819, 50.667, 4.069, 1.515, 0.743, 0.153],
    [0.857, 42.106, 2.790, 1.476, 0.753, 0.187],
    [0.824, 38.942, 2.299, 1.573, 0.843, 0.180],
])
settings = [(d, f) for f in (2, 4, 8) for d in (5, 15, 30)]
ar = average_rank(table, ["lower"] * 3 + ["higher"] * 3)
for (dur, fps), r in zip(settings, ar):
    print(f"{dur:2d} s at {fps} fps: AR {r:.2f}")
