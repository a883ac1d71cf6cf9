"""
From one dataset to one meta-record
===================================

Generate a dataset, describe it with the 24 complexity measures, score all
nine circuits with the three kernel classifiers, and derive both label sets.
"""

from qkselect import complexity as cx
from qkselect import datagen as dg
from qkselect import evaluator as ev

d = dg.generate_synthetic("Moons", {"noise": 0.2}, 150, seed=4)

# Complexity features need no quantum computation
features = cx.extract(d)
for m in ("F1", "N1", "N4", "L2", "Density", "T4"):
    print(f"{m:<8} {features.values[m]:.3f}")

# Ground truth: angle encoding, 80/20 split, then SVC / GPC / KRC per circuit
scores = ev.score_circuits(dg.preprocess(d, seed=4))
for s in sorted(scores, key=lambda s: -s.best_accuracy):
    accs = " ".join(f"{k}={v:.3f}" for k, v in s.per_classifier_accuracy.items())
    print(f"{s.circuit_id:<10} best {s.best_accuracy:.3f}  ({accs})")

# SINGLE keeps one winner; TIED keeps every circuit within epsilon of it
print("SINGLE:", ev.label(scores, ev.SINGLE, seed=4).circuits)
for eps in (0.0, 0.01, 0.05):
    print(f"TIED eps={eps}:", ev.label(scores, ev.TIED, eps).circuits)
