"""
A small recommender end to end
==============================

Build a reduced meta-dataset from a few synthetic families, evaluate majority
voting, train the final ensemble and recommend circuits for a new dataset
without computing a single kernel entry. The full 200-dataset pipeline is
``qkselect build-meta`` followed by ``qkselect train``.
"""

import numpy as np

from qkselect import complexity as cx
from qkselect import datagen as dg
from qkselect import evaluator as ev
from qkselect import metalearn as ml
from qkselect import qsim

features, scores = {}, {}
for family in ("Blobs", "Moons", "XOR", "Circles", "Spiral", "Checkerboard"):
    for i, n in enumerate((60, 80, 100)):
        name = f"{family}_{n}"
        d = dg.generate_synthetic(family, {}, n, seed=dg.dataset_seed(1, name))
        d.name = name
        features[name] = cx.extract(d)
        scores[name] = ev.score_circuits(dg.preprocess(d, seed=i))
meta = ml.make_records(features, scores, ev.TIED, 0.01, seed=1)
print(f"{len(meta)} meta-records, TIED memberships {sum(len(r.label_set) for r in meta)}")

# Majority voting over 14 classifiers, 3 seeded 80/20 splits
counter = ml.TrainingCounter()
runs = ml.mv_predictions(meta, R=3, seed=1, counter=counter)
for mode in (ev.SINGLE, ev.TIED):
    rates = ml.hit_rates(runs, ml.relabel(meta, mode, 0.01, 1), ks=(1, 3))
    print(f"{mode:<16} Top-1 {np.mean(rates[1]):.2f}  Top-3 {np.mean(rates[3]):.2f}")
print("trainings:", counter.trainings)

# Final model and a recommendation for an unseen dataset
model = ml.train_final(meta, ml.MV, cx.ALL_IN, seed=1)
new = dg.generate_synthetic("Moons", {"noise": 0.3}, 120, seed=99)
before = qsim.KERNEL_COUNTER.kernel_entries
rec = ml.recommend_topk(model, cx.extract(new), k=3)
print("recommended:", rec.ranked, "votes:", rec.votes)
print("kernel entries used by the recommendation:", qsim.KERNEL_COUNTER.kernel_entries - before)
