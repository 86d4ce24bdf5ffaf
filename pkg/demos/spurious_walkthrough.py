"""One seed of the spurious-correlation experiment, epoch by epoch.

Trains a single generator and a three-generator model on the same planted
corpus and prints test F1 of each generator after every epoch, together with
the pairwise disagreement of the sampled masks.  Takes about a minute and a
half on one CPU.

Run: python demos/spurious_walkthrough.py [seed]
"""

import sys

import numpy as np

from mgr import experiments
from mgr.data import generate_synthetic

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
spec, _ = experiments.spurious_setup(seed)
corpus = generate_synthetic(spec)
print(f"corpus: {len(corpus.train)} train examples, spurious span present with prob {spec.rho}")

for n in (1, 3):
    _, cfg = experiments.spurious_setup(seed, n=n)
    r = experiments.run_method(corpus, cfg, track=True)
    print(f"\n{r.method}: best epoch {r.best_epoch}, test F1 {r.f1_g1:.3f}, acc {r.accuracy:.3f}, {r.seconds:.0f}s")
    for epoch, (f1s, ov) in enumerate(zip(r.curve, r.overlaps), 1):
        gens = " ".join(f"{f:.3f}" for f in f1s)
        print(f"  epoch {epoch:2d}  F1 per generator [{gens}]  overlap {ov:.3f}")
    if n > 1:
        print(f"  final epoch: generator 1 {r.final_f1s[0]:.3f} vs mean {np.mean(r.final_f1s):.3f}")
