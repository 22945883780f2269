"""How the entropy gate picks an expert.

Feeds a handful of hand-written router distributions through the selection
rule at a few thresholds, then does the same for an untrained model on random
features so you can see that an untrained router is close to uniform and hands
everything to the global expert at the default threshold.
"""

import math

import numpy as np

from moedrive.encoders import FUSED_DIM
from moedrive.experts import GLOBAL
from moedrive.model import DrivingModel
from moedrive.router import normalized_entropy, select
from moedrive.sim.world import KIND_NAMES, ScenarioKind

CASES = {
    "confident": [0.96, 0.01, 0.01, 0.01, 0.01],
    "two-way split": [0.5, 0.5, 0.0, 0.0, 0.0],
    "leaning": [0.4, 0.3, 0.1, 0.1, 0.1],
    "uniform": [0.2] * 5,
}


def name(sel):
    return "Global" if sel == GLOBAL else KIND_NAMES[ScenarioKind(sel)]


def main():
    print(f"ln2/ln5 = {math.log(2) / math.log(5):.4f}\n")
    taus = (0.0, 0.3, 0.5, 0.8, 1.0)
    print(f"{'probs':<15} {'U':>6}  " + "  ".join(f"tau={t:<4}" for t in taus))
    for label, p in CASES.items():
        u = normalized_entropy(p)
        picks = [name(select(p, t).selected) for t in taus]
        print(f"{label:<15} {u:6.3f}  " + "  ".join(f"{s:<8}" for s in picks))

    rng = np.random.default_rng(0)
    model = DrivingModel(seed=0)
    F = rng.normal(size=(500, FUSED_DIM))
    for tau in taus:
        _, sel, _, u = model.plan(F, tau=tau)
        print(f"untrained router, tau={tau:.1f}: global on {np.mean(sel == GLOBAL):6.1%} "
              f"(mean U {u.mean():.3f})")


if __name__ == "__main__":
    main()
