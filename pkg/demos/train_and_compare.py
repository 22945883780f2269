"""Small end-to-end run: record data, train two variants, compare them closed-loop.

The defaults finish in about a minute on one CPU.  At that size each scene
expert sees a fifth of a tiny dataset and the single expert usually wins;
raise --clips and --epochs (50 and 32 match the desk-scale acceptance run)
before reading anything into the comparison.
"""

import argparse
import tempfile
import time
from pathlib import Path

from moedrive.model import ModelAgent
from moedrive.sim.evaluate import evaluate_closed_loop, eval_scenarios
from moedrive.sim.rollout import generate_dataset, load_dataset
from moedrive.sim.world import ScenarioKind
from moedrive.trainer import TrainConfig, router_accuracy, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--clips", type=int, default=20, help="clips per scenario kind")
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--episodes", type=int, default=5, help="evaluation episodes per kind")
    ap.add_argument("--variants", default="geminus,single_expert")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        data = Path(tmp) / "data"
        t0 = time.perf_counter()
        generate_dataset(data, {k: args.clips for k in ScenarioKind}, seed=0)
        ds = load_dataset(data)
        print(f"dataset: {len(ds)} samples in {time.perf_counter() - t0:.0f} s")

        for variant in args.variants.split(","):
            t0 = time.perf_counter()

            def progress(log):
                print(f"  {variant} epoch {log.epoch:2d} loss {log.losses.total:.3f}")

            model, _ = train(TrainConfig(epochs=args.epochs, variant=variant), ds, on_epoch=progress)
            m = evaluate_closed_loop(lambda: ModelAgent(model), eval_scenarios(args.episodes))
            # single_expert never consults its router
            acc = "n/a" if variant == "single_expert" else f"{router_accuracy(model, ds.split('val'))['overall']:.1%}"
            print(f"{variant}: trained in {time.perf_counter() - t0:.0f} s, val router accuracy {acc}, "
                  f"success {m.success_rate:.1f}%, driving score {m.driving_score:.1f}")
            print("  per kind: " + ", ".join(f"{k} {v:.0f}%" for k, v in m.per_ability.items()))


if __name__ == "__main__":
    main()
