"""Drive the scripted oracle through every scenario kind.

Prints the outcome of one episode per kind and an ASCII view of the bird's-eye
raster at the first frame: '#' is drivable road, 'A' another car, '=' a road
marking.  The ego car is not drawn; it sits on the centre column a few rows
above the bottom edge, facing up.
"""

import argparse

import numpy as np

from moedrive.sim.evaluate import OracleAgent, run_episode
from moedrive.sim.observe import X_BACK, rasterize
from moedrive.sim.world import KIND_NAMES, ScenarioKind, spawn_scenario


def ascii_raster(grid):
    rows = []
    for i in range(grid.shape[1]):
        line = ""
        # column j grows to the ego car's left, so walk it backwards
        for j in reversed(range(grid.shape[2])):
            if grid[1, i, j]:
                line += "A"
            elif grid[2, i, j]:
                line += "="
            elif grid[0, i, j]:
                line += "#"
            else:
                line += "."
        rows.append(line)
    # row 0 is nearest the ego car in the raster, so print far rows first
    return "\n".join(reversed(rows))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--show", action="store_true", help="print the first-frame raster for each kind")
    args = ap.parse_args()
    for kind in ScenarioKind:
        if args.show:
            print(f"\n{KIND_NAMES[kind]} seed {args.seed} (ego {X_BACK:g} m above the bottom row)")
            print(ascii_raster(rasterize(spawn_scenario(kind, args.seed))))
        r = run_episode(OracleAgent(), int(kind), args.seed)
        print(f"{KIND_NAMES[kind]:<15} success={r.success!s:<5} collisions={r.collisions} "
              f"violations={r.violations} completion={r.completion:.2f} score={r.driving_score:.1f}")


if __name__ == "__main__":
    main()
