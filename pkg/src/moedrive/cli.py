"""Command-line entry point.

Subcommands: ``gen-data``, ``train``, ``eval``, ``sweep-tau`` and ``ablate``.
Each writes its artifacts plus a ``manifest.json`` into the output directory
and removes what it wrote if it fails part way.

Exit codes: 0 success, 2 bad usage, 3 malformed config or arguments,
4 dataset problems (missing files, hash mismatches), 5 checkpoint problems,
6 output directory not writable, 1 anything else.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import shutil
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import reports
from .model import VARIANTS, CheckpointError, DrivingModel, ModelAgent, file_hash
from .router import DEFAULT_TAU
from .sim.evaluate import Metrics, evaluate_closed_loop, eval_scenarios
from .sim.rollout import DatasetError, generate_dataset, load_dataset
from .sim.world import KIND_NAMES, ScenarioKind
from .trainer import ConfigError, TrainConfig, read_config, router_accuracy, train, write_config

log = logging.getLogger("moedrive")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_MODEL = 5
EXIT_OUTPUT = 6


@dataclass
class RunManifest:
    command: str
    config_hash: str | None = None
    dataset_manifest_hash: str | None = None
    checkpoint_hash: str | None = None
    seed: int | None = None
    params: dict = field(default_factory=dict)
    started: float = field(default_factory=time.time)
    finished: float | None = None

    def identity(self) -> str:
        """Hash of everything except the timestamps; stamped on every artifact."""
        d = dataclasses.asdict(self)
        d.pop("started")
        d.pop("finished")
        return reports.canonical_hash(d)

    def to_json(self) -> str:
        return json.dumps(dict(dataclasses.asdict(self), manifest_hash=self.identity()), indent=2,
                          sort_keys=True) + "\n"


class Outputs:
    """Tracks files written under ``root``; deletes them if the block raises."""

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.created_root = not self.root.exists()
        self.written: list[Path] = []

    def __enter__(self):
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OutputError(f"cannot create output directory {self.root}: {exc}") from exc
        return self

    def path(self, name: str) -> Path:
        p = self.root / name
        self.written.append(p)
        return p

    def write(self, name: str, text: str) -> Path:
        p = self.path(name)
        tmp = p.with_name(p.name + ".partial")
        try:
            tmp.write_text(text)
            tmp.replace(p)
        except OSError as exc:
            tmp.unlink(missing_ok=True)
            raise OutputError(f"cannot write {p}: {exc}") from exc
        return p

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            return False
        for p in self.written:
            if p.is_dir():
                shutil.rmtree(p, ignore_errors=True)
            else:
                p.unlink(missing_ok=True)
        if self.created_root:
            shutil.rmtree(self.root, ignore_errors=True)
        return False


class OutputError(OSError):
    pass


# ---------------------------------------------------------------- argument helpers

def parse_kinds(text: str) -> list[ScenarioKind]:
    if text.strip().lower() == "all":
        return list(ScenarioKind)
    lookup = {}
    for k in ScenarioKind:
        lookup[k.name.lower()] = k
        lookup[KIND_NAMES[k].lower()] = k
        lookup[str(int(k))] = k
    kinds = []
    for part in text.split(","):
        key = part.strip().lower().replace("-", "_")
        if key not in lookup and key.replace("_", "") not in lookup:
            raise ConfigError(f"unknown scenario {part!r}; choose from {', '.join(KIND_NAMES.values())}")
        kinds.append(lookup.get(key, lookup.get(key.replace("_", ""))))
    if len(set(kinds)) != len(kinds):
        raise ConfigError("scenario listed twice")
    return kinds


def parse_counts(text: str, n: int) -> list[int]:
    try:
        counts = [int(c) for c in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"clip counts must be integers, got {text!r}") from exc
    if len(counts) == 1:
        counts = counts * n
    if len(counts) != n:
        raise ConfigError(f"{len(counts)} clip counts for {n} scenarios")
    if any(c < 0 for c in counts) or sum(counts) == 0:
        raise ConfigError("clip counts must be non-negative with a positive total")
    return counts


def parse_seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"seeds must be integers, got {text!r}") from exc


def parse_variants(text: str) -> list[str]:
    chosen = [v.strip() for v in text.split(",") if v.strip()]
    bad = [v for v in chosen if v not in VARIANTS]
    if bad or not chosen:
        raise ConfigError(f"unknown variants {bad}; expected some of {list(VARIANTS)}")
    # keep the canonical table order whatever order was typed
    return [v for v in VARIANTS if v in chosen]


def load_checkpoint(path) -> DrivingModel:
    return DrivingModel.load(path)


def check_dataset_matches(model: DrivingModel, ds) -> None:
    expected = model.meta.get("dataset_manifest_sha256")
    if expected and expected != ds.manifest_hash:
        raise DatasetError(f"dataset manifest hash {ds.manifest_hash[:12]} does not match the "
                           f"checkpoint's training data {expected[:12]}")


def evaluate_model(model: DrivingModel, episodes: int, tau: float) -> Metrics:
    return evaluate_closed_loop(lambda: ModelAgent(model, tau=tau, record_trace=True), eval_scenarios(episodes))


# ---------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    kinds = parse_kinds(args.scenarios)
    counts = parse_counts(args.clips_per_scenario, len(kinds))
    if not 0.0 <= args.val_fraction < 1.0:
        raise ConfigError("val fraction must lie in [0, 1)")
    out = Path(args.out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create {out.parent}: {exc}") from exc
    if out.exists():
        shutil.rmtree(out)
    try:
        manifest = generate_dataset(out, {int(k): c for k, c in zip(kinds, counts)}, seed=args.seed,
                                    val_fraction=args.val_fraction, noise=args.noise)
    except OSError as exc:
        raise OutputError(str(exc)) from exc
    n_val = sum(c["split"] == "val" for c in manifest["clips"])
    print(f"wrote {len(manifest['clips'])} clips ({len(manifest['clips']) - n_val} train / {n_val} val) to {out}")
    return EXIT_OK


def _train_one(cfg: TrainConfig, ds, outs: Outputs, stem: str = "") -> tuple[DrivingModel, Path]:
    log_lines = []

    def on_epoch(entry):
        log_lines.append(entry.to_json())
        log.info("%sepoch %d/%d total %.4f lr %.1e", stem, entry.epoch + 1, cfg.epochs, entry.losses.total, entry.lr)

    model, _ = train(cfg, ds, on_epoch=on_epoch)
    val = ds.split("val")
    if len(val):
        acc = router_accuracy(model, val)
        model.meta["val_router_accuracy"] = acc
        log_lines.append(json.dumps({"val_router_accuracy": acc}, sort_keys=True))
    ckpt = outs.path(f"{stem}model.ckpt")
    model.save(ckpt)
    outs.write(f"{stem}train_log.jsonl", "\n".join(log_lines) + "\n")
    return model, ckpt


def _config_from_args(args) -> TrainConfig:
    cfg = read_config(args.config) if args.config else TrainConfig()
    overrides = {k: getattr(args, k) for k in ("epochs", "seed", "variant", "batch_size")
                 if getattr(args, k, None) is not None}
    try:
        return dataclasses.replace(cfg, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    ds = load_dataset(args.data)
    with Outputs(args.out) as outs:
        write_config(cfg, outs.path("config.ini"))
        model, ckpt = _train_one(cfg, ds, outs)
        man = RunManifest("train", config_hash=file_hash(outs.root / "config.ini"),
                          dataset_manifest_hash=ds.manifest_hash, checkpoint_hash=file_hash(ckpt), seed=cfg.seed,
                          params={"variant": cfg.variant, "epochs": cfg.epochs, "batch_size": cfg.batch_size})
        man.finished = time.time()
        outs.write("manifest.json", man.to_json())
    acc = model.meta.get("val_router_accuracy", {}).get("overall", math.nan)
    print(f"checkpoint {ckpt} (validation router accuracy {100 * acc:.1f}%)")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    tau = args.tau if args.tau is not None else float(model.meta.get("tau", DEFAULT_TAU))
    if not 0.0 <= tau <= 1.0:
        raise ConfigError("tau must lie in [0, 1]")
    if args.episodes_per_scenario <= 0:
        raise ConfigError("episodes per scenario must be positive")
    val_acc = None
    ds_hash = model.meta.get("dataset_manifest_sha256")
    if args.data:
        ds = load_dataset(args.data)
        check_dataset_matches(model, ds)
        val = ds.split("val")
        if len(val) == 0:
            raise DatasetError(f"dataset {args.data} has no validation clips")
        val_acc = router_accuracy(model, val)
        val_n = {KIND_NAMES[k]: int(np.sum(val.kind == int(k))) for k in ScenarioKind}
    m = evaluate_model(model, args.episodes_per_scenario, tau)
    man = RunManifest("eval", dataset_manifest_hash=ds_hash, checkpoint_hash=file_hash(args.checkpoint),
                      seed=None, params={"tau": tau, "episodes_per_scenario": args.episodes_per_scenario,
                                         "variant": model.variant})
    h = man.identity()
    cl_acc = reports.closed_loop_router_accuracy(m)
    with Outputs(args.report) as outs:
        outs.write("episodes.csv", reports.csv_text(reports.EPISODE_HEADER, reports.episode_rows(m), h))
        outs.write("summary.csv", reports.csv_text(reports.SUMMARY_HEADER, reports.summary_rows(
            m, {"tau": tau, "global_utilization": reports.global_share(m)}), h))
        outs.write("abilities.csv", reports.csv_text(reports.ABILITY_HEADER, reports.ability_rows(m), h))
        rows = []
        for k in ScenarioKind:
            name = KIND_NAMES[k]
            rows.append([name, val_n[name] if val_acc else 0, val_acc[k.name] if val_acc else math.nan,
                         cl_acc[name]])
        rows.append(["overall", sum(val_n.values()) if val_acc else 0,
                     val_acc["overall"] if val_acc else math.nan, cl_acc["overall"]])
        outs.write("router_accuracy.csv", reports.csv_text(reports.ROUTER_HEADER, rows, h))
        outs.write("utilization.csv", reports.csv_text(reports.UTIL_HEADER, reports.utilization_rows(m), h))
        outs.write("traces.csv", reports.csv_text(reports.TRACE_HEADER, reports.trace_rows(m), h))
        man.finished = time.time()
        outs.write("manifest.json", man.to_json())
    print(f"success rate {m.success_rate:.1f}%  driving score {m.driving_score:.2f}  "
          f"ability mean {m.ability_mean:.1f}%  ->  {args.report}")
    return EXIT_OK


def tau_grid(start: float, stop: float, step: float) -> list[float]:
    if step <= 0 or stop < start or not (0.0 <= start <= 1.0 and 0.0 <= stop <= 1.0):
        raise ConfigError("need 0 <= from <= to <= 1 and step > 0")
    n = int(round((stop - start) / step))
    return [round(start + i * step, 10) for i in range(n + 1)]


def cmd_sweep_tau(args) -> int:
    model = load_checkpoint(args.checkpoint)
    taus = tau_grid(args.tau_from, args.tau_to, args.step)
    if args.episodes_per_scenario <= 0:
        raise ConfigError("episodes per scenario must be positive")
    rows = []
    for tau in taus:
        m = evaluate_model(model, args.episodes_per_scenario, tau)
        rows.append([tau, m.driving_score, m.success_rate, m.ability_mean, reports.global_share(m)])
        log.info("tau %.2f: score %.2f success %.1f global %.3f", tau, rows[-1][1], rows[-1][2], rows[-1][4])
    man = RunManifest("sweep-tau", dataset_manifest_hash=model.meta.get("dataset_manifest_sha256"),
                      checkpoint_hash=file_hash(args.checkpoint),
                      params={"taus": taus, "episodes_per_scenario": args.episodes_per_scenario})
    h = man.identity()
    with Outputs(args.out) as outs:
        outs.write("sweep.csv", reports.csv_text(reports.SWEEP_HEADER, rows, h))
        outs.write("sweep.svg", reports.line_plot_svg([r[0] for r in rows], [r[1] for r in rows], h,
                                                      "Driving score vs uncertainty threshold", "tau",
                                                      "driving score"))
        man.finished = time.time()
        outs.write("manifest.json", man.to_json())
    for r in rows:
        print(f"tau {r[0]:.2f}  score {r[1]:6.2f}  success {r[2]:5.1f}%  global {100 * r[4]:5.1f}%")
    return EXIT_OK


def cmd_ablate(args) -> int:
    base = _config_from_args(args)
    seeds = parse_seeds(args.seeds)
    variants = parse_variants(args.variants)
    ds = load_dataset(args.data)
    per_seed = []
    with Outputs(args.out) as outs:
        write_config(base, outs.path("config.ini"))
        ckpt_hashes = []
        for variant in variants:
            for seed in seeds:
                cfg = dataclasses.replace(base, variant=variant, seed=seed)
                model, ckpt = _train_one(cfg, ds, outs, stem=f"{variant}_s{seed}_")
                ckpt_hashes.append(file_hash(ckpt))
                m = evaluate_model(model, args.episodes_per_scenario, cfg.tau)
                per_seed.append([variant, seed, m.driving_score, m.success_rate, m.ability_mean])
                log.info("%s seed %d: success %.1f score %.2f", variant, seed, m.success_rate, m.driving_score)
        table = []
        for variant in variants:
            sub = np.array([r[2:] for r in per_seed if r[0] == variant])
            table.append([variant, *sub.mean(axis=0)])
        man = RunManifest("ablate", config_hash=file_hash(outs.root / "config.ini"),
                          dataset_manifest_hash=ds.manifest_hash,
                          checkpoint_hash=reports.canonical_hash(ckpt_hashes), seed=seeds[0],
                          params={"seeds": seeds, "variants": variants,
                                  "episodes_per_scenario": args.episodes_per_scenario})
        h = man.identity()
        outs.write("ablation.csv", reports.csv_text(reports.ABLATION_HEADER, table, h))
        outs.write("ablation_seeds.csv", reports.csv_text(reports.ABLATION_SEED_HEADER, per_seed, h))
        man.finished = time.time()
        outs.write("manifest.json", man.to_json())
    print(f"{'variant':<14} {'score':>7} {'success':>8} {'ability':>8}")
    for r in table:
        print(f"{r[0]:<14} {r[1]:7.2f} {r[2]:7.1f}% {r[3]:7.1f}%")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="moedrive", description="Desk-scale mixture-of-experts driving pipeline.")
    p.add_argument("-v", "--verbose", action="store_true", help="progress logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="roll out the scripted oracle into a dataset")
    g.add_argument("--scenarios", default="all", help="'all' or comma list, e.g. Merging,GiveWay")
    g.add_argument("--clips-per-scenario", default="50", help="one count, or one per listed scenario")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--val-fraction", type=float, default=0.05)
    g.add_argument("--noise", type=float, default=0.3, help="control disturbance while recording")
    g.set_defaults(func=cmd_gen_data)

    def train_opts(sp):
        sp.add_argument("--config", help="INI run config; defaults apply when omitted")
        sp.add_argument("--data", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--batch-size", type=int)
        sp.add_argument("--seed", type=int)

    t = sub.add_parser("train", help="train one model")
    train_opts(t)
    t.add_argument("--variant", choices=VARIANTS)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="closed-loop evaluation and routing report")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes-per-scenario", type=int, default=20)
    e.add_argument("--tau", type=float)
    e.add_argument("--report", required=True, help="output directory")
    e.add_argument("--data", help="dataset the checkpoint was trained on, for validation router accuracy")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep-tau", help="evaluate over a grid of uncertainty thresholds")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--from", dest="tau_from", type=float, default=0.0)
    s.add_argument("--to", dest="tau_to", type=float, default=1.0)
    s.add_argument("--step", type=float, default=0.1)
    s.add_argument("--episodes-per-scenario", type=int, default=20)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep_tau)

    a = sub.add_parser("ablate", help="train and evaluate the model variants side by side")
    train_opts(a)
    a.add_argument("--seeds", default="0", help="comma list of training seeds")
    a.add_argument("--variants", default=",".join(VARIANTS), help="comma list; all four by default")
    a.add_argument("--episodes-per-scenario", type=int, default=20)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CheckpointError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_OUTPUT
