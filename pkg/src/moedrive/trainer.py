"""Loss composition and the joint training loop.

Per sample, with targets from the oracle:

    Global   = l_traj * |w - w_g|_1 + l_F * ||j_g - j*||_2 + l_V * (v_g - v*)^2
    Adaptive = same three terms on the scene expert of the sample's scenario
    scenario = -ln p_router[scenario]
    speed    = |speed_pred - speed|
    total    = l_Global * Global + l_Adaptive * Adaptive + l_scenario * scenario
               + l_speed * speed (+ l_balance * balance for vanilla_moe)

Batch losses are means over samples.  Scene experts see only the rows of
their own scenario, so an expert whose scenario is absent from a batch gets a
gradient of exactly zero.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import numerics as nx
from .experts import N_SCENE
from .model import VARIANTS, DrivingModel
from .numerics import Node
from .sim.rollout import Dataset, DatasetError
from .sim.world import K_WAYPOINTS, ScenarioKind

log = logging.getLogger(__name__)

BALANCE_COEF = 0.01


@dataclass(frozen=True)
class LossWeights:
    traj: float = 1.0
    feature: float = 0.05
    value: float = 0.001
    global_: float = 1.0
    adaptive: float = 1.0
    scenario: float = 1.0
    speed: float = 0.05
    balance: float = BALANCE_COEF

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be non-negative")


@dataclass
class LossBreakdown:
    traj_global: float = 0.0
    F_global: float = 0.0
    V_global: float = 0.0
    traj_adaptive: float = 0.0
    F_adaptive: float = 0.0
    V_adaptive: float = 0.0
    scenario: float = 0.0
    speed: float = 0.0
    balance: float = 0.0
    total: float = 0.0

    def recompute_total(self, w: LossWeights) -> float:
        g = w.traj * self.traj_global + w.feature * self.F_global + w.value * self.V_global
        a = w.traj * self.traj_adaptive + w.feature * self.F_adaptive + w.value * self.V_adaptive
        return (w.global_ * g + w.adaptive * a + w.scenario * self.scenario + w.speed * self.speed
                + w.balance * self.balance)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-7
    batch_size: int = 96
    epochs: int = 32
    lr_decay_factor: float = 2.0
    lr_decay_fraction: float = 30.0 / 32.0
    seed: int = 0
    tau: float = 0.5
    variant: str = "geminus"
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size <= 0 or self.epochs <= 0:
            raise ValueError("lr, batch_size and epochs must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")

    @property
    def decay_epoch(self) -> int:
        return int(round(self.epochs * self.lr_decay_fraction))

    def lr_at(self, epoch: int) -> float:
        return self.lr / self.lr_decay_factor if epoch >= self.decay_epoch else self.lr

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["weights"] = dataclasses.asdict(self.weights)
        return d


class ConfigError(ValueError):
    pass


_WEIGHT_KEYS = {f"lambda_{f.name.rstrip('_')}": f.name for f in dataclasses.fields(LossWeights)}


def write_config(cfg: TrainConfig, path: Path | str):
    cp = configparser.ConfigParser()
    cp["train"] = {k: str(v) for k, v in cfg.to_dict().items() if k != "weights"}
    cp["loss"] = {key: str(getattr(cfg.weights, attr)) for key, attr in _WEIGHT_KEYS.items()}
    with open(path, "w") as fh:
        cp.write(fh)


def read_config(path: Path | str) -> TrainConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"missing config file {path}")
    cp = configparser.ConfigParser()
    try:
        cp.read(path)
        kwargs = {}
        types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
        for key, raw in cp["train"].items() if cp.has_section("train") else []:
            if key not in types or key == "weights":
                raise ConfigError(f"unknown train key {key!r}")
            kind = types[key]
            kwargs[key] = int(raw) if kind == "int" else str(raw) if kind == "str" else float(raw)
        wkw = {}
        for key, raw in cp["loss"].items() if cp.has_section("loss") else []:
            if key not in _WEIGHT_KEYS:
                raise ConfigError(f"unknown loss key {key!r}")
            wkw[_WEIGHT_KEYS[key]] = float(raw)
        return TrainConfig(weights=LossWeights(**wkw), **kwargs)
    except (configparser.Error, ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed config {path}: {exc}") from exc


# ---------------------------------------------------------------- scalar losses

def traj_loss(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 2)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1, 2)
    if pred.shape != (K_WAYPOINTS, 2) or truth.shape != (K_WAYPOINTS, 2):
        raise ValueError(f"need {K_WAYPOINTS} waypoints, got {pred.shape} and {truth.shape}")
    return float(np.abs(truth - pred).sum())


def feature_loss(j_pred, j_teacher) -> float:
    a = np.asarray(j_pred, dtype=np.float64)
    b = np.asarray(j_teacher, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"feature length mismatch {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def value_loss(v_pred: float, v_teacher: float) -> float:
    return float((v_pred - v_teacher) ** 2)


# ---------------------------------------------------------------- batches

@dataclass
class Batch:
    grid: np.ndarray
    speed: np.ndarray
    command: np.ndarray
    goal: np.ndarray
    waypoints: np.ndarray      # (B, 8)
    value: np.ndarray          # (B,)
    feature: np.ndarray        # (B, 64)
    kind: np.ndarray           # (B,)

    def __len__(self):
        return len(self.kind)


def make_batch(ds: Dataset, idx=None) -> Batch:
    if idx is None:
        idx = np.arange(len(ds))
    idx = np.asarray(idx)
    return Batch(ds.grid[idx].astype(np.float64), ds.speed[idx], ds.command[idx], ds.goal[idx],
                 ds.waypoints[idx].reshape(len(idx), -1), ds.value[idx], ds.feature[idx],
                 ds.kind[idx])


def _expert_terms(out, rows, batch: Batch):
    wp_t = nx.const(batch.waypoints[rows])
    v_t = nx.const(batch.value[rows][:, None])
    j_t = nx.const(batch.feature[rows])
    return (nx.total(nx.l1_rows(out.waypoints, wp_t)),
            nx.total(nx.l2_rows(out.feature, j_t)),
            nx.total(nx.sq_rows(out.value, v_t)))


def compute_loss(model: DrivingModel, batch: Batch, weights: LossWeights,
                 variant: str | None = None) -> tuple[Node, LossBreakdown]:
    """Graph for the mean batch loss of ``variant`` plus its per-term breakdown."""
    variant = variant or model.variant
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    B = len(batch)
    if B == 0:
        raise ValueError("empty batch")
    for name in ("waypoints", "value", "feature", "kind", "speed"):
        if getattr(batch, name) is None:
            raise ValueError(f"batch is missing targets: {name}")
    inv = 1.0 / B
    F = model.features(batch.grid, batch.speed, batch.command, batch.goal)
    w = weights
    parts: dict[str, Node] = {}

    if variant in ("geminus", "single_expert"):
        g = model.bank.global_expert(F)
        tg, fg, vg = _expert_terms(g, slice(None), batch)
        parts["traj_global"], parts["F_global"], parts["V_global"] = tg, fg, vg

    probs = None
    if variant in ("geminus", "scenario_moe", "vanilla_moe"):
        probs = model.router.probs(F)

    if variant in ("geminus", "scenario_moe", "vanilla_moe"):
        if variant == "vanilla_moe":
            assign = probs.value.argmax(axis=1)
        else:
            assign = batch.kind
        ta, fa, va = [], [], []
        for k in range(N_SCENE):
            rows = np.flatnonzero(assign == k)
            if rows.size == 0:
                continue
            out = model.bank.scene[k](nx.take_rows(F, rows))
            if variant == "vanilla_moe":
                gate = nx.slice_cols(nx.take_rows(probs, rows), k, k + 1)
                gate = nx.Node(gate.value[:, 0], (gate,), lambda g: (g[:, None],))
                out = type(out)(nx.mul_col(out.waypoints, gate), nx.mul_col(out.value, gate),
                                nx.mul_col(out.feature, gate))
            t, f, v = _expert_terms(out, rows, batch)
            ta.append(t)
            fa.append(f)
            va.append(v)
        parts["traj_adaptive"] = nx.weighted_sum((1.0, t) for t in ta)
        parts["F_adaptive"] = nx.weighted_sum((1.0, t) for t in fa)
        parts["V_adaptive"] = nx.weighted_sum((1.0, t) for t in va)

    if variant in ("geminus", "scenario_moe"):
        parts["scenario"] = nx.total(nx.nll(probs, batch.kind))

    if variant == "vanilla_moe":
        imp = nx.mean_cols(probs)
        sq = nx.Node(np.asarray((imp.value ** 2).sum()), (imp,), lambda g, v=imp.value: (2.0 * v * g,))
        # balance is already a batch statistic; scale by B so the 1/B below cancels
        parts["balance"] = nx.scale(sq, N_SCENE * B)

    speed_pred = model.bank.speed_head(F)
    parts["speed"] = nx.total(nx.l1_rows(speed_pred, nx.const(batch.speed[:, None])))

    means = {k: nx.scale(v, inv) for k, v in parts.items()}
    breakdown = LossBreakdown(**{k: float(v.value) for k, v in means.items()})
    # same grouping and order as LossBreakdown.recompute_total, so the two agree bitwise
    outer = []
    for group, lam in (("global", w.global_), ("adaptive", w.adaptive)):
        if f"traj_{group}" in means:
            inner = [(w.traj, means[f"traj_{group}"]), (w.feature, means[f"F_{group}"]),
                     (w.value, means[f"V_{group}"])]
            outer.append((lam, nx.weighted_sum(inner)))
    for name, lam in (("scenario", w.scenario), ("speed", w.speed), ("balance", w.balance)):
        if name in means:
            outer.append((lam, means[name]))
    total = nx.weighted_sum(outer)
    breakdown.total = float(total.value)
    return total, breakdown


def sample_loss(model: DrivingModel, sample: Batch, weights: LossWeights,
                variant: str | None = None) -> LossBreakdown:
    return compute_loss(model, sample, weights, variant)[1]


# ---------------------------------------------------------------- training

@dataclass
class EpochLog:
    epoch: int
    lr: float
    losses: LossBreakdown
    val_router_acc: float | None = None

    def to_json(self) -> str:
        d = {"epoch": self.epoch, "lr": self.lr, **self.losses.as_dict()}
        if self.val_router_acc is not None:
            d["val_router_acc"] = self.val_router_acc
        return json.dumps(d, sort_keys=True)


def train(cfg: TrainConfig, dataset: Dataset, on_epoch: Callable[[EpochLog], None] | None = None,
          model: DrivingModel | None = None) -> tuple[DrivingModel, list[EpochLog]]:
    """Joint optimization of encoders, router and experts; deterministic per seed."""
    train_ds = dataset.split("train") if dataset.manifest.get("clips") else dataset
    if len(train_ds) == 0:
        raise DatasetError("training split is empty")
    for k in ScenarioKind:
        if not np.any(train_ds.kind == int(k)):
            raise DatasetError(f"empty scenario subset: {k.name}")
    model = model or DrivingModel(seed=cfg.seed, variant=cfg.variant)
    model.meta.update({"tau": cfg.tau, "loss_weights": dataclasses.asdict(cfg.weights),
                       "dataset_manifest_sha256": dataset.manifest_hash, "train_config": cfg.to_dict()})
    rng = np.random.default_rng([cfg.seed, 0x747261696E])
    n = len(train_ds)
    logs = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        perm = rng.permutation(n)
        acc = LossBreakdown()
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            batch = make_batch(train_ds, idx)
            model.params.zero_grad()
            total, br = compute_loss(model, batch, cfg.weights, cfg.variant)
            nx.backward(total)
            nx.adam_step(model.params, lr, weight_decay=cfg.weight_decay)
            for f in dataclasses.fields(LossBreakdown):
                setattr(acc, f.name, getattr(acc, f.name) + getattr(br, f.name) * len(idx))
        for f in dataclasses.fields(LossBreakdown):
            setattr(acc, f.name, getattr(acc, f.name) / n)
        entry = EpochLog(epoch, lr, acc)
        logs.append(entry)
        log.info("epoch %d lr %.2e total %.4f", epoch, lr, acc.total)
        if on_epoch is not None:
            on_epoch(entry)
    return model, logs


# ---------------------------------------------------------------- analysis

def router_accuracy(model: DrivingModel, ds: Dataset, batch_size: int = 512) -> dict[str, float]:
    """Fraction of rows whose router argmax equals the true scenario, overall and per kind."""
    preds = []
    for start in range(0, len(ds), batch_size):
        b = make_batch(ds, np.arange(start, min(start + batch_size, len(ds))))
        F = model.fused_numpy(b.grid, b.speed, b.command, b.goal)
        with nx.no_grad():
            preds.append(model.router.probs(nx.const(F)).value.argmax(axis=1))
    pred = np.concatenate(preds)
    out = {"overall": float(np.mean(pred == ds.kind))}
    for k in ScenarioKind:
        m = ds.kind == int(k)
        out[k.name] = float(np.mean(pred[m] == k)) if m.any() else math.nan
    return out
