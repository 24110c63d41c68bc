"""Epoch loop with best-validation selection, and grid search over configs."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .builder import GraphBundle
from .data import InstanceTable, LossWeights
from .errors import NonFinite
from .metrics import MetricsReport, evaluate
from .model import HHGNN, Adam, HHGNNConfig, Variant, make_variant, train_step

log = logging.getLogger(__name__)

# grid keys routed to the optimiser rather than the model config
OPTIMIZER_KEYS = ("learning_rate", "weight_decay")


@dataclass(frozen=True)
class TrainSettings:
    max_epochs: int = 200
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    batch_size: Optional[int] = None  # None = full batch


@dataclass
class FitResult:
    best_epoch: int
    best_val_mcc: float
    best_state: dict
    history: list[dict] = field(default_factory=list)


def report_for(model: HHGNN, table: InstanceTable, weights: LossWeights) -> MetricsReport:
    pred = model.predict(table.features)
    return evaluate(table.labels, pred, table.schema.pp_names, table.schema.act_names, weights.active)


def fit(
    model: HHGNN,
    train: InstanceTable,
    val: InstanceTable,
    weights: LossWeights,
    settings: TrainSettings,
    on_epoch: Optional[Callable[[dict], None]] = None,
) -> FitResult:
    """Train for ``max_epochs``; keep the parameters of the best validation epoch.

    Validation score is overall MCC; the earliest epoch wins ties.
    """
    opt = Adam(model.params.values(), lr=settings.learning_rate, weight_decay=settings.weight_decay)
    order_rng = np.random.default_rng([model.seed, 2])
    x = train.features.astype(model.dtype)
    y = train.labels
    n = len(train)
    bs = settings.batch_size or n
    best = FitResult(best_epoch=0, best_val_mcc=-np.inf, best_state=model.state())
    for epoch in range(1, settings.max_epochs + 1):
        perm = order_rng.permutation(n) if bs < n else np.arange(n)
        losses = []
        for start in range(0, n, bs):
            idx = perm[start : start + bs]
            losses.append(train_step(model, x[idx], y[idx], weights, opt))
        val_mcc = report_for(model, val, weights).overall["mcc"] if len(val) else 0.0
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_mcc": float(val_mcc)}
        best.history.append(row)
        if on_epoch:
            on_epoch(row)
        if val_mcc > best.best_val_mcc:
            best.best_epoch, best.best_val_mcc, best.best_state = epoch, float(val_mcc), model.state()
    model.load_state(best.best_state)
    return best


def expand_grid(grid: dict[str, list]) -> list[dict]:
    """Cartesian product in sorted-key order; trial index = position in the list."""
    for k, values in grid.items():
        if not values:
            raise ValueError(f"grid entry {k!r} is empty")
    keys = sorted(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


@dataclass
class Trial:
    index: int
    params: dict
    best_epoch: int = 0
    best_val_mcc: float = float("nan")
    error: Optional[str] = None
    model: Optional[HHGNN] = None
    history: list = field(default_factory=list)


def grid_search(
    bundle: GraphBundle,
    base_cfg: HHGNNConfig,
    base_settings: TrainSettings,
    grid: dict[str, list],
    train: InstanceTable,
    val: InstanceTable,
    weights: LossWeights,
    variant: Variant = Variant.FULL,
    seed: int = 0,
    on_epoch: Optional[Callable[[int, dict], None]] = None,
) -> tuple[list[Trial], Optional[Trial]]:
    """Train one model per grid point; the best validation MCC wins, lowest index on ties.

    A trial that hits a non-finite value is recorded and skipped.
    """
    trials = []
    winner = None
    for i, point in enumerate(expand_grid(grid) if grid else [{}]):
        opt_kw = {k: v for k, v in point.items() if k in OPTIMIZER_KEYS}
        cfg_kw = {k: v for k, v in point.items() if k not in OPTIMIZER_KEYS}
        trial = Trial(index=i, params=point)
        try:
            model = make_variant(variant, bundle, replace(base_cfg, **cfg_kw), seed=seed)
            res = fit(
                model, train, val, weights, replace(base_settings, **opt_kw),
                on_epoch=(lambda row, i=i: on_epoch(i, row)) if on_epoch else None,
            )
        except NonFinite as exc:
            trial.error = str(exc)
            log.warning("trial %d aborted: %s", i, exc)
            trials.append(trial)
            continue
        trial.best_epoch, trial.best_val_mcc, trial.model = res.best_epoch, res.best_val_mcc, model
        trial.history = res.history
        trials.append(trial)
        if winner is None or trial.best_val_mcc > winner.best_val_mcc:
            winner = trial
    return trials, winner
