"""Grid-search protocol: hidden units, then learning rate, then depth.

Every (candidate, trial) cell is scored by k-fold cross-validated accuracy and
candidates are ranked by their mean over trials.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from .data import Dataset
from .evaluation import FoldFailed, cross_validate
from .model import TopologyConfig, TrainConfig, TrainingDiverged, param_count
from .tensor import derive_seed

STAGES = ("units", "lr", "depth")
_STAGE_ID = {name: i for i, name in enumerate(STAGES)}


@dataclass(frozen=True)
class SearchSpace:
    units: tuple[int, ...] = (64, 128, 256, 512, 768)
    learning_rates: tuple[float, ...] = (0.01, 0.035, 0.045, 0.05, 0.1, 0.25, 0.5)
    depths: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    trials: int = 3
    units_epochs: int = 400
    lr_epochs: int = 700
    depth_epochs: int = 700
    folds: int = 10

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        bad = [lr for lr in self.learning_rates if not 0.01 <= lr <= 0.5]
        if bad:
            raise ValueError(f"learning rates must lie in [0.01, 0.5], got {bad}")
        bad = [d for d in self.depths if not 1 <= d <= 6]
        if bad:
            raise ValueError(f"depths must lie in 1..6, got {bad}")

    def scaled(self, scale: float) -> "SearchSpace":
        """Shrink the epoch budgets by ``scale`` (at least one epoch each)."""
        return replace(
            self,
            units_epochs=max(1, round(self.units_epochs * scale)),
            lr_epochs=max(1, round(self.lr_epochs * scale)),
            depth_epochs=max(1, round(self.depth_epochs * scale)),
        )


@dataclass(frozen=True)
class SearchRow:
    stage: str
    candidate: float
    candidate_index: int
    trial: int
    cv_accuracy: float
    n_params: int
    diverged: bool = False


@dataclass
class SearchResult:
    stage: str
    rows: list[SearchRow] = field(default_factory=list)
    selected: float | None = None

    def mean_accuracy(self) -> dict[int, float]:
        """Mean over trials per candidate index; ``fsum`` keeps it row-order independent."""
        groups: dict[int, list[float]] = {}
        for r in self.rows:
            groups.setdefault(r.candidate_index, []).append(r.cv_accuracy)
        return {ci: math.fsum(v) / len(v) for ci, v in groups.items()}


class SearchFailed(RuntimeError):
    def __init__(self, stage: str, candidate, trial: int, cause: BaseException):
        super().__init__(f"{stage} search, candidate {candidate}, trial {trial}: {cause}")
        self.stage = stage
        self.candidate = candidate
        self.trial = trial
        self.cause = cause

    def __reduce__(self):
        return (SearchFailed, (self.stage, self.candidate, self.trial, self.cause))


def select_best(result: SearchResult):
    """Highest mean CV accuracy; ties go to fewer parameters, then earlier list position."""
    if not result.rows:
        raise ValueError("cannot select from an empty search result")
    means = result.mean_accuracy()
    info = {r.candidate_index: (r.n_params, r.candidate) for r in result.rows}
    best = min(means, key=lambda ci: (-means[ci], info[ci][0], ci))
    return info[best][1]


def _cell(args):
    stage, value, ci, trial, topology, cfg, dataset, folds, tolerate = args
    try:
        acc, _ = cross_validate(topology, dataset, cfg, k=folds)
        diverged = False
    except FoldFailed as exc:
        if not (tolerate and isinstance(exc.cause, TrainingDiverged)):
            raise SearchFailed(stage, value, trial, exc) from exc
        acc, diverged = 0.0, True
    except Exception as exc:
        raise SearchFailed(stage, value, trial, exc) from exc
    n_params = param_count(topology, dataset.x.shape[1], dataset.schema.n_classes)
    return SearchRow(stage, value, ci, trial, acc, n_params, diverged)


def _run_stage(stage, candidates, make, space, dataset, base_cfg, epochs, tolerate, jobs) -> SearchResult:
    if not candidates:
        raise ValueError(f"{stage} search needs at least one candidate")
    cells = []
    for ci, value in enumerate(candidates):
        topology, cfg = make(value)
        for trial in range(space.trials):
            seed = derive_seed(base_cfg.seed, _STAGE_ID[stage], ci, trial)
            cells.append((stage, value, ci, trial, topology, replace(cfg, epochs=epochs, seed=seed),
                          dataset, space.folds, tolerate))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_cell, cells))
    else:
        rows = [_cell(c) for c in cells]
    rows.sort(key=lambda r: (r.candidate_index, r.trial))
    result = SearchResult(stage, rows)
    result.selected = select_best(result)
    return result


def search_units(space: SearchSpace, dataset: Dataset, base_topology: TopologyConfig,
                 base_cfg: TrainConfig, jobs: int = 1) -> SearchResult:
    def make(units):
        return replace(base_topology, num_recurrent_layers=1, hidden_units=units), base_cfg

    return _run_stage("units", list(space.units), make, space, dataset, base_cfg,
                      space.units_epochs, False, jobs)


def search_lr(space: SearchSpace, dataset: Dataset, topology: TopologyConfig,
              base_cfg: TrainConfig, jobs: int = 1) -> SearchResult:
    def make(lr):
        return topology, replace(base_cfg, learning_rate=lr)

    return _run_stage("lr", list(space.learning_rates), make, space, dataset, base_cfg,
                      space.lr_epochs, True, jobs)


def search_depth(space: SearchSpace, dataset: Dataset, base_cfg: TrainConfig,
                 base_topology: TopologyConfig | None = None, jobs: int = 1) -> SearchResult:
    base_topology = base_topology or TopologyConfig()

    def make(depth):
        return replace(base_topology, num_recurrent_layers=depth), base_cfg

    return _run_stage("depth", list(space.depths), make, space, dataset, base_cfg,
                      space.depth_epochs, True, jobs)
