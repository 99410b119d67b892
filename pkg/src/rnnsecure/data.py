"""Task schemas, CSV I/O, splitting, sequence encoding and synthetic generators.

The original corpora for the three tasks are not available, so each task has
a schema carrying its published shape and a generator producing stand-in
data of that shape.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .tensor import Rng


class DataError(ValueError):
    """Malformed or inconsistent dataset contents."""


class ConfigError(ValueError):
    """Invalid generator or schema configuration."""


@dataclass(frozen=True)
class DatasetSchema:
    task: str
    n_features: int
    n_classes: int
    total: int | None = None
    train: int | None = None
    test: int | None = None


TASK_SCHEMAS = {
    "task1": DatasetSchema("task1", 4896, 2, 61730, 30897, 30833),
    "task2": DatasetSchema("task2", 9, 2, 100000, 70000, 30000),
    "task3": DatasetSchema("task3", 12, 3, 100000, 70000, 30000),
}

TASK_TITLES = {
    "task1": "Android Malware Classification",
    "task2": "Incident Detection",
    "task3": "Fraud Detection",
}

TASK_SHORT = {"task1": "Task 1", "task2": "Task 2", "task3": "Task 3"}


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    schema: DatasetSchema

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.x.shape[0] != self.y.shape[0]:
            raise DataError(f"features {self.x.shape} and labels {self.y.shape} do not align")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.schema.n_classes):
            raise DataError(f"labels must lie in [0, {self.schema.n_classes})")
        if not np.all(np.isfinite(self.x)):
            raise DataError("features contain non-finite values")

    def __len__(self) -> int:
        return self.y.size

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.schema)


# ------------------------------------------------------------------------ csv


def save_csv(ds: Dataset, path) -> None:
    """Header row, then one row per sample with the label last. LF endings."""
    lines = [",".join([f"f{j}" for j in range(ds.x.shape[1])] + ["label"])]
    for row, label in zip(ds.x.tolist(), ds.y.tolist()):
        lines.append(",".join(map(repr, row)) + f",{label}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _is_header(cells) -> bool:
    try:
        [float(c) for c in cells]
    except ValueError:
        return True
    return False


def load_csv(path, schema: DatasetSchema) -> Dataset:
    text = Path(path).read_text(encoding="utf-8")
    rows = [line.split(",") for line in text.splitlines() if line.strip()]
    if rows and _is_header(rows[0]):
        rows = rows[1:]
    width = schema.n_features + 1
    xs, ys = [], []
    for i, cells in enumerate(rows, start=1):
        if len(cells) != width:
            raise DataError(f"{path}: data row {i} has {len(cells)} columns, expected {width}")
        try:
            xs.append([float(c) for c in cells[:-1]])
            label = int(cells[-1])
        except ValueError as exc:
            raise DataError(f"{path}: data row {i} has a non-numeric cell ({exc})") from None
        if not 0 <= label < schema.n_classes:
            raise DataError(f"{path}: data row {i} label {label} outside [0, {schema.n_classes})")
        ys.append(label)
    if schema.total is not None and len(ys) > schema.total:
        raise DataError(f"{path}: {len(ys)} data rows exceed the declared total of {schema.total}")
    x = np.array(xs, dtype=np.float64).reshape(len(xs), schema.n_features)
    return Dataset(x, np.array(ys, dtype=np.int64), schema)


# ---------------------------------------------------------------------- split


def _apportion(class_counts: np.ndarray, fraction: float) -> np.ndarray:
    """Largest-remainder apportionment: each class gets floor or ceil of its share."""
    exact = class_counts * fraction
    base = np.floor(exact).astype(np.int64)
    extra = int(round(class_counts.sum() * fraction)) - int(base.sum())
    order = np.argsort(-(exact - base), kind="stable")
    for c in order[: max(extra, 0)]:
        if base[c] < class_counts[c]:
            base[c] += 1
    return base


def split(ds: Dataset, train_fraction: float = 0.7, seed: int = 0, stratified: bool = True):
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = Rng(seed)
    if not stratified:
        perm = rng.permutation(len(ds))
        n_train = int(round(len(ds) * train_fraction))
        return ds.subset(np.sort(perm[:n_train])), ds.subset(np.sort(perm[n_train:]))

    classes = np.unique(ds.y)
    counts = np.array([np.sum(ds.y == c) for c in classes])
    if np.any(counts < 2):
        bad = classes[counts < 2].tolist()
        raise DataError(f"stratified split needs at least 2 samples per class; classes {bad} have fewer")
    n_train = np.clip(_apportion(counts, train_fraction), 1, counts - 1)
    train_idx, test_idx = [], []
    for c, k in zip(classes, n_train):
        members = np.flatnonzero(ds.y == c)
        members = members[rng.permutation(members.size)]
        train_idx.append(members[:k])
        test_idx.append(members[k:])
    return ds.subset(np.sort(np.concatenate(train_idx))), ds.subset(np.sort(np.concatenate(test_idx)))


# ------------------------------------------------------------------- encoding

PER_FEATURE = "per-feature"
SINGLE_STEP = "single-step"


def encode_sequence(x, mode: str = PER_FEATURE) -> np.ndarray:
    """Turn feature rows into step sequences.

    A single row ``(F,)`` becomes ``(T, D)``; a batch ``(B, F)`` becomes
    ``(B, T, D)``. ``per-feature`` gives T=F, D=1; ``single-step`` gives T=1, D=F.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 1:
        raise ValueError("need at least one feature")
    if mode == PER_FEATURE:
        return x[..., None]
    if mode == SINGLE_STEP:
        return x[..., None, :]
    raise ValueError(f"unknown sequence mode {mode!r}")


# ---------------------------------------------------------------------- HCRUD


@dataclass(frozen=True)
class Predicate:
    feature: int
    op: str  # "<" or ">="
    threshold: float

    def holds(self, x: np.ndarray) -> np.ndarray:
        col = x[:, self.feature]
        if self.op == "<":
            return col < self.threshold
        if self.op == ">=":
            return col >= self.threshold
        raise ConfigError(f"unknown predicate operator {self.op!r}")


@dataclass(frozen=True)
class Rule:
    when: tuple[Predicate, ...]
    label: int


@dataclass(frozen=True)
class HcrudSpec:
    """Highly-correlated, rule-based, uniformly distributed synthetic data.

    The last rule must be a catch-all (empty ``when``). ``correlated_group``
    lists the features mixed toward their shared mean; ``None`` means all.
    """

    n_samples: int
    n_features: int
    n_classes: int
    rules: tuple[Rule, ...]
    correlation: float = 0.6
    label_noise: float = 0.0
    seed: int = 0
    correlated_group: tuple[int, ...] | None = None
    task: str = "custom"

    def validate(self) -> None:
        if not self.rules:
            raise ConfigError("HCRUD spec needs at least one rule")
        if self.rules[-1].when:
            raise ConfigError("the last HCRUD rule must be a catch-all with no predicates")
        if not 0.0 <= self.correlation < 1.0:
            raise ConfigError(f"correlation must be in [0, 1), got {self.correlation}")
        if not 0.0 <= self.label_noise < 0.5:
            raise ConfigError(f"label_noise must be in [0, 0.5), got {self.label_noise}")
        if self.n_samples < 1 or self.n_features < 1 or self.n_classes < 2:
            raise ConfigError("n_samples, n_features must be >= 1 and n_classes >= 2")
        for rule in self.rules:
            if not 0 <= rule.label < self.n_classes:
                raise ConfigError(f"rule label {rule.label} outside [0, {self.n_classes})")
            for pred in rule.when:
                if not 0 <= pred.feature < self.n_features:
                    raise ConfigError(f"rule predicate feature {pred.feature} out of range")
                if pred.op not in ("<", ">="):
                    raise ConfigError(f"unknown predicate operator {pred.op!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rules"] = [
            {"when": [[p.feature, p.op, p.threshold] for p in r.when], "label": r.label} for r in self.rules
        ]
        d["correlated_group"] = None if self.correlated_group is None else list(self.correlated_group)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HcrudSpec":
        d = dict(d)
        d["rules"] = tuple(
            Rule(tuple(Predicate(int(f), op, float(t)) for f, op, t in r["when"]), int(r["label"]))
            for r in d["rules"]
        )
        if d.get("correlated_group") is not None:
            d["correlated_group"] = tuple(d["correlated_group"])
        return cls(**d)


def apply_rules(rules, x: np.ndarray) -> np.ndarray:
    """First matching rule wins."""
    labels = np.full(x.shape[0], -1, dtype=np.int64)
    for rule in rules:
        hit = labels < 0
        for pred in rule.when:
            hit &= pred.holds(x)
        labels[hit] = rule.label
    return labels


def _p(feature, op, threshold):
    return Predicate(feature, op, threshold)


# Fraud: class 2 = fraudulent (high amount and high velocity), class 1 =
# suspicious (low account age, high amount-like score), class 0 otherwise.
FRAUD_RULES = (
    Rule((_p(0, ">=", 0.55), _p(1, ">=", 0.5)), 2),
    Rule((_p(2, "<", 0.45), _p(3, ">=", 0.45)), 1),
    Rule((_p(4, ">=", 0.6), _p(5, "<", 0.5)), 1),
    Rule((), 0),
)

# Incident: malicious when two log counters are elevated together, or one
# severity-like column is high on its own.
INCIDENT_RULES = (
    Rule((_p(0, ">=", 0.6), _p(1, ">=", 0.5)), 1),
    Rule((_p(6, ">=", 0.65),), 1),
    Rule((), 0),
)


def default_hcrud_spec(task: str, n_samples: int | None = None, seed: int = 0, **overrides) -> HcrudSpec:
    schema = TASK_SCHEMAS[task]
    rules = {"task2": INCIDENT_RULES, "task3": FRAUD_RULES}.get(task)
    if rules is None:
        raise ConfigError(f"no HCRUD defaults for {task}; it uses the sparse API generator")
    spec = HcrudSpec(
        n_samples=n_samples if n_samples is not None else schema.total,
        n_features=schema.n_features,
        n_classes=schema.n_classes,
        rules=rules,
        correlation=0.6,
        label_noise=0.05 if task == "task3" else 0.01,
        seed=seed,
        task=task,
    )
    return replace(spec, **overrides)


def hcrud_generate(spec: HcrudSpec) -> Dataset:
    spec.validate()
    n, f, k = spec.n_samples, spec.n_features, spec.n_classes
    rng = Rng(spec.seed)
    u = rng.random(n * f).reshape(n, f)
    group = list(range(f)) if spec.correlated_group is None else list(spec.correlated_group)
    x = u.copy()
    if spec.correlation > 0 and group:
        m = u[:, group].mean(axis=1, keepdims=True)
        x[:, group] = (1.0 - spec.correlation) * u[:, group] + spec.correlation * m
    y = apply_rules(spec.rules, x)

    # both draws happen regardless of noise so the feature stream stays aligned
    flip = rng.random(n) < spec.label_noise
    shift = 1 + rng.integers(n, k - 1) if k > 1 else np.zeros(n, dtype=np.int64)
    y = np.where(flip, (y + shift) % k, y)

    schema = TASK_SCHEMAS.get(spec.task, DatasetSchema(spec.task, f, k))
    schema = replace(schema, total=n, train=None, test=None)
    return Dataset(x, y, schema)


# -------------------------------------------------------- sparse API features


def synth_apk_features(n_samples: int, n_features: int = 4896, density: float = 0.02, seed: int = 0,
                       n_informative: int = 50) -> Dataset:
    """Binary API-usage indicators with labels from a hidden sparse linear rule.

    The rule scores a random subset of ``n_informative`` columns with positive
    weights and labels a sample malicious when its score exceeds the median.
    """
    if not 0.0 < density < 1.0:
        raise ConfigError(f"density must be in (0, 1), got {density}")
    rng = Rng(seed)
    x = (rng.random(n_samples * n_features).reshape(n_samples, n_features) < density).astype(np.float64)
    subset = rng.permutation(n_features)[: min(n_informative, n_features)]
    weights = rng.uniform(subset.size, 0.5, 1.5)
    score = x[:, subset] @ weights
    y = (score > np.median(score)).astype(np.int64)
    schema = replace(TASK_SCHEMAS["task1"], n_features=n_features, total=n_samples, train=None, test=None)
    return Dataset(x, y, schema)


# --------------------------------------------------------------- spec files


def read_spec_file(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def scaled_count(n: int, scale: float) -> int:
    return max(1, int(math.floor(n * scale + 0.5)))
