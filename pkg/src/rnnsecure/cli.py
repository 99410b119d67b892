"""Command-line entry point: generate, train, evaluate, crossval, search, benchmark.

Configuration comes from built-in defaults, then an optional JSON ``--config``
file, then command-line flags, later sources winning. See README.md for the
config schema.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
from contextlib import contextmanager
from dataclasses import asdict, fields, replace
from pathlib import Path

from .data import (
    TASK_SCHEMAS,
    TASK_SHORT,
    TASK_TITLES,
    DatasetSchema,
    HcrudSpec,
    default_hcrud_spec,
    hcrud_generate,
    load_csv,
    save_csv,
    scaled_count,
    split,
    synth_apk_features,
)
from .evaluation import cross_validate, evaluate_labels
from .model import (
    TASK_DEPTH,
    TopologyConfig,
    TrainConfig,
    build_model,
    load_model,
    predict,
    save_model,
    train,
)
from .reports import (
    BenchmarkRow,
    benchmark_csv,
    benchmark_text,
    crossval_csv,
    crossval_text,
    depth_label,
    history_csv,
    search_csv,
    table3_text,
    write_text,
)
from .search import SearchSpace, search_depth, search_lr, search_units
from .svm import SvmConfig, save_svm, svm_predict, svm_train
from .tensor import derive_seed

log = logging.getLogger("rnnsecure")

COMMANDS = ("generate", "train", "evaluate", "crossval", "search", "benchmark")

DEFAULTS = {
    "task": "task3",
    "seed": 0,
    "scale": 1.0,
    "jobs": 1,
    "out": "out",
    "format": "both",
    "dataset": {"generate": {}},
    "topology": {},
    "train": {},
    "search": {},
    "svm": {},
    "folds": 10,
    "stage": "depth",
    "model": None,
}


class StepError(RuntimeError):
    def __init__(self, step: str, cause: BaseException):
        super().__init__(f"{step}: {cause}")
        self.step = step


@contextmanager
def step(name: str):
    log.info("%s ...", name)
    try:
        yield
    except StepError:
        raise
    except Exception as exc:
        raise StepError(name, exc) from exc


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "dataset":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        cfg = _merge(cfg, json.loads(Path(args.config).read_text(encoding="utf-8")))
    for key in ("task", "seed", "scale", "jobs", "out", "format", "folds", "stage", "model"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if getattr(args, "data", None):
        cfg["dataset"] = {"dir": args.data}
    for key, section, name in (
        ("depth", "topology", "num_recurrent_layers"),
        ("units", "topology", "hidden_units"),
        ("sequence_mode", "topology", "sequence_mode"),
        ("lr", "train", "learning_rate"),
        ("epochs", "train", "epochs"),
        ("batch_size", "train", "batch_size"),
    ):
        value = getattr(args, key, None)
        if value is not None:
            cfg[section][name] = value
    sources = [k for k in ("generate", "dir", "csv") if k in cfg["dataset"]]
    if len(sources) != 1:
        raise ValueError(f"dataset config needs exactly one of generate/dir/csv, got {sources or 'none'}")
    if cfg["task"] not in TASK_SCHEMAS and "schema" not in cfg:
        raise ValueError(f"unknown task {cfg['task']!r}; use task1/task2/task3 or give a 'schema'")
    return cfg


def _schema(cfg: dict) -> DatasetSchema:
    if "schema" in cfg:
        return DatasetSchema(**cfg["schema"])
    return TASK_SCHEMAS[cfg["task"]]


def _only(cls, d: dict) -> dict:
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return d


def topology_from(cfg: dict) -> TopologyConfig:
    t = dict(cfg["topology"])
    t.setdefault("num_recurrent_layers", TASK_DEPTH.get(cfg["task"], 1))
    return TopologyConfig(**_only(TopologyConfig, t))


def train_config_from(cfg: dict, default_epochs: int = 700) -> TrainConfig:
    t = dict(cfg["train"])
    if "epochs" not in t:
        t["epochs"] = max(1, round(default_epochs * cfg["scale"]))
    t.setdefault("seed", cfg["seed"])
    return TrainConfig(**_only(TrainConfig, t))


def search_space_from(cfg: dict) -> SearchSpace:
    s = {k: tuple(v) if isinstance(v, list) else v for k, v in cfg["search"].items()}
    space = SearchSpace(**_only(SearchSpace, s))
    budgets = {"units_epochs", "lr_epochs", "depth_epochs"}
    if cfg["scale"] != 1.0 and not budgets & set(s):
        space = space.scaled(cfg["scale"])
    return space


# ------------------------------------------------------------------ datasets


def generator_spec(cfg: dict) -> dict:
    """Fully resolved generator settings, as recorded in the manifest."""
    gen = dict(cfg["dataset"]["generate"])
    task = cfg["task"]
    schema = TASK_SCHEMAS[task]
    gen.setdefault("n_samples", scaled_count(schema.total, cfg["scale"]))
    gen.setdefault("seed", cfg["seed"])
    if task == "task1":
        gen.setdefault("n_features", schema.n_features)
        gen.setdefault("density", 0.02)
        gen.setdefault("train_fraction", schema.train / schema.total)
        return gen
    fraction = gen.pop("train_fraction", schema.train / schema.total)
    spec = HcrudSpec.from_dict({**default_hcrud_spec(task).to_dict(), **gen})
    spec.validate()
    return {**spec.to_dict(), "train_fraction": fraction}


def generate_splits(cfg: dict):
    gen = generator_spec(cfg)
    if cfg["task"] == "task1":
        ds = synth_apk_features(gen["n_samples"], gen["n_features"], gen["density"], gen["seed"])
    else:
        ds = hcrud_generate(HcrudSpec.from_dict({k: v for k, v in gen.items() if k != "train_fraction"}))
    train_ds, test_ds = split(ds, gen["train_fraction"], seed=derive_seed(gen["seed"], 1))
    return gen, train_ds, test_ds


def load_splits(cfg: dict):
    src = cfg["dataset"]
    if "generate" in src:
        _, tr, te = generate_splits(cfg)
        return tr, te
    schema = _schema(cfg)
    if "dir" in src:
        d = Path(src["dir"])
        manifest = d / "manifest.json"
        if manifest.exists() and "schema" not in cfg:
            schema = DatasetSchema(**json.loads(manifest.read_text(encoding="utf-8"))["schema"])
        return load_csv(d / "train.csv", schema), load_csv(d / "test.csv", schema)
    return load_csv(src["csv"]["train"], schema), load_csv(src["csv"]["test"], schema)


# ------------------------------------------------------------------ commands


def _out(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(cfg: dict, out: Path, stem: str, csv_text: str, table_text: str) -> None:
    if cfg["format"] in ("csv", "both"):
        write_text(out / f"{stem}.csv", csv_text)
    if cfg["format"] in ("text", "both"):
        write_text(out / f"{stem}.txt", table_text)


def cmd_generate(cfg: dict) -> dict:
    out = _out(cfg)
    with step("generate dataset"):
        gen, train_ds, test_ds = generate_splits(cfg)
    with step("write dataset files"):
        save_csv(train_ds, out / "train.csv")
        save_csv(test_ds, out / "test.csv")
        schema = replace(train_ds.schema, total=len(train_ds) + len(test_ds), train=len(train_ds), test=len(test_ds))
        manifest = {
            "task": cfg["task"],
            "seed": cfg["seed"],
            "scale": cfg["scale"],
            "dataset": {"generate": gen},
            "schema": asdict(schema),
            "rows": {"train": len(train_ds), "test": len(test_ds)},
            "sha256": {name: sha256(out / name) for name in ("train.csv", "test.csv")},
        }
        write_text(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def cmd_train(cfg: dict):
    out = _out(cfg)
    with step("load dataset"):
        train_ds, _ = load_splits(cfg)
    topology = topology_from(cfg)
    tcfg = train_config_from(cfg)
    with step("build model"):
        model = build_model(topology, train_ds.x.shape[1], train_ds.schema.n_classes, seed=tcfg.seed)
    with step("train rnn"):
        history = train(model, train_ds, tcfg)
    with step("write model"):
        save_model(model, out / "model.bin")
        write_text(out / "history.csv", history_csv(history))
    return model, history


def cmd_evaluate(cfg: dict) -> BenchmarkRow:
    out = _out(cfg)
    with step("load dataset"):
        _, test_ds = load_splits(cfg)
    with step("load model"):
        model = load_model(cfg["model"] or out / "model.bin")
    with step("evaluate rnn"):
        labels, _ = predict(model, test_ds.x)
        m = evaluate_labels(labels, test_ds.y, test_ds.schema.n_classes)
    row = BenchmarkRow.from_metrics(depth_label(len(model.rnn)), TASK_TITLES.get(cfg["task"], cfg["task"]), m)
    _emit(cfg, out, "metrics", benchmark_csv([row]), benchmark_text([row]))
    return row


def cmd_crossval(cfg: dict):
    out = _out(cfg)
    with step("load dataset"):
        train_ds, _ = load_splits(cfg)
    with step("cross-validate"):
        mean, reports = cross_validate(topology_from(cfg), train_ds, train_config_from(cfg),
                                       k=cfg["folds"], jobs=cfg["jobs"])
    _emit(cfg, out, "crossval", crossval_csv(reports, mean), crossval_text(reports, mean))
    return mean, reports


def cmd_search(cfg: dict):
    out = _out(cfg)
    stage = cfg["stage"]
    with step("load dataset"):
        train_ds, _ = load_splits(cfg)
    space = search_space_from(cfg)
    topology = topology_from(cfg)
    tcfg = train_config_from(cfg)
    with step(f"{stage} search"):
        if stage == "units":
            result = search_units(space, train_ds, topology, tcfg, jobs=cfg["jobs"])
        elif stage == "lr":
            result = search_lr(space, train_ds, topology, tcfg, jobs=cfg["jobs"])
        elif stage == "depth":
            result = search_depth(space, train_ds, tcfg, topology, jobs=cfg["jobs"])
        else:
            raise ValueError(f"unknown search stage {stage!r}")
    task = TASK_SHORT.get(cfg["task"], cfg["task"])
    _emit(cfg, out, f"search_{stage}", search_csv(result), table3_text(result, task))
    return result


def cmd_benchmark(cfg: dict) -> list[BenchmarkRow]:
    out = _out(cfg)
    with step("load dataset"):
        train_ds, test_ds = load_splits(cfg)
    k = test_ds.schema.n_classes
    task = TASK_TITLES.get(cfg["task"], cfg["task"])
    topology = topology_from(cfg)
    tcfg = train_config_from(cfg)
    with step("train svm"):
        svm_cfg = SvmConfig(**{"seed": cfg["seed"], **_only(SvmConfig, cfg["svm"])})
        svm = svm_train(train_ds, svm_cfg, jobs=cfg["jobs"])
        save_svm(svm, out / "svm.bin")
    with step("evaluate svm"):
        svm_row = BenchmarkRow.from_metrics("SVM", task, evaluate_labels(svm_predict(svm, test_ds.x), test_ds.y, k))
    with step("train rnn"):
        model = build_model(topology, train_ds.x.shape[1], k, seed=tcfg.seed)
        train(model, train_ds, tcfg)
        save_model(model, out / "model.bin")
    with step("evaluate rnn"):
        labels, _ = predict(model, test_ds.x)
        rnn_row = BenchmarkRow.from_metrics(depth_label(topology.num_recurrent_layers), task,
                                            evaluate_labels(labels, test_ds.y, k))
    rows = [svm_row, rnn_row]
    _emit(cfg, out, "benchmark", benchmark_csv(rows), benchmark_text(rows))
    return rows


HANDLERS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "crossval": cmd_crossval,
    "search": cmd_search,
    "benchmark": cmd_benchmark,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--task", choices=sorted(TASK_SCHEMAS))
    common.add_argument("--seed", type=int)
    common.add_argument("--scale", type=float, help="shrink sample counts and epoch budgets")
    common.add_argument("--jobs", type=int, help="worker processes for folds, search cells, SVM machines")
    common.add_argument("--out", help="output directory")
    common.add_argument("--format", choices=("csv", "text", "both"))
    common.add_argument("--data", help="directory holding train.csv/test.csv (from 'generate')")
    common.add_argument("--depth", type=int)
    common.add_argument("--units", type=int)
    common.add_argument("--sequence-mode", dest="sequence_mode", choices=("per-feature", "single-step"))
    common.add_argument("--lr", type=float)
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch-size", dest="batch_size", type=int)
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="rnnsecure", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "evaluate":
            p.add_argument("--model", help="model file (default OUT/model.bin)")
        if name == "crossval":
            p.add_argument("--folds", type=int)
        if name == "search":
            p.add_argument("--stage", choices=("units", "lr", "depth"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        HANDLERS[args.command](cfg)
    except StepError as exc:
        print(f"rnnsecure {args.command}: failed at step '{exc.step}': {exc.__cause__}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"rnnsecure {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
