"""Command-line entry point: ``seapp {synth,train,eval,gradcheck,sweep}``.

Settings come from a TOML config file (``--config``) with sections
``[synthetic]`` or ``[data]`` (exactly one), ``[train]``, ``[alignment]`` and
``[sweep]``, plus a top-level ``out``.  Flags override the file, which
overrides built-in defaults.

Exit codes: 0 success, 1 gradient check failure, 2 config error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd
import tomli_w

from .alignment import AlignmentConfig
from .checkpoint import CheckpointError, load_model, save_model
from .data import (
    Corpus,
    CorpusSpec,
    DataError,
    SyntheticShiftSpec,
    generate_synthetic,
    load_csv_corpus,
    read_manifest,
    write_corpus_csv,
)
from .experiments import SweepGrid, normalize_pair, sweep
from .gradcheck import COMPONENTS, run_gradcheck
from .training import METHODS, TrainConfig, TrainingError, dump_jsonl, evaluate, train

log = logging.getLogger("seapp")

EXIT_OK, EXIT_GRADCHECK, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3

CORPUS_KEYS = {"schema", "window_len", "overlap", "sensors", "label", "unit", "cap"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    out: Path = Path("seapp-out")
    synthetic: SyntheticShiftSpec | None = None
    data: dict | None = None  # CSV source: source/target paths + corpus keys
    data_root: Path = Path(".")
    train: TrainConfig = field(default_factory=TrainConfig)
    grid: SweepGrid = field(default_factory=SweepGrid)

    @property
    def source_kind(self) -> str:
        return "synthetic" if self.synthetic is not None else "csv"


# ------------------------------------------------------------------ config


def _read_config(path: str | None) -> tuple[dict, Path]:
    if not path:
        return {}, Path(".")
    try:
        return read_manifest(path), Path(path).parent
    except DataError as exc:
        raise ConfigError(str(exc)) from None


def _build(cls, values: dict, what: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown {what} key(s): {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {what}: {exc}") from None


def _tuple_fields(d: dict, keys) -> dict:
    return {k: (tuple(v) if k in keys and isinstance(v, list) else v) for k, v in d.items()}


def _csv_floats(text: str, cast=float) -> tuple:
    try:
        return tuple(cast(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"bad list value {text!r}") from None


def resolve_config(args: argparse.Namespace, require_data: bool = True) -> RunConfig:
    raw, root = _read_config(getattr(args, "config", None))
    known = {"out", "synthetic", "data", "train", "alignment", "sweep"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config section(s)/key(s): {sorted(unknown)}")

    has_syn, has_csv = "synthetic" in raw, "data" in raw
    if not require_data and has_csv:
        raise ConfigError("synth generates data; remove the [data] section")
    if has_syn and has_csv:
        raise ConfigError("configure exactly one data source: [synthetic] or [data], not both")
    if require_data and not (has_syn or has_csv):
        raise ConfigError("no data source configured: add a [synthetic] or [data] section")

    synthetic = None
    if has_syn or not require_data:
        syn = dict(raw.get("synthetic", {}))
        preset = syn.pop("preset", "benchmark")
        if args.seed is not None:
            syn["seed"] = args.seed
        syn = _tuple_fields(syn, {"scale", "offset", "permutation"})
        if preset == "benchmark":
            try:
                synthetic = SyntheticShiftSpec.benchmark(**syn)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid synthetic spec: {exc}") from None
        elif preset == "none":
            synthetic = _build(SyntheticShiftSpec, syn, "synthetic")
        else:
            raise ConfigError(f"unknown synthetic preset {preset!r}")

    data = None
    if has_csv:
        data = dict(raw["data"])
        if "manifest" in data:
            mpath = root / data.pop("manifest")
            try:
                man = read_manifest(mpath)
            except DataError as exc:
                raise ConfigError(str(exc)) from None
            base = {k: man[k] for k in CORPUS_KEYS | {"source", "target"} if k in man}
            base.update(data)
            data = base
            root = mpath.parent
        if "source" not in data:
            raise ConfigError("[data] needs a 'source' CSV path (and usually 'target')")
        extra = set(data) - CORPUS_KEYS - {"source", "target"}
        if extra:
            raise ConfigError(f"unknown [data] key(s): {sorted(extra)}")

    align_kw = dict(raw.get("alignment", {}))
    if args_get(args, "lambda_sca") is not None:
        align_kw["lambda_sca"] = args.lambda_sca
    if args_get(args, "lambda_sfa") is not None:
        align_kw["lambda_sfa"] = args.lambda_sfa
    alignment = _build(AlignmentConfig, align_kw, "alignment")

    train_kw = dict(raw.get("train", {}))
    if "heads" in train_kw:
        train_kw["n_branches"] = train_kw.pop("heads")
    for flag, key in (
        ("method", "method"),
        ("seed", "seed"),
        ("heads", "n_branches"),
        ("patch", "patch"),
        ("epochs", "epochs"),
    ):
        v = args_get(args, flag)
        if v is not None:
            train_kw[key] = v
    if "score_divisors" in train_kw:
        train_kw["score_divisors"] = tuple(train_kw["score_divisors"])
    train_kw["alignment"] = alignment
    tcfg = _build(TrainConfig, train_kw, "train")

    sw = dict(raw.get("sweep", {}))
    grid_kw = {
        "lambdas": tuple(sw.pop("lambda", ())) or None,
        "heads": tuple(sw.pop("heads", ())) or None,
        "patches": tuple(sw.pop("patch", ())) or None,
        "repeats": sw.pop("repeats", 1),
    }
    if sw:
        raise ConfigError(f"unknown [sweep] key(s): {sorted(sw)}")
    if args_get(args, "grid_lambda"):
        grid_kw["lambdas"] = _csv_floats(args.grid_lambda)
    if args_get(args, "grid_heads"):
        grid_kw["heads"] = _csv_floats(args.grid_heads, int)
    if args_get(args, "grid_patch"):
        grid_kw["patches"] = _csv_floats(args.grid_patch, int)
    if args_get(args, "repeats") is not None:
        grid_kw["repeats"] = args.repeats

    out = args_get(args, "out") or raw.get("out") or "seapp-out"
    return RunConfig(Path(out), synthetic, data, root, tcfg, SweepGrid(**grid_kw))


def args_get(args, name):
    return getattr(args, name, None)


# ------------------------------------------------------------------ data


def _has_column(path: Path, col: str | None) -> bool:
    if not col:
        return False
    try:
        return col in pd.read_csv(path, nrows=0).columns
    except (FileNotFoundError, pd.errors.EmptyDataError):
        return False


def load_domains(cfg: RunConfig) -> tuple[Corpus, Corpus | None]:
    """Normalized (source, target) corpora; statistics come from the source only."""
    if cfg.synthetic is not None:
        src, tgt = generate_synthetic(cfg.synthetic)
        return normalize_pair(src, tgt)
    d = cfg.data
    kw = {k: d[k] for k in CORPUS_KEYS if k in d}
    if "sensors" in kw and kw["sensors"] is not None:
        kw["sensors"] = list(kw["sensors"])
    src_path = cfg.data_root / d["source"]
    try:
        spec = CorpusSpec(str(src_path), **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [data]: {exc}") from None
    source = load_csv_corpus(spec)["train"]
    if source.y is None:
        raise DataError(f"{src_path}: source corpus has no label column")
    target = None
    if "target" in d:
        tgt_path = cfg.data_root / d["target"]
        tkw = dict(kw)
        if not _has_column(tgt_path, kw.get("label")):
            tkw["label"] = None  # unlabeled target
        tspec = CorpusSpec(str(tgt_path), **tkw)
        target = load_csv_corpus(tspec, stats=source.stats, classes=source.classes or None)["train"]
        if target.y is not None and source.task == "classification":
            target.n_classes, target.classes = source.n_classes, source.classes
    return source, target


# ------------------------------------------------------------------ commands


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_synth(cfg: RunConfig) -> int:
    spec = cfg.synthetic or SyntheticShiftSpec.benchmark()
    source, target = generate_synthetic(spec)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_corpus_csv(source, cfg.out / "source.csv")
    write_corpus_csv(target, cfg.out / "target.csv")
    schema = "activity_classification" if spec.n_classes > 0 else "rul_regression"
    manifest = {
        "schema": schema,
        "window_len": spec.window_len,
        "overlap": 0.0,
        "sensors": list(source.sensors),
        "label": "label",
        "unit": "window",
        "cap": float(spec.rul_horizon),
        "seed": spec.seed,
        "spec_hash": spec.spec_hash(),
        "source": "source.csv",
        "target": "target.csv",
        "spec": {k: v for k, v in spec.to_dict().items() if v is not None},
    }
    (cfg.out / "manifest.toml").write_text(tomli_w.dumps(manifest), encoding="utf-8")
    log.info("wrote %d source / %d target windows to %s", len(source), len(target), cfg.out)
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    source, target = load_domains(cfg)
    tcfg = cfg.train
    if tcfg.aligned and target is None:
        raise ConfigError(f"method {tcfg.method!r} needs a target corpus")
    cfg.out.mkdir(parents=True, exist_ok=True)
    unlabeled = target.without_labels() if target is not None else None
    model, report = train(source, unlabeled if tcfg.aligned else None, tcfg)
    save_model(model, cfg.out / "model.bin")
    dump_jsonl(report.trace, cfg.out / "trace.jsonl")
    summary = {
        "method": tcfg.method,
        "seed": tcfg.seed,
        "config": _jsonable(tcfg.to_dict()),
        "steps": len(report.trace),
        "final_loss": report.trace[-1] if report.trace else None,
        "source": evaluate(model, source, tcfg.score_divisors).summary(),
    }
    if target is not None and target.labeled:
        summary["target"] = evaluate(model, target, tcfg.score_divisors).summary()
    _write_json(cfg.out / "metrics.json", summary)
    print(json.dumps({k: summary[k] for k in ("method", "source", "target") if k in summary}))
    return EXIT_OK


def cmd_eval(cfg: RunConfig, model_path: str | None) -> int:
    path = Path(model_path) if model_path else cfg.out / "model.bin"
    try:
        model = load_model(path)
    except FileNotFoundError:
        raise DataError(f"model file not found: {path}") from None
    except CheckpointError as exc:
        raise DataError(str(exc)) from None
    source, target = load_domains(cfg)
    div = cfg.train.score_divisors
    result = {"source": evaluate(model, source, div).summary()}
    if target is not None and target.labeled:
        result["target"] = evaluate(model, target, div).summary()
    cfg.out.mkdir(parents=True, exist_ok=True)
    _write_json(cfg.out / "eval.json", result)
    print(json.dumps(result))
    return EXIT_OK


def cmd_gradcheck(components: list[str] | None) -> int:
    rows = run_gradcheck(components)
    print(f"{'component':<10} {'variant':<7} {'max_rel_err':>12}  status")
    for r in rows:
        print(f"{r.component:<10} {r.variant:<7} {r.max_rel_err:12.3e}  {'ok' if r.passed else 'FAIL'}")
    return EXIT_OK if all(r.passed for r in rows) else EXIT_GRADCHECK


def cmd_sweep(cfg: RunConfig) -> int:
    source, target = load_domains(cfg)
    rows = sweep(source, target, cfg.train, cfg.grid)
    cfg.out.mkdir(parents=True, exist_ok=True)
    cols: list[str] = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    cols = [c for c in cols if c != "error"] + ["error"]
    with open(cfg.out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(json.dumps(r, sort_keys=True))
    return EXIT_OK


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--method", choices=METHODS)
    model.add_argument("--lambda-sca", type=float)
    model.add_argument("--lambda-sfa", type=float)
    model.add_argument("--heads", type=int, help="MSGC branch count")
    model.add_argument("--patch", type=int, help="patch size d")
    model.add_argument("--epochs", type=int)

    p = argparse.ArgumentParser(prog="seapp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write synthetic source/target CSVs")
    sub.add_parser("train", parents=[common, model], help="train and write model + metrics")
    ev = sub.add_parser("eval", parents=[common, model], help="evaluate a saved model")
    ev.add_argument("--model", help="model file (default OUT/model.bin)")
    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    gc.add_argument(
        "--component",
        action="append",
        help=f"restrict to component(s): {', '.join(COMPONENTS)} (repeat or comma-separate)",
    )
    sw = sub.add_parser("sweep", parents=[common, model], help="grid of training runs")
    sw.add_argument("--grid-lambda", help="comma list, applied to both lambdas")
    sw.add_argument("--grid-heads", help="comma list of branch counts")
    sw.add_argument("--grid-patch", help="comma list of patch sizes")
    sw.add_argument("--repeats", type=int, help="seeds per cell")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "gradcheck":
            comps = None
            if args.component:
                comps = [c.strip() for item in args.component for c in item.split(",") if c.strip()]
                bad = [c for c in comps if c not in COMPONENTS]
                if bad:
                    raise ConfigError(f"unknown component(s) {bad}")
            return cmd_gradcheck(comps)
        cfg = resolve_config(args, require_data=args.command != "synth")
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.model)
        if args.command == "sweep":
            return cmd_sweep(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, TrainingError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
