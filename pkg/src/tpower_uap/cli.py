"""Command-line front end.

Usage::

    tpower-uap <command> --config <path> [--out <dir>] [--debug-dump]

Every command reads one JSON document whose ``command`` field must name the
subcommand being run.  The document is validated against the command's
schema before anything is written.  Relative paths inside a config are
resolved against the directory holding the config file.

Each run writes ``report.json`` into the output directory (``--out``,
default the working directory).  Reports are canonical JSON; the only
non-deterministic value, the wall-clock timestamp, lives in ``metadata``.

Exit codes: 0 success, 1 domain or I/O error, 2 config/schema error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .attack import AttackConfig, Perturbation, sgd_layer_max_attack, sv_attack, top_k_for_damage, tpower_attack
from .attack.config import PERT_MAGIC
from .data import generate_synthetic, load_dataset, save_dataset
from .diffnet import DEFAULT_ARCH, build_model, load_model, save_model, train_sgd
from .evaluation import (
    apply_perturbation,
    evaluate,
    fooling_rate,
    grid_search,
    median_filter,
    predict_batched,
    transfer_matrix,
)
from .exceptions import ConfigError, EmptyDataError, FormatError, TPowerError
from .io import TENSOR_MAGIC, dumps_json, read_tensor, write_ppm

logger = logging.getLogger("tpower_uap")

MODEL_FILE = "model.tpm"
PERT_FILE = "perturbation.tpp"
REPORT_FILE = "report.json"

# ---------------------------------------------------------------- schemas

_EXPONENT = {"anyOf": [{"type": "number", "minimum": 1}, {"enum": ["inf"]}]}
_LAYER = {"type": ["string", "integer"]}
_SPLIT = {"enum": ["train", "val", "test"]}
_MAGNITUDE = {"type": "number", "exclusiveMinimum": 0, "maximum": 1}
_POS_INT = {"type": "integer", "minimum": 1}
_PATH = {"type": "string", "minLength": 1}


def _schema(command, properties, required=()):
    props = {"command": {"const": command}}
    props.update(properties)
    return {
        "type": "object",
        "properties": props,
        "required": ["command", *required],
        "additionalProperties": False,
    }


SCHEMAS = {
    "gen-data": _schema("gen-data", {
        "num_classes": _POS_INT,
        "image_shape": {"type": "array", "items": _POS_INT, "minItems": 3, "maxItems": 3},
        "samples_per_class": {"type": "integer"},
        "seed": {"type": "integer"},
        "split_fractions": {
            "type": "object",
            "properties": {s: {"type": "number", "minimum": 0, "maximum": 1} for s in ("train", "val", "test")},
            "additionalProperties": False,
        },
    }, ["num_classes", "image_shape", "samples_per_class"]),
    "train": _schema("train", {
        "dataset": _PATH,
        "arch": {"type": "array", "items": {"type": "object"}, "minItems": 1},
        "epochs": _POS_INT,
        "lr": {"type": "number", "minimum": 0},
        "batch_size": _POS_INT,
        "seed": {"type": "integer"},
    }, ["dataset"]),
    "attack": _schema("attack", {
        "model": _PATH,
        "dataset": _PATH,
        "mode": {"enum": ["tpower", "sv", "sgd"]},
        "layer": _LAYER,
        "q": _EXPONENT,
        "p": _EXPONENT,
        "top_k": _POS_INT,
        "damage": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "patch_size": _POS_INT,
        "n_steps": _POS_INT,
        "init_truncation": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "reduction_steps": _POS_INT,
        "seed": {"type": "integer"},
        "magnitude": _MAGNITUDE,
        "fit_samples": _POS_INT,
        "fit_split": _SPLIT,
        "eval_split": _SPLIT,
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "batch_size": _POS_INT,
    }, ["model", "dataset", "layer"]),
    "eval": _schema("eval", {
        "model": _PATH,
        "dataset": _PATH,
        "perturbation": _PATH,
        "split": _SPLIT,
        "magnitude": _MAGNITUDE,
    }, ["model", "dataset", "perturbation"]),
    "transfer": _schema("transfer", {
        "dataset": _PATH,
        "split": _SPLIT,
        "models": {"type": "object", "additionalProperties": _PATH, "minProperties": 2},
        "perturbations": {"type": "object", "additionalProperties": _PATH, "minProperties": 1},
        "magnitude": _MAGNITUDE,
    }, ["dataset", "models", "perturbations"]),
    "gridsearch": _schema("gridsearch", {
        "model": _PATH,
        "dataset": _PATH,
        "grid": {
            "type": "object",
            "properties": {
                "layer": {"type": "array", "items": _LAYER, "minItems": 1},
                "q": {"type": "array", "items": {"type": "number", "minimum": 1}, "minItems": 1},
                "patch_size": {"type": "array", "items": _POS_INT, "minItems": 1},
            },
            "required": ["layer", "q", "patch_size"],
            "additionalProperties": False,
        },
        "damage": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "p": _EXPONENT,
        "n_steps": _POS_INT,
        "init_truncation": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "reduction_steps": _POS_INT,
        "seed": {"type": "integer"},
        "magnitude": _MAGNITUDE,
        "fit_samples": _POS_INT,
        "n_jobs": _POS_INT,
    }, ["model", "dataset", "grid"]),
    "defend": _schema("defend", {
        "model": _PATH,
        "dataset": _PATH,
        "perturbation": _PATH,
        "split": _SPLIT,
        "windows": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        "magnitude": _MAGNITUDE,
    }, ["model", "dataset", "perturbation", "windows"]),
    "export-ppm": _schema("export-ppm", {
        "input": _PATH,
        "scale": {"enum": ["signed", "unsigned"]},
        "output": _PATH,
    }, ["input", "scale"]),
}


def load_config(path, command: str) -> dict:
    """Read and validate a config document; raises ConfigError on any problem."""
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})")
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    if doc.get("command") != command:
        raise ConfigError(f"{path}: 'command' is {doc.get('command')!r}, expected {command!r}")
    validator = jsonschema.Draft202012Validator(SCHEMAS[command])
    errors = sorted(validator.iter_errors(doc), key=lambda e: [str(k) for k in e.absolute_path])
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {where}: {e.message}")
    return doc


# ---------------------------------------------------------------- helpers


def _exp(v, default):
    if v is None:
        return default
    return math.inf if v == "inf" else float(v)


def _metadata(command):
    return {
        "command": command,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "version": __version__,
    }


def strip_metadata(report: dict) -> dict:
    """The report without its ``metadata`` block, for comparing runs."""
    return {k: v for k, v in report.items() if k != "metadata"}


class _Run:
    def __init__(self, command, cfg, base: Path, out: Path, debug_dump: bool):
        self.command = command
        self.cfg = cfg
        self.base = base
        self.out = out
        self.debug_dump = debug_dump

    def path(self, key):
        p = Path(self.cfg[key])
        return p if p.is_absolute() else self.base / p

    def resolve(self, value):
        p = Path(value)
        return p if p.is_absolute() else self.base / p

    def write_json(self, name, obj):
        (self.out / name).write_text(dumps_json(obj))

    def report(self, body: dict) -> dict:
        doc = dict(body)
        doc["metadata"] = _metadata(self.command)
        self.write_json(REPORT_FILE, doc)
        return doc


def _split(ds, name):
    part = ds.split(name)
    if len(part) == 0:
        raise EmptyDataError(f"dataset has no samples in split {name!r}")
    return part


def _accuracy(model, part):
    if len(part) == 0:
        return None
    return float(np.mean(predict_batched(model, part.samples) == part.labels))


def _fit_batch(ds, split, n, seed):
    """``n`` samples drawn without replacement from ``split`` (clamped to its size)."""
    part = _split(ds, split)
    n = min(int(n), len(part))
    idx = np.sort(np.random.default_rng(seed).choice(len(part), size=n, replace=False))
    return part.samples[idx]


def _attack_config(**kw) -> AttackConfig:
    try:
        return AttackConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid attack settings: {exc}")


# ---------------------------------------------------------------- commands


def cmd_gen_data(run: _Run):
    c = run.cfg
    ds = generate_synthetic(c["num_classes"], c["image_shape"], c["samples_per_class"], seed=c.get("seed", 0),
                            split_fractions=c.get("split_fractions"))
    save_dataset(ds, run.out)
    counts = {s: int(np.count_nonzero(ds.splits == s)) for s in ("train", "val", "test")}
    return run.report({"n_samples": len(ds), "image_shape": list(ds.image_shape),
                       "num_classes": ds.num_classes, "split_sizes": counts})


def cmd_train(run: _Run):
    c = run.cfg
    ds = load_dataset(run.path("dataset"))
    train = _split(ds, "train")
    seed = c.get("seed", 0)
    model = build_model(c.get("arch", DEFAULT_ARCH), ds.image_shape, ds.num_classes, seed=seed)
    model = train_sgd(model, train.samples, train.labels, epochs=c.get("epochs", 10), lr=c.get("lr", 0.05),
                      batch_size=c.get("batch_size", 32), seed=seed)
    save_model(model, run.out / MODEL_FILE)
    return run.report({
        "model_file": MODEL_FILE,
        "model_id": model.fingerprint(),
        "train_accuracy": _accuracy(model, train),
        "val_accuracy": _accuracy(model, ds.split("val")),
        "test_accuracy": _accuracy(model, ds.split("test")),
    })


def cmd_attack(run: _Run):
    c = run.cfg
    model = load_model(run.path("model"))
    ds = load_dataset(run.path("dataset"))
    mode = c.get("mode", "tpower")
    seed = c.get("seed", 0)
    batch = _fit_batch(ds, c.get("fit_split", "train"), c.get("fit_samples", 256), seed)
    q = _exp(c.get("q"), 1.0)
    p = _exp(c.get("p"), math.inf)
    magnitude = c.get("magnitude", 1.0)
    n_steps = c.get("n_steps", 100)
    rs = c.get("reduction_steps", min(10, n_steps))
    model.layer_index(c["layer"])
    if mode == "tpower":
        patch = c.get("patch_size", 1)
        top_k = c.get("top_k")
        if top_k is None:
            h, w = model.input_shape[:2]
            top_k = top_k_for_damage(h, w, patch, c.get("damage", 0.05))
        cfg = _attack_config(layer=c["layer"], top_k=top_k, q=q, p=p, patch_size=patch, n_steps=n_steps,
                             init_truncation=c.get("init_truncation", 1.0),
                             reduction_steps=rs, seed=seed, magnitude=magnitude)
        pert = tpower_attack(model, batch, cfg)
    elif mode == "sv":
        _attack_config(layer=c["layer"], top_k=1, q=q, p=p, n_steps=n_steps, reduction_steps=rs, seed=seed,
                       magnitude=magnitude)
        pert = sv_attack(model, batch, c["layer"], q=q, p=p, n_steps=n_steps, seed=seed, magnitude=magnitude,
                         reduction_steps=rs)
    else:
        if not (math.isinf(p) or p in (1.0, 2.0)):
            raise ConfigError("mode 'sgd' supports p in {1, 2, inf}")
        pert = sgd_layer_max_attack(model, batch, c["layer"], q=q, p=p, magnitude=magnitude, steps=n_steps,
                                    lr=c.get("lr", 0.01), seed=seed, batch_size=c.get("batch_size"))
    pert.save(run.out / PERT_FILE)
    run.write_json("objective_trace.json", [float(v) for v in pert.objective_trace])
    part = _split(ds, c.get("eval_split", "val"))
    rep, clean, attacked = evaluate(model, part, pert=pert, magnitude=magnitude, return_predictions=True)
    if run.debug_dump:
        _dump_predictions(run, part, clean, attacked)
    return run.report({
        "mode": mode,
        "perturbation_file": PERT_FILE,
        "source_model_id": pert.source_model_id,
        "n_fit_samples": int(len(batch)),
        "eval_split": c.get("eval_split", "val"),
        "magnitude": magnitude,
        "n_active_blocks": int(len(pert.support)),
        "final_objective": float(pert.objective_trace[-1]) if pert.objective_trace else None,
        "eval": rep.to_dict(),
    })


def _dump_predictions(run, part, clean, attacked):
    run.write_json("predictions.json", {
        "labels": [int(v) for v in part.labels],
        "clean": [int(v) for v in clean],
        "attacked": [int(v) for v in attacked],
    })


def cmd_eval(run: _Run):
    c = run.cfg
    model = load_model(run.path("model"))
    ds = load_dataset(run.path("dataset"))
    pert = Perturbation.load(run.path("perturbation"))
    split = c.get("split", "test")
    part = _split(ds, split)
    mag = c.get("magnitude")
    rep, clean, attacked = evaluate(model, part, pert=pert, magnitude=mag, return_predictions=True)
    if run.debug_dump:
        _dump_predictions(run, part, clean, attacked)
    body = rep.to_dict()
    body.update({"split": split, "model_id": model.fingerprint(),
                 "magnitude": mag if mag is not None else (pert.config.magnitude if pert.config else 1.0)})
    return run.report(body)


def cmd_transfer(run: _Run):
    c = run.cfg
    models = {k: load_model(run.resolve(v)) for k, v in c["models"].items()}
    unknown = sorted(set(c["perturbations"]) - set(models))
    if unknown:
        raise ConfigError(f"perturbations given for unknown model ids: {unknown}")
    perts = {k: Perturbation.load(run.resolve(v)) for k, v in c["perturbations"].items()}
    ds = load_dataset(run.path("dataset"))
    split = c.get("split", "test")
    matrix = transfer_matrix(perts, models, _split(ds, split), c.get("magnitude"))
    return run.report({
        "split": split,
        "magnitude": c.get("magnitude"),
        "model_ids": {k: m.fingerprint() for k, m in models.items()},
        "matrix": matrix,
    })


def cmd_gridsearch(run: _Run):
    c = run.cfg
    model = load_model(run.path("model"))
    ds = load_dataset(run.path("dataset"))
    for layer in c["grid"]["layer"]:
        model.layer_index(layer)
    seed = c.get("seed", 0)
    n_steps = c.get("n_steps", 100)
    base = {"p": _exp(c.get("p"), math.inf), "n_steps": n_steps, "init_truncation": c.get("init_truncation", 1.0),
            "reduction_steps": c.get("reduction_steps", min(10, n_steps)), "seed": seed,
            "magnitude": c.get("magnitude", 1.0)}
    _attack_config(layer=0, top_k=1, **base)
    batch = _fit_batch(ds, "train", c.get("fit_samples", 256), seed)
    val = _split(ds, "val")
    best, rows, pert = grid_search(model, batch, val.samples, c["grid"], damage=c.get("damage", 0.05), base=base,
                                   n_jobs=c.get("n_jobs", 1), return_perturbation=True)
    test = ds.split("test")
    test_fr = fooling_rate(model, test.samples, pert, best.magnitude) if len(test) else None
    pert.save(run.out / PERT_FILE)
    fields = ["layer", "q", "patch_size", "top_k", "val_fr"]
    with open(run.out / "grid.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([r.layer, repr(float(r.q)), r.patch_size, r.top_k, repr(float(r.val_fr))])
    table = [{f: getattr(r, f) for f in fields} for r in rows]
    run.write_json("grid.json", table)
    return run.report({
        "best_config": best.to_dict(),
        "best_val_fr": max(r.val_fr for r in rows),
        "test_fr": test_fr,
        "n_points": len(rows),
        "perturbation_file": PERT_FILE,
    })


def cmd_defend(run: _Run):
    c = run.cfg
    model = load_model(run.path("model"))
    ds = load_dataset(run.path("dataset"))
    pert = Perturbation.load(run.path("perturbation"))
    split = c.get("split", "test")
    part = _split(ds, split)
    X, y = part.samples, part.labels
    mag = c.get("magnitude")
    clean = predict_batched(model, X)
    attacked_x = apply_perturbation(X, pert, mag)
    base_fr = float(np.mean(predict_batched(model, attacked_x) != clean))
    rows = []
    for w in c["windows"]:
        # fooling is always judged against the unfiltered clean prediction
        filt = predict_batched(model, median_filter(attacked_x, w))
        rows.append({
            "window": int(w),
            "fooling_rate": float(np.mean(filt != clean)),
            "clean_accuracy": float(np.mean(predict_batched(model, median_filter(X, w)) == y)),
        })
    accs = [r["clean_accuracy"] for r in sorted(rows, key=lambda r: r["window"])]
    monotone = all(a >= b for a, b in zip(accs, accs[1:]))
    if not monotone:
        logger.warning("clean accuracy is not non-increasing in the window size")
    return run.report({
        "split": split,
        "unfiltered_fooling_rate": base_fr,
        "unfiltered_clean_accuracy": float(np.mean(clean == y)),
        "windows": rows,
        "clean_accuracy_non_increasing": monotone,
    })


def cmd_export_ppm(run: _Run):
    c = run.cfg
    src = run.path("input")
    with open(src, "rb") as fh:
        magic = fh.read(8)
    if magic.startswith(PERT_MAGIC):
        t = Perturbation.load(src).eps
    elif magic.startswith(TENSOR_MAGIC):
        t = read_tensor(src)
    else:
        raise FormatError(f"{src}: neither a TensorFile nor a perturbation file")
    if t.ndim == 2:
        t = t[..., None]
    ext = ".pgm" if t.ndim == 3 and t.shape[2] == 1 else ".ppm"
    name = c.get("output", Path(src).stem + ext)
    write_ppm(run.out / name, t, signed=c["scale"] == "signed")
    return run.report({"output": name, "shape": list(t.shape), "scale": c["scale"]})


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "attack": cmd_attack,
    "eval": cmd_eval,
    "transfer": cmd_transfer,
    "gridsearch": cmd_gridsearch,
    "defend": cmd_defend,
    "export-ppm": cmd_export_ppm,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tpower-uap", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON config document")
        sp.add_argument("--out", default=".", help="output directory (created if missing)")
        sp.add_argument("--debug-dump", action="store_true", help="also write raw predictions where available")
        sp.add_argument("-v", "--verbose", action="store_true")
    return parser


def run_command(command: str, config_path, out=".", debug_dump: bool = False) -> dict:
    """Programmatic entry point; raises instead of exiting."""
    cfg = load_config(config_path, command)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    run = _Run(command, cfg, Path(config_path).resolve().parent, out, debug_dump)
    return COMMANDS[command](run)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        report = run_command(args.command, args.config, args.out, args.debug_dump)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (TPowerError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(dumps_json(strip_metadata(report)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
