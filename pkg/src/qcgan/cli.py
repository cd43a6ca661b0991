"""Command-line driver: prepare data, train generators, sample, and report.

Every artifact records the config hash and seed, and nothing time-dependent
is written, so reruns with the same config reproduce identical bytes.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import jsonschema
import numpy as np
import pandas as pd

from . import datapipe as dp
from . import gan, ids, metrics, selftest
from .qsim import SimulatorError
from .schemas import CONFIG_SCHEMA, CONFIG_SCHEMA_VERSION, REPORT_SCHEMA, REPORT_SCHEMA_VERSION

log = logging.getLogger("qcgan")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4
MODELS = {"classical": "classical", "qcgan": "quantum", "qcgan-noisy": "quantum_noisy"}

DEFAULT_CONFIG = {
    "schema_version": CONFIG_SCHEMA_VERSION,
    "seed": 0,
    "output_dir": "runs/default",
    "data": {
        "source": "synthetic",
        "n_rows": 10000,
        "synthetic": {"preset": "bimodal", "attack_fraction": 0.5},
        "val_fraction": 0.2,
        "test_fraction": 0.2,
    },
    "features": {"select": False, "top_k": 8, "k": 4, "n_trees": 50, "max_depth": 8,
                 "max_rows": 20000, "corr_threshold": 0.9},
    "train": {},
    "noise": {"p_depolarizing": 0.01, "p_bitflip": 0.005, "gamma_amplitude_damping": 0.01},
    "metrics": {"batch_size": 500, "mmd_rows": 2000, "histogram_bins": 50},
    "ids": {"n_per_class": 8000, "rf": {}, "boost": {}, "cnn": {}},
    "report": {"n_generate": 8000},
}


class CliError(Exception):
    code = EXIT_RUNTIME


class ConfigError(CliError):
    code = EXIT_CONFIG


class InputError(CliError):
    code = EXIT_DATA


# --- config ------------------------------------------------------------------


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("train", "rf", "boost", "cnn"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: str | None = None, seed: int | None = None, out: str | None = None) -> dict:
    """Validate a JSON config, fill defaults, apply CLI overrides."""
    user = {"schema_version": CONFIG_SCHEMA_VERSION}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    try:
        jsonschema.validate(user, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    cfg = _merge(DEFAULT_CONFIG, user)
    if seed is not None:
        cfg["seed"] = int(seed)
    if out is not None:
        cfg["output_dir"] = str(out)
    if "generator_kind" in cfg["train"] or "seed" in cfg["train"] or "noise" in cfg["train"]:
        raise ConfigError("train section may not set generator_kind, seed or noise; use --model, --seed and the noise section")
    if cfg["data"]["source"] == "unsw" and "unsw" not in cfg["data"]:
        raise ConfigError("data.source is 'unsw' but data.unsw.testing_file/training_file are not given")
    train_config(cfg, "quantum")  # surfaces bad train keys before any work
    return cfg


def config_hash(cfg: dict) -> str:
    body = {k: v for k, v in cfg.items() if k != "output_dir"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]


def train_config(cfg: dict, kind: str) -> gan.TrainConfig:
    base = gan.TrainConfig.desk(kind, seed=cfg["seed"]).to_dict()
    base.update(cfg["train"])
    base["noise"] = _merge(base["noise"], cfg["noise"])
    base["generator_kind"] = kind
    try:
        return gan.TrainConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train section: {exc}") from None


# --- artifact helpers ------------------------------------------------------------


def _stamp(cfg: dict) -> str:
    return f"config_hash={config_hash(cfg)} seed={cfg['seed']}"


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _write_rows(path: Path, cfg: dict, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {_stamp(cfg)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _write_matrix(path: Path, cfg: dict, names: list[str], X: np.ndarray, label=None) -> None:
    header = list(names) + (["label"] if label is not None else [])
    rows = X.tolist() if label is None else [r + [int(l)] for r, l in zip(X.tolist(), label)]
    _write_rows(path, cfg, header, rows)


def _read_matrix(path: Path, names: list[str]):
    if not path.exists():
        raise InputError(f"missing prepared data: {path} (run 'prepare' first)")
    df = pd.read_csv(path, comment="#")
    X = df[names].to_numpy(dtype=float)
    y = df["label"].to_numpy(dtype=int) if "label" in df.columns else None
    return X, y


def _out_dir(cfg: dict) -> Path:
    d = Path(cfg["output_dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def _prepared(cfg: dict) -> dict:
    side = _out_dir(cfg) / "prepared.json"
    if not side.exists():
        raise InputError(f"missing {side} (run 'prepare' first)")
    meta = json.loads(side.read_text())
    if meta["config_hash"] != config_hash(cfg):
        raise ConfigError(f"{side} was written by config {meta['config_hash']}, current config is {config_hash(cfg)}")
    return meta


# --- commands ----------------------------------------------------------------


def _synthetic_spec(s: dict) -> dp.SyntheticSpec:
    if "attack" in s or "benign" in s:
        spec = dp.SyntheticSpec.from_dict({k: v for k, v in s.items() if k not in ("preset", "separation")})
    elif s.get("preset", "bimodal") == "two_class":
        spec = dp.SyntheticSpec.two_class(s.get("separation", 3.0), n_nuisance=s.get("n_nuisance", 0))
    else:
        spec = dp.SyntheticSpec.bimodal()
        spec.n_nuisance = s.get("n_nuisance", 0)
    if "attack_fraction" in s:
        spec.attack_fraction = s["attack_fraction"]
    return spec


def _load_source(cfg: dict) -> tuple[dict, list[str]]:
    d, seed = cfg["data"], cfg["seed"]
    if d["source"] == "unsw":
        test_file = dp.load_csv(d["unsw"]["testing_file"])
        train_file = dp.load_csv(d["unsw"]["training_file"], encodings=test_file.encodings)
        return dp.split_unsw(test_file, train_file, seed), list(dp.REFERENCE_FEATURES)
    spec = _synthetic_spec(d["synthetic"])
    ds = dp.generate_synthetic(spec, d["n_rows"], seed)
    return dp.split_fractions(ds, d["val_fraction"], d["test_fraction"], seed), list(spec.feature_names)


def cmd_prepare(cfg: dict) -> dict:
    """Load, select features, fit the quantile map on train, write splits."""
    splits, default_features = _load_source(cfg)
    f = cfg["features"]
    selection = None
    if "fixed" in f:
        features = list(f["fixed"])
    elif f["select"]:
        tr = splits["train"]
        scores, top = dp.stage1_screen(tr, top_k=f["top_k"], n_trees=f["n_trees"], max_depth=f["max_depth"],
                                       max_rows=f["max_rows"], seed=cfg["seed"])
        features = dp.stage2_pca_select(tr.matrix(top), top, k=f["k"], corr_threshold=f["corr_threshold"])
        selection = {"scores": scores.to_dict(), "stage1_top": top}
    else:
        features = default_features
    missing = [c for c in features if c not in splits["train"].columns]
    if missing:
        raise InputError(f"selected features not in data: {missing}")

    qt = dp.QuantileTransform().fit(splits["train"].matrix(features))
    out = _out_dir(cfg)
    rows = {}
    for name, part in splits.items():
        _write_matrix(out / f"{name}.csv", cfg, features, qt.transform(part.matrix(features)), part.label)
        rows[name] = {"rows": len(part), "attack": int(part.label.sum())}
    meta = {
        "config_hash": config_hash(cfg), "seed": cfg["seed"], "features": features,
        "config": {k: v for k, v in cfg.items() if k != "output_dir"},
        "selection": selection, "splits": rows, "quantile_transform": qt.to_dict(),
    }
    _write_json(out / "prepared.json", meta)
    log.info("prepared %s with features %s", {k: v["rows"] for k, v in rows.items()}, features)
    return meta


def cmd_train(cfg: dict, model: str) -> gan.TrainTrace:
    meta = _prepared(cfg)
    out = _out_dir(cfg)
    features = meta["features"]
    Xtr, ytr = _read_matrix(out / "train.csv", features)
    Xva, yva = _read_matrix(out / "val.csv", features)
    tc = train_config(cfg, MODELS[model])
    stamp = _stamp(cfg)
    try:
        trace, best = gan.train(tc, Xtr[ytr == 1], Xva[yva == 1])
    except gan.TrainingDiverged as exc:
        exc.trace.write_csv(out / f"trace_{model}.csv", header_comment=stamp + " status=diverged")
        raise CliError(f"training diverged: {exc}; partial trace kept in trace_{model}.csv") from None
    except ValueError as exc:
        raise InputError(str(exc)) from None
    trace.write_csv(out / f"trace_{model}.csv", header_comment=stamp)
    best.save(out / f"checkpoint_{model}.json", extra={"config_hash": config_hash(cfg)})
    summary = {
        "config_hash": config_hash(cfg), "seed": cfg["seed"], "model": model, "epochs": trace.epochs,
        "initial_mmd": trace.initial_mmd, "best_epoch": trace.best_epoch, "best_mmd": trace.best_mmd,
        "critic_steps": trace.critic_steps, "generator_steps": trace.generator_steps,
        "mode_collapse": gan.mode_collapse_monitor(trace, tc.collapse_threshold) if trace.epochs else None,
    }
    _write_json(out / f"train_{model}.json", summary)
    return trace


def _load_checkpoint(cfg: dict, model: str) -> gan.Checkpoint:
    path = _out_dir(cfg) / f"checkpoint_{model}.json"
    if not path.exists():
        raise InputError(f"missing checkpoint {path} (run 'train --model {model}' first)")
    raw = json.loads(path.read_text())
    if raw.get("config_hash") != config_hash(cfg):
        raise ConfigError(f"{path} was trained under config {raw.get('config_hash')}, current is {config_hash(cfg)}")
    return gan.Checkpoint.from_dict(raw)


def sample(cfg: dict, model: str, n: int) -> np.ndarray:
    ck = _load_checkpoint(cfg, model)
    rng = np.random.default_rng([cfg["seed"], list(MODELS).index(model)])
    return ck.generator(ck.generator.sample_latent(rng, n))


def cmd_generate(cfg: dict, model: str, n: int | None = None) -> Path:
    meta = _prepared(cfg)
    n = n or cfg["report"]["n_generate"]
    path = _out_dir(cfg) / f"generated_{model}.csv"
    _write_matrix(path, cfg, meta["features"], sample(cfg, model, n))
    return path


def cmd_report(cfg: dict, models: list[str] | None = None) -> dict:
    """Distribution metrics and IDS evasion for every trained checkpoint."""
    meta = _prepared(cfg)
    out = _out_dir(cfg)
    features = meta["features"]
    if models is None:
        models = [m for m in MODELS if (out / f"checkpoint_{m}.json").exists()]
        if not models:
            raise InputError(f"no checkpoints in {out} (run 'train' first)")
    Xtr, ytr = _read_matrix(out / "train.csv", features)
    Xva, yva = _read_matrix(out / "val.csv", features)
    Xte, yte = _read_matrix(out / "test.csv", features)
    real_attack = Xte[yte == 1]
    mc, seed = cfg["metrics"], cfg["seed"]

    def evaluate(gen):
        try:
            return metrics.evaluate(real_attack, gen, batch_size=mc["batch_size"], mmd_rows=mc["mmd_rows"],
                                    seed=seed).to_dict()
        except metrics.MetricError as exc:
            raise InputError(f"metrics: {exc}") from None

    generated = {m: sample(cfg, m, cfg["report"]["n_generate"]) for m in models}
    protocol = ids.EvasionProtocol(cfg["ids"]["n_per_class"], seed)
    (Xids, yids), _, _ = protocol.build(Xtr, ytr, generated[models[0]])
    ic = cfg["ids"]
    classifiers = ids.train_all(Xids, yids, seed=seed, rf=ic["rf"], boost=ic["boost"], cnn=ic["cnn"])
    accuracy = {name: float(np.mean(clf.predict(Xte) == yte)) for name, clf in classifiers.items()}
    _write_json(out / "ids_models.json", {"config_hash": config_hash(cfg), "seed": seed,
                                          "models": {k: ids.model_to_dict(v) for k, v in classifiers.items()}})

    report = {
        "schema_version": REPORT_SCHEMA_VERSION, "config_hash": config_hash(cfg), "seed": seed,
        "features": features, "baseline": {"real_holdout": evaluate(Xva[yva == 1])},
        "models": {}, "ids_clean_accuracy": accuracy,
    }
    for m in models:
        ck = _load_checkpoint(cfg, m)
        _, gen_eval, benign_eval = protocol.build(Xtr, ytr, generated[m])
        report["models"][m] = {
            "generator_kind": ck.config.generator_kind,
            "parameter_count": ck.generator.parameter_count(),
            "checkpoint_epoch": ck.epoch,
            "checkpoint_val_mmd": ck.val_mmd,
            "n_generated": len(generated[m]),
            "metrics": evaluate(generated[m]),
            "evasion": [r.to_dict() for r in ids.evaluate_evasion(classifiers, gen_eval, benign_eval)],
        }
    jsonschema.validate(report, REPORT_SCHEMA)
    _write_json(out / "report.json", report)

    _write_rows(out / "table2.csv", cfg, ["model", "mmd", "mse", "wd_mean", "wd_std", "kl_mean", "kl_std"],
                [[m] + [report["models"][m]["metrics"][k] for k in ("mmd", "mse", "wd_mean", "wd_std", "kl_mean", "kl_std")]
                 for m in models])
    _write_rows(out / "table3.csv", cfg, ["model", "classifier", "dr", "asr", "f1"],
                [[m, r["classifier"], r["dr"], r["asr"], r["f1"]] for m in models for r in report["models"][m]["evasion"]])
    series = {"real": real_attack, **generated}
    hist = metrics.histogram_export(series, features, bins=mc["histogram_bins"])
    _write_rows(out / "histograms.csv", cfg, list(hist[0]), [list(r.values()) for r in hist])
    return report


# --- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qcgan", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, model=False, model_required=False):
        p.add_argument("--config", help="experiment config JSON (defaults built in)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
        if model:
            p.add_argument("--model", choices=list(MODELS), required=model_required)
        return p

    common(sub.add_parser("prepare", help="load, select, normalize and split data"))
    common(sub.add_parser("train", help="train one generator"), model=True, model_required=True)
    g = common(sub.add_parser("generate", help="sample flows from a checkpoint"), model=True, model_required=True)
    g.add_argument("-n", type=int, help="number of rows (default: report.n_generate)")
    common(sub.add_parser("report", help="metrics, IDS evasion and plot data"), model=True)
    sub.add_parser("selftest", help="analytic oracle checks")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "selftest":
            return EXIT_OK if selftest.run() else EXIT_RUNTIME
        cfg = load_config(args.config, args.seed, args.out)
        if args.command == "prepare":
            meta = cmd_prepare(cfg)
            print(f"prepared {Path(cfg['output_dir']) / 'prepared.json'} features={meta['features']}")
        elif args.command == "train":
            trace = cmd_train(cfg, args.model)
            print(f"trained {args.model}: {trace.epochs} epochs, best val MMD {trace.best_mmd} at epoch {trace.best_epoch}")
        elif args.command == "generate":
            print(f"wrote {cmd_generate(cfg, args.model, args.n)}")
        elif args.command == "report":
            cmd_report(cfg, [args.model] if args.model else None)
            print(f"wrote {Path(cfg['output_dir']) / 'report.json'}")
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (dp.DataError, ids.IDSError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SimulatorError, FloatingPointError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
