"""JSON schemas for experiment configs and consolidated reports.

Run ``python3 -m qcgan.schemas`` to print both.
"""
from __future__ import annotations

import json

CONFIG_SCHEMA_VERSION = 1
REPORT_SCHEMA_VERSION = 1

_num = {"type": "number"}
_nonneg = {"type": "number", "minimum": 0}
_int = {"type": "integer"}
_posint = {"type": "integer", "minimum": 1}
_prob = {"type": "number", "minimum": 0, "maximum": 1}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_component = _obj({"weight": _nonneg, "mean": {"type": "array", "items": _num},
                   "scale": {"type": "array", "items": _nonneg}}, ["weight", "mean", "scale"])

CONFIG_SCHEMA = _obj({
    "schema_version": {"const": CONFIG_SCHEMA_VERSION},
    "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
    "output_dir": {"type": "string"},
    "data": _obj({
        "source": {"enum": ["synthetic", "unsw"]},
        "n_rows": {"type": "integer", "minimum": 20},
        "synthetic": _obj({
            "preset": {"enum": ["bimodal", "two_class"]},
            "separation": _nonneg,
            "attack_fraction": _prob,
            "n_nuisance": {"type": "integer", "minimum": 0},
            "attack": {"type": "array", "items": _component},
            "benign": {"type": "array", "items": _component},
            "feature_names": {"type": "array", "items": {"type": "string"}},
        }),
        "unsw": _obj({"testing_file": {"type": "string"}, "training_file": {"type": "string"}}),
        "val_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "test_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    }),
    "features": _obj({
        "select": {"type": "boolean"},
        "fixed": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "top_k": _posint,
        "k": _posint,
        "n_trees": _posint,
        "max_depth": _posint,
        "max_rows": _posint,
        "corr_threshold": _prob,
    }),
    "train": {"type": "object"},  # checked field-by-field by TrainConfig.from_dict
    "noise": _obj({
        "p_depolarizing": _prob, "p_bitflip": _prob, "gamma_amplitude_damping": _prob,
        "insertion_point": {"type": "string"},
    }),
    "metrics": _obj({"batch_size": {"type": "integer", "minimum": 2}, "mmd_rows": {"type": "integer", "minimum": 2},
                     "histogram_bins": _posint}),
    "ids": _obj({"n_per_class": _posint, "rf": {"type": "object"}, "boost": {"type": "object"},
                 "cnn": {"type": "object"}}),
    "report": _obj({"n_generate": {"type": "integer", "minimum": 2}}),
}, ["schema_version"])

_metric_report = _obj({
    "mmd": _nonneg, "mse": _nonneg, "wd_mean": _nonneg, "wd_std": _nonneg, "kl_mean": _nonneg,
    "kl_std": _nonneg, "batch_count": {"type": "integer", "minimum": 2}, "config": {"type": "object"},
}, ["mmd", "mse", "wd_mean", "wd_std", "kl_mean", "kl_std", "batch_count", "config"])

_evasion = _obj({
    "classifier": {"type": "string"}, "dr": _prob, "asr": _prob, "f1": _prob,
    "tp": {"type": "integer", "minimum": 0}, "fn": {"type": "integer", "minimum": 0},
    "fp": {"type": "integer", "minimum": 0}, "tn": {"type": "integer", "minimum": 0},
}, ["classifier", "dr", "asr", "f1", "tp", "fn", "fp", "tn"])

REPORT_SCHEMA = _obj({
    "schema_version": {"const": REPORT_SCHEMA_VERSION},
    "config_hash": {"type": "string", "pattern": "^[0-9a-f]{16}$"},
    "seed": {"type": "integer", "minimum": 0},
    "features": {"type": "array", "items": {"type": "string"}},
    "baseline": _obj({"real_holdout": _metric_report}),
    "models": {
        "type": "object",
        "additionalProperties": _obj({
            "generator_kind": {"type": "string"},
            "parameter_count": _posint,
            "checkpoint_epoch": {"type": "integer", "minimum": 0},
            "checkpoint_val_mmd": {"type": ["number", "null"]},
            "n_generated": _posint,
            "metrics": _metric_report,
            "evasion": {"type": "array", "items": _evasion},
        }, ["generator_kind", "parameter_count", "metrics", "evasion"]),
    },
    "ids_clean_accuracy": {"type": "object", "additionalProperties": _prob},
}, ["schema_version", "config_hash", "seed", "features", "models"])


if __name__ == "__main__":
    print(json.dumps({"config": CONFIG_SCHEMA, "report": REPORT_SCHEMA}, indent=2))
