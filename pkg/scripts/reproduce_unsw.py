"""Full pipeline on UNSW-NB15: prepare, train all three generators, report.

    python3 scripts/reproduce_unsw.py --data /path/to/unsw --out runs/unsw

The data directory must hold UNSW_NB15_testing-set.csv and
UNSW_NB15_training-set.csv. Absolute numbers depend on seeds and hardware;
the script prints the qualitative checks (selected features, split sizes,
ASR above 0.05 for every generator and classifier).
"""
import argparse
import json
from pathlib import Path

from qcgan import cli, datapipe as dp


def main():
    ap = argparse.ArgumentParser(description="UNSW-NB15 end-to-end run")
    ap.add_argument("--data", required=True)
    ap.add_argument("--out", default="runs/unsw")
    ap.add_argument("--config", default=str(Path(__file__).resolve().parents[1] / "configs" / "unsw.json"))
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()

    cfg = cli.load_config(args.config, args.seed, args.out)
    data = Path(args.data)
    cfg["data"]["unsw"] = {"testing_file": str(data / "UNSW_NB15_testing-set.csv"),
                           "training_file": str(data / "UNSW_NB15_training-set.csv")}
    meta = cli.cmd_prepare(cfg)
    for m in cli.MODELS:
        cli.cmd_train(cfg, m)
        cli.cmd_generate(cfg, m)
    report = cli.cmd_report(cfg)

    sizes = {k: v["rows"] for k, v in meta["splits"].items()}
    print("features:", meta["features"], "match" if set(meta["features"]) == set(dp.REFERENCE_FEATURES) else "DIFFER")
    print("splits:", sizes, "match" if sizes == dp.SPLIT_SIZES else "DIFFER")
    for m, v in report["models"].items():
        for r in v["evasion"]:
            print(f"{m:12s} {r['classifier']:8s} DR {r['dr']:.3f} ASR {r['asr']:.3f} F1 {r['f1']:.3f}")
    print(json.dumps({m: v["metrics"]["mmd"] for m, v in report["models"].items()}, indent=1))


if __name__ == "__main__":
    main()
