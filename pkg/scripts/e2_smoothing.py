"""E2 smoothing of power-law Fourier data.

    python scripts/e2_smoothing.py [--config configs/e2.json] [--output-dir DIR]
"""
import argparse
import sys
from pathlib import Path

from contavg.experiments import ExperimentConfig, run_experiment, write_result

ROOT = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "e2.json"))
    ap.add_argument("--output-dir")
    args = ap.parse_args()
    cfg = ExperimentConfig.from_json(args.config)
    res = run_experiment(cfg)
    for p in write_result(res, args.output_dir or cfg.output_dir):
        print("wrote", p)
    print(res.summary())
    sys.exit(0 if res.passed else 1)
