"""Train each ablation variant for a short budget and tabulate training-set scores.

Only structure is compared here; the small synthetic set says little about
which component matters on real trajectories.

    python scripts/run_ablation.py --steps 100 --out runs/ablation
"""

import argparse
import csv
from pathlib import Path

from lfinet.config import RunConfig
from lfinet.train import build_dataset, evaluate_model, fit

VARIANTS = {"full": {}, "no_lms": {"use_lms": False}, "no_hfb": {"use_hfb": False}, "no_fgm": {"use_fgm": False},
            "no_st": {"use_st": False}, "no_prd": {"use_prd": False}}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, flags in VARIANTS.items():
        cfg = RunConfig(seed=args.seed, batch_size=4, lr=1e-3, epochs=10_000, synthetic_samples=16,
                        max_steps=args.steps, **flags)
        pairs = build_dataset(cfg)
        model, history = fit(cfg, pairs, out_dir=out / name)
        report, _ = evaluate_model(model, pairs)
        rows.append({"variant": name, "params": model.num_parameters(), "final_loss": history[-1].loss,
                     "iou": report.iou, "f1": report.f1})
        print(f"{name:8s} params {rows[-1]['params']:8d}  loss {history[-1].loss:.4f}  IoU {report.iou:.4f}")
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


if __name__ == "__main__":
    main()
