"""Train the 16-sample synthetic overfit run and report training-set metrics.

    python scripts/run_overfit.py --out runs/overfit [--steps 500] [--seed 0]
"""

import argparse
import time

from lfinet.config import RunConfig
from lfinet.train import build_dataset, evaluate_model, fit


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/overfit")
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = RunConfig(seed=args.seed, batch_size=4, lr=1e-3, epochs=125, synthetic_samples=16, max_steps=args.steps,
                    out_dir=args.out)
    pairs = build_dataset(cfg)
    start = time.perf_counter()

    def progress(s):
        if s.epoch % 10 == 0 or s.epoch == 1:
            print(f"epoch {s.epoch:3d}  loss {s.loss:.4f}  dice {s.dice:.4f}  bce {s.bce:.4f}  "
                  f"train IoU {s.train_iou:.4f}  {time.perf_counter() - start:.0f}s", flush=True)

    model, history = fit(cfg, pairs, out_dir=args.out, on_epoch=progress)
    report, _ = evaluate_model(model, pairs)
    print(f"steps {sum(h.steps for h in history)}  final loss {history[-1].loss:.4f}  "
          f"eval IoU {report.iou:.4f}  F1 {report.f1:.4f}  {time.perf_counter() - start:.0f}s")


if __name__ == "__main__":
    main()
