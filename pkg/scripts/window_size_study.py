"""Voting-baseline quality as a function of window size.

Slides windows of several sizes over the synthetic corpus, runs the
majority-vote baseline on each, and prints pooled metrics per size.
Smaller windows give every detector less evidence per decision, so the
baseline should degrade as the window shrinks.
"""

import argparse
import sys

from adsel.baseline import applicable_pool, default_vote_pool, vote_detect
from adsel.core import ConfusionCounts, compute_metrics, score_mask, slide_windows
from adsel.data import default_corpus
from adsel.detectors import default_grid


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--scale", type=float, default=1.0)
    parser.add_argument("--sizes", default="50,100,150,200")
    parser.add_argument("--rule", default="absolute",
                        choices=["absolute", "relative", "weighted"])
    args = parser.parse_args()

    corpus = default_corpus(seed=args.seed, scale=args.scale)
    full_pool = default_vote_pool(default_grid())
    sizes = [int(s) for s in args.sizes.split(",")]

    print(f"{'size':>6} {'stride':>7} {'pool':>5} {'windows':>8} "
          f"{'precision':>10} {'recall':>7} {'f1':>7}")
    for size in sizes:
        stride = max(1, size // 2)
        pool = applicable_pool(full_pool, size)
        pooled = ConfusionCounts(0, 0, 0, 0)
        n = 0
        for series in corpus:
            windows = slide_windows(series, size, stride)
            for i, w in enumerate(windows):
                mask = vote_detect(w, pool, rule=args.rule,
                                   context=windows[:i]).mask
                c = score_mask(mask, w.labels)
                pooled = ConfusionCounts(
                    tp=pooled.tp + c.tp, fp=pooled.fp + c.fp,
                    fn=pooled.fn + c.fn, tn=pooled.tn + c.tn,
                )
                n += 1
        report = compute_metrics(pooled)
        print(f"{size:>6} {stride:>7} {len(pool):>5} {n:>8} "
              f"{report.precision:>10.4f} {report.recall:>7.4f} {report.f1:>7.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
