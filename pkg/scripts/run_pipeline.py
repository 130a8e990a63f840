"""One-shot pipeline: corpus -> labels -> training -> comparison table.

Generates the synthetic benchmark, oracle-labels it, trains the selector,
and prints held-out F1 for the trained model, the single best fixed
combo, and the voting baseline. A smaller --scale makes a quick run.
"""

import argparse
import sys
import time

import numpy as np

from adsel.baseline import default_vote_pool, vote_detect
from adsel.core import compute_metrics, score_mask
from adsel.data import default_corpus
from adsel.detectors import default_grid, enumerate_combos, run_detector
from adsel.net import ArchitectureSpec, TrainConfig, detect_adaptive, train
from adsel.oracle import build_dataset


def pooled_f1(counts):
    total = counts[0]
    for c in counts[1:]:
        total = type(total)(
            tp=total.tp + c.tp, fp=total.fp + c.fp,
            fn=total.fn + c.fn, tn=total.tn + c.tn,
        )
    return compute_metrics(total).f1


def grouped_windows(examples):
    by_series = {}
    for e in examples:
        by_series.setdefault(e.raw_window.parent_id, []).append(e)
    for pid in sorted(by_series):
        rows = sorted(by_series[pid], key=lambda e: e.raw_window.start_index)
        windows = [e.raw_window for e in rows]
        for i, e in enumerate(rows):
            yield e, windows[:i]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--scale", type=float, default=1.0,
                        help="corpus size multiplier")
    parser.add_argument("--epochs", type=int, default=150)
    parser.add_argument("--variant", default="ATSDLN",
                        choices=["NS", "SSR", "ATSDLN"])
    parser.add_argument("--holdout", type=float, default=0.25,
                        help="fraction of series held out for the table")
    args = parser.parse_args()

    grids = default_grid()
    t0 = time.time()
    corpus = default_corpus(seed=args.seed, scale=args.scale)
    rng = np.random.default_rng(args.seed)
    order = rng.permutation(len(corpus))
    n_test = max(1, int(len(corpus) * args.holdout))
    test_series = [corpus[i] for i in sorted(order[:n_test])]
    train_series = [corpus[i] for i in sorted(order[n_test:])]
    print(f"corpus: {len(train_series)} train / {len(test_series)} held-out series")

    train_examples = build_dataset(train_series, 200, 100, grids)
    test_examples = build_dataset(test_series, 200, 100, grids)
    print(f"labeled {len(train_examples)}+{len(test_examples)} windows "
          f"({time.time() - t0:.1f}s)")

    spec = ArchitectureSpec.for_grid(grids, variant=args.variant)
    config = TrainConfig(max_epochs=args.epochs, seed=args.seed)
    net, log = train(train_examples, spec, grids, config)
    print(f"trained {args.variant} for {len(log)} epochs "
          f"(best val joint F1 {max(r.val_joint_f1 for r in log):.3f})")

    model_counts, combo_counts = [], {}
    combos = enumerate_combos(grids)
    baseline_counts = []
    pool = default_vote_pool(grids)
    for e, ctx in grouped_windows(test_examples):
        w = e.raw_window
        result, _ = detect_adaptive(net, w, ctx)
        model_counts.append(score_mask(result.mask, w.labels))
        baseline_counts.append(
            score_mask(vote_detect(w, pool, context=ctx).mask, w.labels)
        )
        for ref in combos:
            mask = run_detector(ref.config, w, context=ctx).mask
            combo_counts.setdefault(ref.combo_index, []).append(
                score_mask(mask, w.labels)
            )

    best_combo = max(combo_counts, key=lambda i: pooled_f1(combo_counts[i]))
    print()
    print(f"{'scorer':<28}  held-out F1")
    print(f"{'trained ' + args.variant:<28}  {pooled_f1(model_counts):.4f}")
    label = combos[best_combo].config.label()
    print(f"{'best fixed combo (' + label + ')':<28}  "
          f"{pooled_f1(combo_counts[best_combo]):.4f}")
    print(f"{'voting baseline':<28}  {pooled_f1(baseline_counts):.4f}")
    print(f"\ntotal {time.time() - t0:.1f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
