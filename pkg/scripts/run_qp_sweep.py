"""Rate / accuracy / privacy sweep on the synthetic harness.

Generates a seeded corpus, scores and partitions the channels, then codes the
base layer at a fixed QP while sweeping the enhancement QP. Writes
results.csv, sweep.svg and the coded streams under --out.

    python3 scripts/run_qp_sweep.py --out runs/qp_sweep --scenes 50
"""

import argparse
import logging
from pathlib import Path

from privfan.corpus import synth_corpus, write_corpus
from privfan.pipeline import DEFAULT_BASE_QP, DEFAULT_ENHANCEMENT_QPS, RunConfig, run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", type=Path, default=Path("runs/qp_sweep"))
    ap.add_argument("--scenes", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--ink", type=float, default=0.75)
    ap.add_argument("--beta", type=float, default=10.0)
    ap.add_argument("--base-size", type=int, default=None)
    ap.add_argument("--base-qp", type=int, default=DEFAULT_BASE_QP)
    ap.add_argument("--qps", type=int, nargs="+", default=list(DEFAULT_ENHANCEMENT_QPS))
    ap.add_argument("--workers", type=int, default=4)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    corpus = synth_corpus(args.scenes, seed=args.seed, ink=args.ink)
    write_corpus(corpus, args.out / "corpus")
    cfg = RunConfig(
        corpus=args.out / "corpus",
        output=args.out,
        beta=args.beta,
        base_size=args.base_size or corpus.meta["base_size"],
        base_qp=args.base_qp,
        enhancement_qps=tuple(args.qps),
        seed=args.seed,
        workers=args.workers,
    )
    rows = run_sweep(corpus, cfg, plots=True)
    print(f"{'qp':>4} {'bytes':>9} {'mIoU':>7} {'RMSE':>9} {'CRA':>7}")
    for r in rows:
        if r["error"]:
            print(f"{r['qp']:>4} failed: {r['error']}")
            continue
        print(f"{r['qp']:>4} {r['total_bytes']:>9} {r['miou']:>7.4f} {r['rmse']:>9.5f} {r['cra']:>7.2f}")


if __name__ == "__main__":
    main()
