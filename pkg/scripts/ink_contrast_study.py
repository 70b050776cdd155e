"""Plate ink contrast vs. leakage at each enhancement QP.

The harness plates carry a full-contrast frame, so the glyph ink level sets
how much of the detail-channel range the characters use. This script shows
how CRA at each QP moves with that level (the default harness uses 0.75).
"""

import argparse

from privfan.corpus import synth_corpus
from privfan.pipeline import RunConfig, score_corpus, sweep
from privfan.scoring import partition


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--scenes", type=int, default=20)
    ap.add_argument("--inks", type=float, nargs="+", default=[0.0, 0.5, 0.7, 0.75, 0.8])
    ap.add_argument("--qps", type=int, nargs="+", default=[40, 30, 20, 10])
    args = ap.parse_args()

    print("ink   " + " ".join(f"QP{q:<5}" for q in args.qps))
    for ink in args.inks:
        corpus = synth_corpus(args.scenes, seed=0, ink=ink)
        cfg = RunConfig(corpus=None, output=None, base_size=corpus.meta["base_size"], enhancement_qps=tuple(args.qps))
        part = partition(score_corpus(corpus, cfg.fan_config()), cfg.fan_config())
        rows = {r["qp"]: r for r in sweep(corpus, part, cfg, write_streams=False)}
        print(f"{ink:<5g} " + " ".join(f"{rows[q]['cra']:<7.1f}" for q in args.qps))


if __name__ == "__main__":
    main()
