"""How much Gaussian blur it takes to defeat the harness plate reader.

Blurs every scene of a seeded corpus at each sigma (11x11 kernel, replicated
borders) and reports mean image MSE against character recognition accuracy.
"""

import argparse
from pathlib import Path

from privfan import harness
from privfan.blur import DEFAULT_SIGMAS, blur_sweep, write_sweep_csv
from privfan.corpus import synth_corpus
from privfan.report import plot_blur


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", type=Path, default=Path("runs/blur"))
    ap.add_argument("--scenes", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--ink", type=float, default=0.75)
    ap.add_argument("--sigmas", type=float, nargs="+", default=list(DEFAULT_SIGMAS))
    args = ap.parse_args()

    corpus = synth_corpus(args.scenes, seed=args.seed, ink=args.ink)
    items = [(s.image_id, s.image, s.annotations) for s in corpus.scenes]
    rows = blur_sweep(items, args.sigmas, harness.recognize_plates)
    args.out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(rows, args.out / "blur.csv")
    plot_blur(rows, args.out / "blur.svg")
    for r in rows:
        print(f"sigma={r['sigma']:<4g} mse={r['mse']:.5f} cra={r['cra']:6.2f}")


if __name__ == "__main__":
    main()
