"""Training-size x mixture-size grid (pairs {2, 8} x K {1, 3, 5, 10}).

Runs on a synthetic m1 -> f1 corpus by default, or on WAV directories:

    python scripts/run_grid.py --out grid.csv
    python scripts/run_grid.py --source-dir arctic/slt --target-dir arctic/rms --limit 14

Besides the grid, the source-to-target spectral distortion of the evaluation
utterances is printed as the no-conversion baseline.
"""
import argparse
import logging
import time

import numpy as np

from vcmorph.conversion import ConversionConfig
from vcmorph.evaluation import avg_spectral_distortion, run_experiment, snr_db
from vcmorph.synthetic import make_parallel_corpus
from vcmorph.wavio import ingest_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--source-dir")
    ap.add_argument("--target-dir")
    ap.add_argument("--limit", type=int, default=14)
    ap.add_argument("--source", default="m1")
    ap.add_argument("--target", default="f1")
    ap.add_argument("--n-eval", type=int, default=6)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--excitation", default="predicted", choices=("predicted", "passthrough"))
    ap.add_argument("--out", help="CSV path")
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)

    if args.source_dir:
        corpus = ingest_corpus(args.source_dir, args.target_dir, limit=args.limit)
    else:
        corpus = make_parallel_corpus(args.limit, args.source, args.target, seed=args.seed)
    cfg = ConversionConfig(seed=args.seed, excitation=args.excitation,
                           sample_rate=corpus.sample_rate)
    t0 = time.perf_counter()
    grid = run_experiment(corpus, (2, 8), (1, 3, 5, 10), n_eval=args.n_eval, base_cfg=cfg)
    print(grid.table())
    held_out = corpus.pairs[len(corpus) - args.n_eval:]
    base_sd = np.mean([avg_spectral_distortion(p.source, p.target) for p in held_out])
    base_snr = np.mean([snr_db(p.target, p.source) for p in held_out])
    print(f"no conversion: snr_db {base_snr:.4f}  avg_sd {base_sd:.4f}")
    print(f"total {time.perf_counter() - t0:.1f} s")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(grid.to_csv())


if __name__ == "__main__":
    main()
