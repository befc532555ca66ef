"""Write a synthetic parallel corpus as two directories of 16-bit WAV files.

    python scripts/make_synthetic_corpus.py out/ --pairs 14 --source m1 --target f1

Creates out/<source>/synth_XXXX.wav and out/<target>/synth_XXXX.wav plus an
example config (out/vcmorph.ini) pointing at them.
"""
import argparse
from pathlib import Path

from vcmorph.synthetic import SPEAKERS, make_parallel_corpus
from vcmorph.wavio import save_wav

CONFIG = """\
[corpus]
source_dir = {source}
target_dir = {target}
sample_rate = {fs}

[model]
order = 18
n_components = 5
train_pairs = 8
excitation = predicted

[run]
seed = 0

[output]
model = model.json
csv = grid.csv

[experiment]
training_pairs = 2, 8
gaussians = 1, 3, 5, 10
n_eval = {n_eval}
"""


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", type=Path)
    ap.add_argument("--pairs", type=int, default=14)
    ap.add_argument("--source", default="m1", choices=sorted(SPEAKERS))
    ap.add_argument("--target", default="f1", choices=sorted(SPEAKERS))
    ap.add_argument("--rate", type=int, default=16000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    corpus = make_parallel_corpus(args.pairs, args.source, args.target, fs=args.rate, seed=args.seed)
    src_dir = args.out / args.source
    tgt_dir = args.out / (args.target if args.target != args.source else args.target + "_copy")
    src_dir.mkdir(parents=True, exist_ok=True)
    tgt_dir.mkdir(parents=True, exist_ok=True)
    for p in corpus.pairs:
        save_wav(p.source, src_dir / f"{p.id}.wav")
        save_wav(p.target, tgt_dir / f"{p.id}.wav")
    cfg = CONFIG.format(source=src_dir.name, target=tgt_dir.name, fs=args.rate,
                        n_eval=max(1, args.pairs - 8))
    (args.out / "vcmorph.ini").write_text(cfg)
    print(f"{len(corpus)} pairs written to {src_dir} and {tgt_dir}")
    print(f"config: {args.out / 'vcmorph.ini'}")


if __name__ == "__main__":
    main()
