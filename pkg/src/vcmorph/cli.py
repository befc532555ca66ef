"""Command-line entry point: ``vcmorph {train,convert,evaluate,experiment}``.

Settings come from an INI file with sections::

    [corpus]      source_dir, target_dir, sample_rate, limit, normalize
    [model]       order, n_components, train_pairs, excitation, pulse_fit, feature,
                  include_gain, closed_phase, closed_phase_fraction, voicing_penalty,
                  dtw_band, prototype_length
    [em]          max_iters, tol, covariance_type, variance_floor
    [pitch]       hop, window, fmin, fmax, voicing_threshold, silence_db, octave_ratio
    [run]         seed, log_level
    [output]      model, csv
    [experiment]  training_pairs, gaussians, n_eval, timing_repeats

Relative paths are resolved against the config file's directory. Unknown
sections or keys are rejected. Exit codes: 0 ok, 1 usage, 2 data, 3 numerical.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from . import conversion, evaluation, glottal
from .errors import ConfigError, RateMismatchError, VcError
from .wavio import ingest_corpus, load_wav, save_wav

log = logging.getLogger("vcmorph")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

_MODEL_KEYS = ("order", "n_components", "train_pairs", "excitation", "pulse_fit", "feature",
               "include_gain", "closed_phase", "closed_phase_fraction", "voicing_penalty",
               "dtw_band", "prototype_length")
_EM_KEYS = ("max_iters", "tol", "covariance_type", "variance_floor")
_OPTIONAL_INT = {"train_pairs", "dtw_band", "limit"}


@dataclass
class CliConfig:
    source_dir: Path | None = None
    target_dir: Path | None = None
    limit: int | None = None
    normalize: bool = True
    model_path: Path | None = None
    csv_path: Path | None = None
    log_level: str = "WARNING"
    training_pairs: tuple = (2, 8)
    gaussians: tuple = (1, 3, 5, 10)
    n_eval: int = 6
    timing_repeats: int = 5
    conversion: conversion.ConversionConfig = field(default_factory=conversion.ConversionConfig)

    def require_corpus(self):
        if self.source_dir is None or self.target_dir is None:
            raise ConfigError("config needs [corpus] source_dir and target_dir")


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(key, text, default):
    text = text.strip()
    if key in _OPTIONAL_INT:
        return None if text.lower() in ("", "none") else int(text)
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def _int_list(text):
    out = tuple(int(t) for t in text.replace(",", " ").split())
    if not out:
        raise ValueError("empty list")
    return out


def load_config(path) -> CliConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    base = path.parent
    cc = conversion.ConversionConfig()
    pitch_defaults = {f.name: getattr(glottal.PitchConfig(), f.name) for f in fields(glottal.PitchConfig)}
    model_kw, pitch_kw = {}, {}
    cfg = CliConfig()

    def resolve(p):
        p = Path(os.path.expanduser(p.strip()))
        return p if p.is_absolute() else base / p

    known = {
        "corpus": ("source_dir", "target_dir", "sample_rate", "limit", "normalize"),
        "model": _MODEL_KEYS,
        "em": _EM_KEYS,
        "pitch": tuple(pitch_defaults),
        "run": ("seed", "log_level"),
        "output": ("model", "csv"),
        "experiment": ("training_pairs", "gaussians", "n_eval", "timing_repeats"),
    }
    for section in cp.sections():
        if section not in known:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in known[section]:
                raise ConfigError(f"{path}: unknown key '{key}' in [{section}]")
            try:
                if section == "corpus":
                    if key in ("source_dir", "target_dir"):
                        setattr(cfg, key, resolve(raw))
                    elif key == "sample_rate":
                        model_kw["sample_rate"] = int(raw)
                    elif key == "limit":
                        cfg.limit = _convert(key, raw, None)
                    else:
                        cfg.normalize = _parse_bool(raw)
                elif section in ("model", "em"):
                    model_kw[key] = _convert(key, raw, getattr(cc, key))
                elif section == "pitch":
                    pitch_kw[key] = float(raw)
                elif section == "run":
                    if key == "seed":
                        model_kw["seed"] = int(raw)
                    else:
                        cfg.log_level = raw.strip().upper()
                elif section == "output":
                    setattr(cfg, "model_path" if key == "model" else "csv_path", resolve(raw))
                elif key in ("training_pairs", "gaussians"):
                    setattr(cfg, key, _int_list(raw))
                else:
                    setattr(cfg, key, int(raw))
            except ValueError as exc:
                raise ConfigError(f"{path}: bad value for {key} in [{section}]: {exc}") from exc
    try:
        model_kw["pitch"] = glottal.PitchConfig(**pitch_kw)
        cfg.conversion = conversion.ConversionConfig(**model_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if cfg.log_level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        raise ConfigError(f"{path}: unknown log_level {cfg.log_level}")
    return cfg


def _atomic_write_text(path: Path, text: str):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _corpus(cfg: CliConfig, limit=None):
    cfg.require_corpus()
    corpus = ingest_corpus(cfg.source_dir, cfg.target_dir, limit=limit, normalize=cfg.normalize)
    if corpus.sample_rate != cfg.conversion.sample_rate:
        raise RateMismatchError(f"corpus rate {corpus.sample_rate} Hz, config expects "
                                f"{cfg.conversion.sample_rate} Hz")
    return corpus


def _with_seed(cfg: CliConfig, seed, args=None):
    # the config's log level applies unless -v/-q was given
    if args is not None and not args.verbose and not args.quiet:
        logging.getLogger().setLevel(cfg.log_level)
    if seed is not None:
        cfg.conversion = replace(cfg.conversion, seed=seed)
    return cfg


def cmd_train(args) -> int:
    cfg = _with_seed(load_config(args.config), args.seed, args)
    out = Path(args.output) if args.output else cfg.model_path
    if out is None:
        raise ConfigError("no model output path: pass --output or set [output] model")
    limit = cfg.conversion.train_pairs if cfg.limit is None else cfg.limit
    corpus = _corpus(cfg, limit)
    log.info("training on %d pairs (%s -> %s)", len(corpus), cfg.source_dir, cfg.target_dir)
    model = conversion.train(corpus, cfg.conversion)
    conversion.save_model(model, out)
    s = model.summary
    print(f"pairs {s['pairs']}")
    print(f"vectors {s['vectors']}")
    print(f"voiced_vectors {s['voiced_vectors']}")
    print(f"components {model.n_components}")
    print(f"em_iterations {s['em_iterations']}")
    print(f"log_likelihood {s['log_likelihood']:.6f}")
    print(f"model {out}")
    return EXIT_OK


def cmd_convert(args) -> int:
    model = conversion.load_model(args.model)
    src = load_wav(args.input)
    res = conversion.convert(model, src, details=True)
    save_wav(res.waveform, args.output)
    print(f"frames {res.frames}")
    print(f"voiced_frames {res.voiced_frames}")
    print(f"flagged_frames {res.flagged_frames}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    conv = load_wav(args.converted)
    tgt = load_wav(args.target)
    rep = evaluation.evaluate(conv, tgt, order=args.order)
    for line in rep.lines():
        print(line)
    log.info("%s", evaluation.SNR_DEFINITION)
    if args.csv:
        print("snr_db,avg_sd,frames_compared,flagged_frames")
        print(f"{rep.snr_db!r},{rep.avg_spectral_distortion!r},{rep.frames_compared},{rep.flagged_frames}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _with_seed(load_config(args.config), args.seed, args)
    out = Path(args.output) if args.output else cfg.csv_path
    corpus = _corpus(cfg, cfg.limit)
    grid = evaluation.run_experiment(corpus, cfg.training_pairs, cfg.gaussians, cfg.n_eval,
                                     cfg.conversion, timing_repeats=cfg.timing_repeats)
    if out is not None:
        _atomic_write_text(out, grid.to_csv())
        log.info("wrote %s", out)
    print(grid.table())
    return EXIT_OK if all(not r.error for r in grid.rows) else EXIT_NUMERIC


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vcmorph", description="GMM voice conversion with glottal source separation")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    p.add_argument("-q", "--quiet", action="store_true", help="errors only")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a conversion model from a parallel corpus")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--output", help="model file (overrides [output] model)")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("convert", help="convert one utterance")
    c.add_argument("model")
    c.add_argument("input")
    c.add_argument("--output", required=True)
    c.set_defaults(func=cmd_convert)

    e = sub.add_parser("evaluate", help="SNR and spectral distortion against a target")
    e.add_argument("converted")
    e.add_argument("target")
    e.add_argument("--order", type=int, default=18)
    e.add_argument("--csv", action="store_true", help="also print a CSV row")
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("experiment", help="training-size x mixture-size grid")
    x.add_argument("--config", required=True)
    x.add_argument("--seed", type=int)
    x.add_argument("--output", help="CSV file (overrides [output] csv)")
    x.set_defaults(func=cmd_experiment)
    return p


def _setup_logging(args):
    level = logging.WARNING
    if args.quiet:
        level = logging.ERROR
    elif args.verbose > 1:
        level = logging.DEBUG
    elif args.verbose == 1:
        level = logging.INFO
    root = logging.getLogger()
    for h in list(root.handlers):
        root.removeHandler(h)
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _setup_logging(args)
    try:
        return args.func(args)
    except VcError as exc:
        log.error("%s failed: %s", args.command, exc)
        return exc.exit_code
    except FileNotFoundError as exc:
        log.error("%s failed: file not found: %s", args.command, exc.filename or exc)
        return EXIT_DATA
    except OSError as exc:
        log.error("%s failed: %s", args.command, exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
