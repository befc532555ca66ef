import subprocess
import sys

import numpy as np
import pytest

from vcmorph import evaluation
from vcmorph.cli import load_config, main
from vcmorph.errors import ConfigError
from vcmorph.wavio import Waveform, load_wav, save_wav


def write_corpus(root, corpus):
    for side in ("src", "tgt"):
        (root / side).mkdir(parents=True)
    for p in corpus.pairs:
        save_wav(p.source, root / "src" / f"{p.id}.wav")
        save_wav(p.target, root / "tgt" / f"{p.id}.wav")


def write_config(path, body=""):
    path.write_text("[corpus]\nsource_dir = src\ntarget_dir = tgt\n"
                    "[model]\norder = 12\nn_components = 1\n[em]\nmax_iters = 30\n" + body)
    return path


@pytest.fixture(scope="module")
def workdir(tmp_path_factory, corpus14):
    root = tmp_path_factory.mktemp("cli")
    write_corpus(root, corpus14.subset(corpus14.ids[:4]))
    return root


@pytest.fixture(scope="module")
def trained(workdir):
    cfg = write_config(workdir / "run.ini", "[run]\nseed = 7\n")
    assert main(["train", "--config", str(cfg), "--output", str(workdir / "a.json")]) == 0
    return workdir / "a.json"


def test_train_prints_summary(workdir, trained, capsys):
    cfg = workdir / "run.ini"
    assert main(["train", "--config", str(cfg), "--output", str(workdir / "b.json")]) == 0
    out = capsys.readouterr().out
    for key in ("pairs 4", "vectors", "components 1", "log_likelihood", "model "):
        assert key in out
    assert (workdir / "b.json").read_bytes() == trained.read_bytes()


def test_two_pair_config(workdir, tmp_path, capsys):
    cfg = write_config(workdir / "two.ini")
    cfg.write_text(cfg.read_text().replace("n_components = 1", "n_components = 1\ntrain_pairs = 2"))
    assert main(["train", "--config", str(cfg), "--output", str(tmp_path / "m.json")]) == 0
    assert (tmp_path / "m.json").exists()
    assert "pairs 2" in capsys.readouterr().out


def test_seed_flag_reaches_the_model(workdir, tmp_path):
    cfg = workdir / "run.ini"
    assert main(["train", "--config", str(cfg), "--seed", "3", "--output", str(tmp_path / "s.json")]) == 0
    from vcmorph.conversion import load_model
    assert load_model(tmp_path / "s.json").config.seed == 3


def test_missing_corpus_dir(tmp_path, capsys):
    cfg = write_config(tmp_path / "bad.ini")
    code = main(["train", "--config", str(cfg), "--output", str(tmp_path / "m.json")])
    assert code == 2
    assert str(tmp_path / "src") in capsys.readouterr().err
    assert not (tmp_path / "m.json").exists()


def test_convert_writes_pcm_and_is_deterministic(workdir, trained, tmp_path, corpus14, capsys):
    src = tmp_path / "in.wav"
    save_wav(corpus14.pairs[12].source, src)
    assert main(["convert", str(trained), str(src), "--output", str(tmp_path / "o1.wav")]) == 0
    assert "flagged_frames" in capsys.readouterr().out
    assert main(["convert", str(trained), str(src), "--output", str(tmp_path / "o2.wav")]) == 0
    assert (tmp_path / "o1.wav").read_bytes() == (tmp_path / "o2.wav").read_bytes()
    import wave
    with wave.open(str(tmp_path / "o1.wav")) as wf:
        assert wf.getsampwidth() == 2 and wf.getnchannels() == 1
        assert wf.getnframes() == len(corpus14.pairs[12].source)


def test_convert_silence(trained, tmp_path):
    save_wav(Waveform(np.zeros(4000), 16000), tmp_path / "z.wav")
    assert main(["convert", str(trained), str(tmp_path / "z.wav"), "--output", str(tmp_path / "o.wav")]) == 0
    assert not np.any(load_wav(tmp_path / "o.wav").samples)


def test_convert_rate_mismatch(trained, tmp_path):
    save_wav(Waveform(np.ones(4000) * 0.1, 8000), tmp_path / "r.wav")
    assert main(["convert", str(trained), str(tmp_path / "r.wav"), "--output", str(tmp_path / "o.wav")]) == 2
    assert not (tmp_path / "o.wav").exists()


def test_self_conversion_via_cli(tmp_path, self_corpus, capsys):
    write_corpus(tmp_path, self_corpus)
    cfg = write_config(tmp_path / "self.ini")
    cfg.write_text(cfg.read_text().replace("order = 12\n", "order = 18\nexcitation = passthrough\n"))
    assert main(["train", "--config", str(cfg), "--output", str(tmp_path / "m.json")]) == 0
    wav = tmp_path / "src" / f"{self_corpus.ids[0]}.wav"
    assert main(["convert", str(tmp_path / "m.json"), str(wav), "--output", str(tmp_path / "o.wav")]) == 0
    capsys.readouterr()
    assert main(["evaluate", str(tmp_path / "o.wav"), str(wav)]) == 0
    snr = float(capsys.readouterr().out.split("snr_db ")[1].split()[0])
    assert snr >= 15.0


def test_evaluate_identical(workdir, capsys):
    f = next((workdir / "src").glob("*.wav"))
    assert main(["evaluate", str(f), str(f), "--csv"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert "snr_db 100.0000" in out and "avg_sd 0.0000" in out
    assert out[-2] == "snr_db,avg_sd,frames_compared,flagged_frames"


def test_evaluate_pipeline_pair_finite(workdir, trained, tmp_path, capsys):
    wav = sorted((workdir / "src").glob("*.wav"))[0]
    tgt = workdir / "tgt" / wav.name
    main(["convert", str(trained), str(wav), "--output", str(tmp_path / "c.wav")])
    capsys.readouterr()
    assert main(["evaluate", str(tmp_path / "c.wav"), str(tgt)]) == 0
    vals = dict(line.split() for line in capsys.readouterr().out.splitlines())
    assert np.isfinite(float(vals["snr_db"]))
    assert float(vals["avg_sd"]) > 0 and int(vals["frames_compared"]) > 0


def test_evaluate_missing_file(tmp_path):
    assert main(["evaluate", str(tmp_path / "a.wav"), str(tmp_path / "b.wav")]) == 2


def test_experiment_single_cell(tmp_path, corpus14):
    write_corpus(tmp_path, corpus14.subset(corpus14.ids[:3]))
    cfg = write_config(tmp_path / "x.ini", "[experiment]\ntraining_pairs = 1\ngaussians = 1\n"
                       "n_eval = 2\ntiming_repeats = 1\n[output]\ncsv = grid.csv\n")
    assert main(["experiment", "--config", str(cfg)]) == 0
    first = evaluation.ExperimentGrid.from_csv((tmp_path / "grid.csv").read_text())
    assert len(first.rows) == 1
    assert main(["experiment", "--config", str(cfg), "--output", str(tmp_path / "again.csv")]) == 0
    second = evaluation.ExperimentGrid.from_csv((tmp_path / "again.csv").read_text())
    assert (first.rows[0].snr_db, first.rows[0].avg_sd) == (second.rows[0].snr_db, second.rows[0].avg_sd)


def test_config_parsing(tmp_path):
    cfg = write_config(tmp_path / "c.ini", "[pitch]\nfmin = 60\n[run]\nseed = 9\nlog_level = info\n"
                       "[output]\nmodel = out/m.json\n")
    c = load_config(cfg)
    assert c.source_dir == tmp_path / "src"
    assert c.model_path == tmp_path / "out" / "m.json"
    assert c.conversion.order == 12 and c.conversion.seed == 9
    assert c.conversion.pitch.fmin == 60.0
    assert c.log_level == "INFO"


@pytest.mark.parametrize("extra", ["[model]\nbogus = 1\n", "[nonsense]\na = 1\n",
                                   "[em]\nmax_iters = many\n", "[model]\nexcitation = copy\n"])
def test_bad_config_rejected(tmp_path, extra):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[corpus]\nsource_dir = src\n" + extra)
    with pytest.raises(ConfigError):
        load_config(cfg)
    assert main(["train", "--config", str(cfg), "--output", str(tmp_path / "m.json")]) == 1


def test_usage_errors():
    assert main([]) == 1
    assert main(["train"]) == 1
    assert main(["--help"]) == 0


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "vcmorph", "evaluate", str(tmp_path / "x.wav"),
                        str(tmp_path / "y.wav")], capture_output=True, text=True)
    assert r.returncode == 2
    assert "x.wav" in r.stderr and r.stdout == ""
