import json
import subprocess
import sys

import pytest

from lear.cli import main

CONFIG = "d_model = 8\nn_layers = 1\nn_heads = 2\nmax_seq_len = 32\nepochs = 2\nbatch_size = 4\nseed = 3\n"


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out-dir", str(d), "--categories", "2", "--sentences", "8",
                 "--dev-sentences", "3", "--test-sentences", "3"]) == 0
    (d / "c.cfg").write_text(CONFIG)
    return d


def train_args(d, out):
    return ["train", "--config", str(d / "c.cfg"), "--train", str(d / "train.jsonl"), "--dev",
            str(d / "dev.jsonl"), "--labels", str(d / "labels.json"), "--out", str(out)]


@pytest.fixture(scope="module")
def trained(workdir):
    out = workdir / "m.bin"
    assert main(train_args(workdir, out) + ["--log", str(workdir / "steps.tsv")]) == 0
    return out


def test_synth_writes_splits(workdir):
    assert len((workdir / "train.jsonl").read_text().splitlines()) == 8
    assert len(json.loads((workdir / "labels.json").read_text())) == 2


def test_train_writes_checkpoint_metrics_and_log(workdir, trained):
    assert trained.read_bytes()[:4] == b"LEAR"
    csv = (workdir / "m.bin.metrics.csv").read_text().splitlines()
    assert csv[0] == "epoch,precision,recall,f1,loss" and len(csv) == 3
    steps = (workdir / "steps.tsv").read_text().splitlines()
    assert steps[0].split("\t") == ["step", "lr", "L_s", "L_e", "L_match", "total"] and len(steps) == 5


def test_train_is_byte_deterministic(workdir, trained):
    again = workdir / "again.bin"
    assert main(train_args(workdir, again)) == 0
    assert again.read_bytes() == trained.read_bytes()
    assert (workdir / "again.bin.metrics.csv").read_bytes() == (workdir / "m.bin.metrics.csv").read_bytes()


def test_predict_and_eval(workdir, trained, capsys):
    pred = workdir / "pred.jsonl"
    assert main(["predict", "--model", str(trained), "--input", str(workdir / "test.jsonl"), "--decode",
                 "heuristic", "--dump-scores", "--out", str(pred)]) == 0
    rows = [json.loads(line) for line in pred.read_text().splitlines()]
    assert len(rows) == 3 and {"text_id", "spans", "start_scores", "end_scores"} <= set(rows[0])
    again = workdir / "pred2.jsonl"
    main(["predict", "--model", str(trained), "--input", str(workdir / "test.jsonl"), "--decode", "heuristic",
          "--dump-scores", "--out", str(again)])
    assert again.read_bytes() == pred.read_bytes()
    capsys.readouterr()
    assert main(["eval", "--gold", str(workdir / "test.jsonl"), "--pred", str(pred), "--json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report) >= {"precision", "recall", "f1", "per_category"}
    assert main(["eval", "--model", str(trained), "--data", str(workdir / "test.jsonl")]) == 0
    assert "micro" in capsys.readouterr().out


def test_eval_gold_against_itself_is_perfect(workdir, capsys):
    gold = str(workdir / "dev.jsonl")
    assert main(["eval", "--gold", gold, "--pred", gold, "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["f1"] == 1.0


def test_inspect_attention(workdir, trained):
    out = workdir / "att.tsv"
    assert main(["inspect-attention", "--model", str(trained), "--input", str(workdir / "test.jsonl"),
                 "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "token\tcategory\tannotation_token\tweight"
    assert len(lines) > 1 and all(len(line.split("\t")) == 4 for line in lines)


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--seed", "7"]) == 0
    out = capsys.readouterr().out
    assert "overall" in out and "FAIL" not in out


def test_bench_command(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--categories", "2,3", "--n", "8", "--m", "2", "--d-model", "8", "--layers", "1",
                 "--texts", "1", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "paradigm,num_categories,n,m,phase,wall_seconds,op_count"
    assert "relative" in capsys.readouterr().out


def test_exit_codes(workdir, tmp_path, capsys):
    assert main(["eval", "--gold", str(workdir / "dev.jsonl")]) == 1
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{oops\n")
    assert main(["eval", "--gold", str(bad), "--pred", str(bad)]) == 1
    assert main(["predict", "--model", str(tmp_path / "missing.bin"), "--input", str(bad)]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["gradcheck", "--bogus"])
    assert exc.value.code == 1
    assert "usage" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exits_two(workdir, tmp_path):
    cfg = tmp_path / "hot.cfg"
    cfg.write_text(CONFIG + "lr_task = 1e308\nlr_encoder = 1e308\n")
    args = train_args(workdir, tmp_path / "x.bin")
    args[args.index("--config") + 1] = str(cfg)
    assert main(args) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "lear", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "inspect-attention" in proc.stdout
