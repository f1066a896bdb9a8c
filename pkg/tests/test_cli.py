from __future__ import annotations

import hashlib
import json

import pytest

from mlet.cli import build_config, build_parser, main
from mlet.synthdata import read_dataset


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


SMALL = ["--fields", "60,40", "--dense-dim", "2", "--n-train", "1500", "--n-val", "100",
         "--n-test", "600"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "d.bin"
    assert main(["gen-data", "--out", str(data), *SMALL]) == 0
    out = root / "run"
    assert main(["train", "--data", str(data), "--mode", "both", "--d", "4", "--k", "8",
                 "--seeds", "1,2", "--batch-size", "64", "--out", str(out)]) == 0
    return data, out


def test_gen_data_default_spec(tmp_path, capsys):
    code, out, _ = run(capsys, "gen-data", "--out", tmp_path / "full.bin")
    assert code == 0
    info = json.loads(out)
    assert info["records"] == 240_000 and info["uniform"] is False
    assert len(read_dataset(tmp_path / "full.bin")) == 240_000


def test_gen_data_repeatable_and_uniform_flag(tmp_path, capsys):
    hashes = []
    for name in ("a.bin", "b.bin"):
        run(capsys, "gen-data", "--out", tmp_path / name, "--seed", "5", *SMALL)
        hashes.append(hashlib.sha256((tmp_path / name).read_bytes()).hexdigest())
    assert hashes[0] == hashes[1]
    code, out, _ = run(capsys, "gen-data", "--out", tmp_path / "u.bin", "--zipf", "0", *SMALL)
    assert json.loads(out)["uniform"] is True
    assert read_dataset(tmp_path / "u.bin").meta["uniform"] is True


def test_gen_data_truth_sidecar(tmp_path, capsys):
    run(capsys, "gen-data", "--out", tmp_path / "t.bin", "--truth", *SMALL)
    assert (tmp_path / "t.bin.truth.npz").exists()


def test_verify_theory_default(tmp_path, capsys):
    code, out, _ = run(capsys, "verify-theory", "--out", tmp_path / "v.json")
    assert code == 0
    report = json.loads(out)
    assert report["passed"] and report["checks"][0]["max_residual"] <= 1e-8
    assert json.loads((tmp_path / "v.json").read_text()) == report


def test_verify_theory_census(capsys):
    code, out, _ = run(capsys, "verify-theory", "--census", "100", "16", "8")
    assert code == 0 and "nonzero=864 zero=736" in out


def test_verify_theory_direction_grid(capsys):
    code, out, _ = run(capsys, "verify-theory", "--table1")
    assert code == 0
    assert "[k=1]\n* + + + +\n0 0 0 0 0" in out
    assert "[k=2]\n* * + + +\n* * + + +" in out
    assert "[k=4]\n* * * * +\n* * * * +" in out


def test_verify_theory_cap(capsys):
    code, _, err = run(capsys, "verify-theory", "--n-range", "5,5000")
    assert code == 2 and "4096" in err


def parse_train(*argv):
    return build_config(build_parser().parse_args(["train", *argv]))


def test_train_flag_mapping(tmp_path):
    cfg = parse_train("--mode", "single", "--d", "8")
    assert cfg.modes == ["single"] and cfg.d_list == [8]
    cfg = parse_train("--mode", "mlet", "--d", "8", "--k", "8,16,32,64")
    assert cfg.modes == ["mlet"] and cfg.k_list == [8, 16, 32, 64]
    cfg = parse_train("--mode", "mlet", "--init-std", "0.01,0.1,0.25,0.5")
    assert cfg.init_std == [0.01, 0.1, 0.25, 0.5]
    cfg = parse_train("--optimizer", "adagrad")
    assert cfg.eta == 0.02 and cfg.init_std == [0.5]
    cfg = parse_train()
    assert cfg.eta == 0.2 and cfg.init_std == [0.25] and cfg.seeds == [1, 2, 3]


def test_train_config_file_with_override(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"d_list": [4, 8], "eta": 0.1, "seeds": [7]}))
    cfg = parse_train("--config", str(path), "--eta", "0.3")
    assert cfg.d_list == [4, 8] and cfg.seeds == [7] and cfg.eta == 0.3
    path.write_text(json.dumps({"unknown": 1}))
    with pytest.raises(ValueError):
        parse_train("--config", str(path))


def test_train_outputs(trained):
    _, out = trained
    assert (out / "config.json").exists()
    assert len(list((out / "runs").glob("*.json"))) == 2
    assert len(list((out / "checkpoints").glob("*.bin"))) == 4


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_surfaced(tmp_path, capsys, trained):
    data, _ = trained
    code, _, err = run(capsys, "train", "--data", data, "--mode", "single", "--d", "4",
                       "--seeds", "1", "--eta", "1e200", "--out", tmp_path / "x")
    assert code == 3
    assert "diverged" in err and "max_abs_param" in err


def test_report(trained, tmp_path, capsys):
    _, out = trained
    code, text, _ = run(capsys, "report", out, "--out", tmp_path / "rep")
    assert code == 0 and "iso-quality" in text
    assert (tmp_path / "rep" / "report.csv").exists()
    assert (tmp_path / "rep" / "quality_vs_size.png").exists()
    code, _, _ = run(capsys, "report", out, "--out", tmp_path / "rep2", "--no-figures")
    assert not (tmp_path / "rep2" / "quality_vs_size.png").exists()


def test_compress_int8(trained, tmp_path, capsys):
    _, out = trained
    dest = tmp_path / "q.bin"
    code, text, _ = run(capsys, "compress", out / "checkpoints" / "single-d4-s1.bin", "--int8",
                        "--out", dest)
    assert code == 0
    info = json.loads(text)
    assert info["bytes_after"] == dest.stat().st_size and info["ratio"] > 3
    assert json.loads(dest.with_suffix(".json").read_text()) == info


def test_compress_full_rank_svd_is_noop(trained, tmp_path, capsys):
    _, out = trained
    code, text, _ = run(capsys, "compress", out / "checkpoints" / "mlet-d4-k8-std0.25-s2.bin",
                        "--svd-rank", "4", "--out", tmp_path / "s.bin")
    info = json.loads(text)
    for key in ("test", "most_frequent", "least_frequent"):
        for metric in ("auc", "pr_auc", "logloss"):
            assert abs(info["after"][key][metric] - info["before"][key][metric]) <= 1e-9


def test_compress_flag_validation(trained, tmp_path, capsys):
    _, out = trained
    ckpt = out / "checkpoints" / "single-d4-s1.bin"
    assert run(capsys, "compress", ckpt, "--hash", "20")[0] == 2
    assert run(capsys, "compress", ckpt, "--svd-rank", "9")[0] == 2
    assert run(capsys, "compress", ckpt)[0] == 2
    assert run(capsys, "compress", tmp_path / "missing.bin", "--int8")[0] == 2


def test_compress_hash_with_retrain(trained, tmp_path, capsys):
    _, out = trained
    code, text, _ = run(capsys, "compress", out / "checkpoints" / "single-d4-s1.bin",
                        "--hash", "20", "--retrain", "--int8", "--out", tmp_path / "h.bin")
    assert code == 0
    info = json.loads(text)
    assert info["compression"]["hash"] == 20
    assert info["bytes_after"] < info["bytes_before"] / 3
