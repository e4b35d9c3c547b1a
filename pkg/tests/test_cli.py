import csv
import io
import json

import pytest

from binfer import formats
from binfer.cli import main
from binfer.fold import Direction


def run(capsys, *argv):
    rc = main([str(a) for a in argv])
    out = capsys.readouterr()
    return rc, out.out, out.err


@pytest.fixture
def toy_files(tmp_path, capsys):
    prefix = tmp_path / "toy"
    model = formats.reference_model_path("toy")
    assert run(capsys, "synth", "--model", model, "--seed", 3, "--count", 40,
               "--prefix", prefix)[0] == 0
    return prefix


def infer_args(prefix, model=None):
    return ["infer", "--model", model or f"{prefix}.model.json", "--weights", f"{prefix}.bnnw",
            "--thresholds", f"{prefix}.bnnt", "--images", f"{prefix}.images.npy"]


class TestFold:
    def test_fold_matches_synth(self, toy_files, tmp_path, capsys):
        out = tmp_path / "t.bnnt"
        rc, text, _ = run(capsys, "fold", "--model", f"{toy_files}.model.json", "-o", out)
        assert rc == 0 and "3 threshold layers" in text
        assert formats.read_thresholds(out) == formats.read_thresholds(f"{toy_files}.bnnt")

    def test_zero_gamma_persisted(self, tmp_path, capsys):
        doc = {"input": [2, 2, 1], "layers": [
            {"name": "c", "kind": "conv_first", "filters": 2,
             "bn": {"mu": [0, 0], "sigma2": [1, 1], "gamma": [0, 0], "beta": [1, -1]}},
            {"name": "o", "kind": "fc_output", "outputs": 2}]}
        (tmp_path / "m.json").write_text(json.dumps(doc))
        rc, _, _ = run(capsys, "fold", "--model", tmp_path / "m.json", "-o", tmp_path / "t")
        assert rc == 0
        (t,) = formats.read_thresholds(tmp_path / "t")
        assert t.direction.tolist() == [Direction.CONST_ONE, Direction.CONST_ZERO]

    def test_empty_layer(self, tmp_path, capsys):
        doc = {"input": [2, 2, 1], "layers": [{"kind": "conv_first", "filters": 0},
                                              {"kind": "fc_output", "outputs": 2}]}
        (tmp_path / "m.json").write_text(json.dumps(doc))
        rc, _, err = run(capsys, "fold", "--model", tmp_path / "m.json", "-o", tmp_path / "t")
        assert rc == 2 and "empty layer" in err

    def test_missing_bn(self, tmp_path, capsys):
        rc, _, err = run(capsys, "fold", "--model", formats.reference_model_path("toy"),
                         "-o", tmp_path / "t")
        assert rc == 2 and "conv1" in err

    def test_separate_bn_file(self, toy_files, tmp_path, capsys):
        spec, bn = formats.load_model(f"{toy_files}.model.json")
        formats.save_bn(tmp_path / "bn.json", spec, bn)
        rc, _, _ = run(capsys, "fold", "--model", formats.reference_model_path("toy"),
                       "--bn", tmp_path / "bn.json", "-o", tmp_path / "t")
        assert rc == 0
        assert formats.read_thresholds(tmp_path / "t") == \
            formats.read_thresholds(f"{toy_files}.bnnt")


class TestInfer:
    def test_rows_and_mode_equality(self, toy_files, tmp_path, capsys):
        seq, st = tmp_path / "seq.csv", tmp_path / "st.csv"
        assert run(capsys, *infer_args(toy_files), "--batch", 7, "-o", seq)[0] == 0
        assert run(capsys, *infer_args(toy_files), "--mode", "streaming", "-o", st)[0] == 0
        rows = list(csv.DictReader(io.StringIO(seq.read_text())))
        assert len(rows) == 40
        assert list(rows[0]) == ["index", "label", "prediction"] + [f"score{k}" for k in range(10)]
        assert seq.read_bytes() == st.read_bytes()

    def test_count_and_stdout(self, toy_files, capsys):
        rc, out, _ = run(capsys, *infer_args(toy_files), "--count", 5)
        assert rc == 0 and len(out.strip().splitlines()) == 6

    def test_missing_thresholds_names_layer(self, toy_files, tmp_path, capsys):
        short = formats.read_thresholds(f"{toy_files}.bnnt")[:2]
        formats.write_thresholds(tmp_path / "short.bnnt", short)
        args = infer_args(toy_files)
        args[args.index("--thresholds") + 1] = str(tmp_path / "short.bnnt")
        rc, _, err = run(capsys, *args)
        assert rc == 2 and "layer 2 (fc1)" in err and "missing thresholds" in err

    def test_weights_for_other_network(self, toy_files, capsys):
        rc, _, err = run(capsys, *infer_args(toy_files, formats.reference_model_path()))
        assert rc == 2 and "weight file" in err

    def test_cifar_images(self, tmp_path, capsys):
        prefix = tmp_path / "ref"
        assert run(capsys, "synth", "--count", 16, "--prefix", prefix)[0] == 0
        rc, out, _ = run(capsys, "infer", "--model", f"{prefix}.model.json",
                         "--weights", f"{prefix}.bnnw", "--thresholds", f"{prefix}.bnnt",
                         "--images", f"{prefix}.images.bin", "--batch", 16)
        rows = list(csv.DictReader(io.StringIO(out)))
        assert rc == 0 and len(rows) == 16
        assert all(r["label"] != "" for r in rows)


class TestEstimate:
    def test_modeled(self, capsys, tmp_path):
        rc, out, _ = run(capsys, "estimate", "--json", tmp_path / "r.json")
        assert rc == 0 and "throughput 7324 FPS" in out
        d = json.loads((tmp_path / "r.json").read_text())
        assert [l["cycle_est"] for l in d["layers"]] == [4096] + [12288] * 5
        assert all(l["ii"] == 1 for l in d["layers"])

    def test_measured(self, capsys):
        rc, out, _ = run(capsys, "estimate", "--measured", "5233,12386,12296,13329,12386,14473")
        assert rc == 0 and "throughput 6218 FPS" in out

    def test_zero_freq(self, capsys):
        rc, _, err = run(capsys, "estimate", "--freq", 0)
        assert rc == 2 and "freq" in err

    def test_ii_override(self, capsys):
        rc, out, _ = run(capsys, "estimate", "--ii", 2)
        assert rc == 0 and "throughput 3662 FPS" in out


class TestPlan:
    def test_deterministic(self, capsys, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        budget = "luts=433200,brams=2060,dsps=2800"
        assert run(capsys, "plan", "--budget", budget, "-o", a)[0] == 0
        assert run(capsys, "plan", "--budget", budget, "-o", b)[0] == 0
        assert a.read_text() == b.read_text()

    def test_calibrated(self, capsys, tmp_path):
        rc, out, _ = run(capsys, "plan", "--budget", "luts=433200,brams=2060,dsps=2800",
                         "--calibrate-luts", 342126, "--json", tmp_path / "r.json")
        assert rc == 0 and "calibrated" in out
        d = json.loads((tmp_path / "r.json").read_text())
        assert max(l["cycle_est"] for l in d["layers"]) == 12288
        assert sum(l["uf"] * l["p"] for l in d["layers"]) <= 50016

    def test_infeasible(self, capsys):
        rc, _, err = run(capsys, "plan", "--budget", "luts=10")
        assert rc == 2 and "infeasible" in err

    def test_bad_budget(self, capsys):
        rc, _, err = run(capsys, "plan", "--budget", "lutz=5")
        assert rc == 2 and "budget" in err


class TestVerify:
    def test_pass(self, capsys):
        rc, out, _ = run(capsys, "verify", "--seed", 42, "--cases", 100)
        assert rc == 0 and "100/100" in out

    def test_fixed_model(self, capsys):
        rc, out, _ = run(capsys, "verify", "--model", formats.reference_model_path("toy"),
                         "--cases", 5)
        assert rc == 0

    def test_injected_fault(self, capsys, tmp_path):
        rc, _, err = run(capsys, "verify", "--seed", 42, "--cases", 10, "--inject-fault",
                         "--dump", tmp_path / "repro")
        assert rc == 1 and "FAIL" in err and '"seed": 42' in err
        assert (tmp_path / "repro" / "model.json").exists()
        assert (tmp_path / "repro" / "reference.npz").exists()

    def test_zero_cases(self, capsys, caplog):
        rc, out, _ = run(capsys, "verify", "--cases", 0)
        assert rc == 0 and "0/0" in out
        assert "zero cases" in caplog.text


def test_bench(capsys):
    rc, out, _ = run(capsys, "bench", "--model", formats.reference_model_path("toy"),
                     "--images", 2, "--repeat", 1)
    assert rc == 0 and "images/s" in out


def test_unknown_backend(capsys):
    rc, _, err = run(capsys, "bench", "--backend", "fortran")
    assert rc == 2


def test_npy_image_count_too_large(toy_files, capsys):
    rc, _, err = run(capsys, *infer_args(toy_files), "--count", 41)
    assert rc == 2


def test_reference_images_need_cifar_dims(toy_files, tmp_path, capsys):
    (tmp_path / "x.bin").write_bytes(bytes(3073))
    args = infer_args(toy_files)
    args[args.index("--images") + 1] = str(tmp_path / "x.bin")
    rc, _, err = run(capsys, *args)
    assert rc == 2 and "32x32x3" in err
