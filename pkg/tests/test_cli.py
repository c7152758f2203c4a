import json
from pathlib import Path

import numpy as np
import pytest

from dhrn import cli, nn
from dhrn.signals import Manifest, Split


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def results(out):
    """Parse ``RESULT key k=v ...`` lines into a list of (key, dict)."""
    parsed = []
    for line in out.splitlines():
        if line.startswith("RESULT "):
            key, *fields = line.split()[1:]
            parsed.append((key, dict(f.split("=", 1) for f in fields)))
    return parsed


def tree_bytes(root: Path):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def small_synth(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert cli.main(["synth", "--out", str(d), "--per-class", "5", "--seed", "1", "--len", "1024"]) == 0
    return d


class TestSynth:
    def test_counts(self, capsys, tmp_path):
        code, out, _ = run(capsys, "synth", "--out", tmp_path / "d", "--per-class", 5, "--seed", 1, "--len", 512)
        assert code == 0
        m = Manifest.load_file(tmp_path / "d" / "manifest.json")
        assert len(m) == 20
        assert len(list((tmp_path / "d" / "signals").iterdir())) == 20
        key, fields = results(out)[0]
        assert key == "synth" and fields["signals"] == "20"
        assert {fields[c] for c in ("ChokedFlow", "ConstantCavitation", "IncipientCavitation", "NonCavitation")} == {"5"}

    def test_missing_out(self, capsys):
        code, _, err = run(capsys, "synth", "--per-class", 5)
        assert code == 2 and "usage" in err

    def test_no_command(self, capsys):
        assert run(capsys)[0] == 2

    def test_idempotent(self, capsys, tmp_path):
        args = ("synth", "--per-class", 2, "--seed", 4, "--len", 512, "--out")
        run(capsys, *args, tmp_path / "a")
        run(capsys, *args, tmp_path / "b")
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_invalid_count(self, capsys, tmp_path):
        assert run(capsys, "synth", "--out", tmp_path, "--per-class", 0)[0] == 2


class TestAugment:
    def test_whole_signal_window(self, capsys, small_synth, tmp_path):
        code, out, _ = run(capsys, "augment", "--manifest", small_synth / "manifest.json",
                           "--wsize", 1024, "--out", tmp_path / "ds", "--seed", 0)
        assert code == 0
        meta = json.loads((tmp_path / "ds" / "meta.json").read_text())
        assert sum(meta["counts"].values()) == 20
        assert meta["counts"] == {"train": 12, "val": 4, "test": 4}
        assert meta["P"] == 1024 and meta["spectrum_len"] == 513
        m = Manifest.load_file(tmp_path / "ds" / "manifest.json")
        assert m.is_split
        assert results(out)[0][1]["train"] == "12"

    def test_short_signals_skipped(self, capsys, caplog, tmp_path):
        run(capsys, "synth", "--out", tmp_path / "d", "--per-class", 3, "--len", 512)
        code, _, err = run(capsys, "augment", "--manifest", tmp_path / "d" / "manifest.json",
                           "--wsize", 1024, "--out", tmp_path / "ds")
        assert code == 2 and "no windows" in err
        assert sum("skipping" in r.message for r in caplog.records) == 12

    def test_partially_short(self, capsys, caplog, tmp_path, small_synth):
        m = json.loads((small_synth / "manifest.json").read_text())
        for e in m["entries"]:
            e["path"] = str(small_synth / e["path"])
        # make one recording too short for the window
        short = tmp_path / "short.f32"
        short.write_bytes(np.zeros(10, "<f4").tobytes())
        m["entries"][0]["path"] = str(short)
        (tmp_path / "manifest.json").write_text(json.dumps(m))
        code, out, _ = run(capsys, "augment", "--manifest", tmp_path / "manifest.json", "--wsize", 512,
                           "--out", tmp_path / "ds")
        assert code == 0
        assert [r.levelname for r in caplog.records if "short.f32" in r.message] == ["WARNING"]
        counts = results(out)[0][1]
        assert sum(int(counts[s]) for s in ("train", "val", "test")) == 19 * 2

    def test_missing_manifest(self, capsys, tmp_path):
        code, _, _ = run(capsys, "augment", "--manifest", tmp_path / "nope.json", "--wsize", 8, "--out", tmp_path)
        assert code == 3

    def test_unknown_config_key(self, capsys, tmp_path, small_synth):
        (tmp_path / "c.json").write_text('{"window": {"w_size": 8, "hop": 2}}')
        code, _, err = run(capsys, "augment", "--manifest", small_synth / "manifest.json",
                           "--config", tmp_path / "c.json", "--out", tmp_path / "ds")
        assert code == 2 and "hop" in err

    def test_config_and_flag_precedence(self, capsys, tmp_path, small_synth):
        (tmp_path / "c.json").write_text('{"window": {"w_size": 256}, "split": {"seed": 3}}')
        run(capsys, "augment", "--manifest", small_synth / "manifest.json", "--config", tmp_path / "c.json",
            "--wsize", 512, "--out", tmp_path / "ds")
        assert json.loads((tmp_path / "ds" / "meta.json").read_text())["w_size"] == 512


@pytest.fixture(scope="module")
def trained(tmp_path_factory, small_synth):
    d = tmp_path_factory.mktemp("run")
    assert cli.main(["augment", "--manifest", str(small_synth / "manifest.json"), "--wsize", "256",
                     "--out", str(d / "ds")]) == 0
    assert cli.main(["train", "--data", str(d / "ds"), "--out", str(d / "model"), "--epochs", "1",
                     "--width", "0.0625", "--patience", "1"]) == 0
    return d


class TestTrainEval:
    def test_train_outputs(self, trained):
        names = {p.name for p in (trained / "model").iterdir()}
        assert {"model.dhrn", "history.csv", "history.json", "test_report.txt", "test_report.json",
                "run_config.json", "timing.json"} <= names
        report = json.loads((trained / "model" / "test_report.json").read_text())
        assert [r["task"] for r in report] == ["detection", "intensity"]

    def test_eval(self, capsys, trained, tmp_path):
        code, out, _ = run(capsys, "eval", "--checkpoint", trained / "model" / "model.dhrn",
                           "--data", trained / "ds", "--split", "test", "--out", tmp_path / "r.json")
        assert code == 0
        key, fields = results(out)[-1]
        assert key == "eval" and 0 <= float(fields["acc_detection"]) <= 1
        # eval of the final model reproduces the report written at the end of training
        assert (tmp_path / "r.json").read_bytes() == (trained / "model" / "test_report.json").read_bytes()

    def test_eval_width_mismatch(self, capsys, trained):
        code, _, _ = run(capsys, "eval", "--checkpoint", trained / "model" / "model.dhrn",
                         "--data", trained / "ds", "--width", "1.0")
        assert code == 4

    def test_eval_corrupt_checkpoint(self, capsys, trained, tmp_path):
        data = (trained / "model" / "model.dhrn").read_bytes()
        (tmp_path / "bad.dhrn").write_bytes(data[:100])
        code, _, _ = run(capsys, "eval", "--checkpoint", tmp_path / "bad.dhrn", "--data", trained / "ds")
        assert code == 4

    def test_eval_wrong_data_length(self, capsys, trained, small_synth, tmp_path):
        run(capsys, "augment", "--manifest", small_synth / "manifest.json", "--wsize", 128, "--out", tmp_path / "ds")
        code, _, _ = run(capsys, "eval", "--checkpoint", trained / "model" / "model.dhrn", "--data", tmp_path / "ds")
        assert code == 4

    def test_train_idempotent(self, capsys, trained, tmp_path):
        code, _, _ = run(capsys, "train", "--data", trained / "ds", "--out", tmp_path / "again", "--epochs", 1,
                         "--width", 0.0625, "--patience", 1)
        assert code == 0
        a, b = tree_bytes(trained / "model"), tree_bytes(tmp_path / "again")
        a.pop("timing.json"), b.pop("timing.json")
        assert a == b


class TestDownsample:
    def test_factors(self, capsys, small_synth, tmp_path):
        code, out, _ = run(capsys, "downsample", "--manifest", small_synth / "manifest.json",
                           "--factors", "2,4,6,8,32", "--out", tmp_path)
        assert code == 0
        rates = {int(f["factor"]): int(f["rate_hz"]) for _, f in results(out)}
        assert rates == {2: 24000, 4: 12000, 6: 8000, 8: 6000, 32: 1500}
        m = Manifest.load_file(tmp_path / "x32" / "manifest.json")
        assert len(m) == 20 and len(m.load(m.entries[0])) == 32
        original = Manifest.load_file(small_synth / "manifest.json")
        x32 = m.load(m.entries[3]).samples
        assert np.array_equal(x32, original.load(original.entries[3]).samples[::32])

    def test_bad_factors(self, capsys, small_synth, tmp_path):
        code, _, _ = run(capsys, "downsample", "--manifest", small_synth / "manifest.json",
                         "--factors", "0,2", "--out", tmp_path)
        assert code == 2

    def test_keeps_splits(self, capsys, trained, tmp_path):
        run(capsys, "downsample", "--manifest", trained / "ds" / "manifest.json", "--factors", "2", "--out", tmp_path)
        m = Manifest.load_file(tmp_path / "x2" / "manifest.json")
        orig = Manifest.load_file(trained / "ds" / "manifest.json")
        assert [e.split for e in m.entries] == [e.split for e in orig.entries]
        assert Split.TEST in {e.split for e in m.entries}


class TestGradcheck:
    def test_passes(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--seed", 2, "--n-seeds", 2)
        assert code == 0
        assert {f["status"] for _, f in results(out)} == {"PASS"}
        assert len(results(out)) == 8

    def test_sign_flipped_conv_backward(self, capsys, monkeypatch):
        real = nn.conv1d_backward

        def flipped(cache, p, grad_out):
            gx, gw, gb = real(cache, p, grad_out)
            return -gx, -gw, (None if gb is None else -gb)

        monkeypatch.setattr(nn, "conv1d_backward", flipped)
        code, out, _ = run(capsys, "gradcheck", "--n-seeds", 2)
        assert code == 5
        status = {f["op"]: f["status"] for _, f in results(out)}
        assert status["conv1d"] == "FAIL" and status["tiny_model"] == "FAIL"
        assert status["linear"] == "PASS"
