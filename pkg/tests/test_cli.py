import json
import subprocess
import sys

import numpy as np
import pytest

from adlmvdr.cli import main, read_tensor, resolve_config
from adlmvdr.errors import ConfigurationError
from adlmvdr.gru import read_params
from adlmvdr.mvdr import read_weights
from adlmvdr.signal_core import read_wav


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--out", str(out), "--num-scenes", "2", "--duration", "1.0", "--speakers", "2",
                 "--seed", "3"]) == 0
    return out


def _json(path):
    return json.loads(path.read_text())


class TestSimulate:
    def test_layout(self, sim):
        manifest = _json(sim / "manifest.json")
        assert manifest["command"] == "simulate"
        assert [s["id"] for s in manifest["scenes"]] == ["scene_0000", "scene_0001"]
        assert all(s["speaker_count"] == 2 for s in manifest["scenes"])
        for sid in ("scene_0000", "scene_0001"):
            mix = read_wav(sim / sid / "mixture.wav")
            assert mix.num_channels == 15 and mix.num_samples == 16000
            parts = sum(read_wav(sim / sid / f"{n}.wav").samples.astype(np.float64)
                        for n in ("target", "interference", "noise"))
            np.testing.assert_allclose(parts, mix.samples, atol=1e-5)

    def test_workers_do_not_change_outputs(self, sim, tmp_path):
        out = tmp_path / "par"
        assert main(["simulate", "--out", str(out), "--num-scenes", "2", "--duration", "1.0", "--speakers", "2",
                     "--seed", "3", "--workers", "2"]) == 0
        a, b = _json(sim / "manifest.json"), _json(out / "manifest.json")
        assert a["outputs"] == b["outputs"] and a["scenes"] == b["scenes"]

    def test_bad_encoding(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path), "--encoding", "mp3"]) == 2


class TestFeatures:
    def test_binary_tensors(self, sim, tmp_path):
        assert main(["features", "--scene", str(sim / "scene_0000"), "--out", str(tmp_path)]) == 0
        assert read_tensor(tmp_path / "lps.bin").shape == (64, 257)
        assert read_tensor(tmp_path / "ipd.bin").shape == (5, 64, 257)
        df = read_tensor(tmp_path / "df.bin")
        assert df.shape == (64, 257) and np.all(np.abs(df) <= 5.0 + 1e-9)

    def test_csv(self, sim, tmp_path):
        assert main(["features", "--scene", str(sim / "scene_0000"), "--out", str(tmp_path), "--format", "csv",
                     "--pairs", "0-14"]) == 0
        assert sorted(p.name for p in tmp_path.glob("*.csv")) == ["df.csv", "ipd_p0.csv", "lps.csv"]

    def test_missing_scene(self, tmp_path):
        assert main(["features", "--scene", str(tmp_path / "nope"), "--out", str(tmp_path)]) == 4


class TestBeamform:
    def test_chunk_improves(self, sim, tmp_path):
        assert main(["beamform", "--scene", str(sim / "scene_0000"), "--out", str(tmp_path), "--channels", "3ch"]) == 0
        metrics = _json(tmp_path / "metrics.json")
        assert metrics["si_snr_improvement_db"] > 0
        assert read_weights(tmp_path / "weights.bin").weights.shape == (257, 3)
        assert read_wav(tmp_path / "enhanced.wav").num_samples == 16000

    def test_mf_single_frame_reproduces_input(self, sim, tmp_path):
        assert main(["beamform", "--scene", str(sim / "scene_0001"), "--out", str(tmp_path), "--mode", "mf-mvdr",
                     "--channels", "3ch", "--frames", "1,0"]) == 0
        assert abs(_json(tmp_path / "metrics.json")["si_snr_improvement_db"]) < 1e-3

    def test_adl_random_init_runs(self, sim, tmp_path):
        assert main(["beamform", "--scene", str(sim / "scene_0000"), "--out", str(tmp_path), "--mode", "adl-mvdr",
                     "--channels", "3ch", "--v-hidden", "4", "--inv-hidden", "4"]) == 0
        assert read_weights(tmp_path / "weights.bin").weights.ndim == 3

    @pytest.mark.parametrize("args", [["--mode", "nope"], ["--channels", "0,0"], ["--channels", "0,99"],
                                      ["--estimator", "magic"], ["--mode", "mvdr-recursive", "--solution", "doa"]])
    def test_configuration_errors(self, sim, tmp_path, args):
        assert main(["beamform", "--scene", str(sim / "scene_0000"), "--out", str(tmp_path)] + args) == 2

    def test_config_file_and_override(self, sim, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"channels": "3ch", "mode": "mvdr-recursive"}))
        cfg = resolve_config("beamform", {"config": str(cfg_path), "mode": "mvdr-chunk", "scene": "x"})
        assert cfg["channels"] == "3ch" and cfg["mode"] == "mvdr-chunk"
        cfg_path.write_text(json.dumps({"chanels": "3ch"}))
        with pytest.raises(ConfigurationError):
            resolve_config("beamform", {"config": str(cfg_path), "scene": "x"})
        assert main(["beamform", "--scene", str(sim / "scene_0000"), "--config", str(cfg_path)]) == 2


class TestTrainGru:
    def test_outputs(self, tmp_path):
        assert main(["train-gru", "--out", str(tmp_path), "--steps", "20", "--sequences", "16",
                     "--test-sequences", "8", "--frames", "4", "--hidden", "4", "--batch", "8"]) == 0
        assert read_params(tmp_path / "params.gru").tag == "supervised-inverse"
        assert len((tmp_path / "loss.csv").read_text().splitlines()) == 21
        assert _json(tmp_path / "metrics.json")["error_kind"] == "relative_frobenius"

    def test_bad_task(self, tmp_path):
        assert main(["train-gru", "--out", str(tmp_path), "--task", "tea"]) == 2


class TestReports:
    def test_metrics_over_runs(self, sim, tmp_path):
        runs = []
        for i, mode in enumerate(("mvdr-chunk", "mf-mvdr")):
            run = tmp_path / f"run{i}"
            assert main(["beamform", "--scene", str(sim / f"scene_000{i}"), "--out", str(run), "--mode", mode,
                         "--channels", "3ch"]) == 0
            runs.append(str(run))
        assert main(["metrics", "--out", str(tmp_path / "rep"), "--runs"] + runs) == 0
        rows = (tmp_path / "rep" / "report.csv").read_text().splitlines()
        assert len(rows) == 3 and rows[0].startswith("scene_id,mode,si_snr_db")
        report = _json(tmp_path / "rep" / "report.json")
        assert set(report["by_mode"]) == {"mvdr-chunk", "mf-mvdr"}

    def test_metrics_on_wavs(self, sim, tmp_path):
        scene = sim / "scene_0000"
        assert main(["metrics", "--out", str(tmp_path), "--estimate", str(scene / "mixture.wav"),
                     "--reference", str(scene / "target.wav")]) == 0
        assert _json(tmp_path / "report.json")["overall"]["count"] == 1

    def test_sweep(self, sim, tmp_path):
        assert main(["sweep", "--out", str(tmp_path), "--axis", "mf-size", "--grid", "1,3", "--mode", "mf-mvdr",
                     "--channels", "3ch", "--scenes", str(sim / "scene_0000")]) == 0
        assert len((tmp_path / "report.csv").read_text().splitlines()) == 3
        assert main(["sweep", "--out", str(tmp_path), "--axis", "mf-size", "--grid", "0"]) == 2


class TestBeampattern:
    def test_built_in_scene(self, tmp_path):
        assert main(["beampattern", "--out", str(tmp_path), "--duration", "1.0"]) == 0
        lines = (tmp_path / "beam_pattern.csv").read_text().splitlines()[1:]
        gains = {float(a): float(g) for a, g in (ln.split(",") for ln in lines)}
        assert abs(gains[63.0]) < 0.1
        assert gains[131.0] < -10.0


class TestDeterminism:
    def test_repeat_run_is_byte_identical(self, sim, tmp_path):
        args = ["beamform", "--scene", str(sim / "scene_0000"), "--out", str(tmp_path), "--channels", "3ch"]
        assert main(args) == 0
        first = {n: (tmp_path / n).read_bytes() for n in ("manifest.json", "metrics.json", "weights.bin")}
        assert main(args) == 0
        assert first == {n: (tmp_path / n).read_bytes() for n in first}


class TestEntryPoint:
    def test_module_help(self):
        res = subprocess.run([sys.executable, "-m", "adlmvdr", "--help"], capture_output=True, text=True)
        assert res.returncode == 0 and "beampattern" in res.stdout

    def test_unknown_flag_exits_2(self):
        res = subprocess.run([sys.executable, "-m", "adlmvdr", "simulate", "--bogus"], capture_output=True, text=True)
        assert res.returncode == 2
