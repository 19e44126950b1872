import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import pytest

from varifuse import RasterImage, read_raster, write_raster
from varifuse.cli import main
from varifuse.tasks import _gamma_x_newton


def f32(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def write_scene(path, data) -> RasterImage:
    img = RasterImage(f32(data))
    write_raster(str(path), img)
    return img


def ramp(size: int = 16) -> np.ndarray:
    u = np.mgrid[0:size, 0:size][0] / (size - 1)
    return (0.3 + 0.6 * u)[np.newaxis]


def manifest_of(out_path) -> dict:
    with open(str(out_path) + ".manifest.json") as fh:
        return json.load(fh)


class TestDegrade:
    def test_requires_an_operation(self, tmp_path, capsys):
        write_scene(tmp_path / "x.vcr", ramp())
        rc = main(["degrade", "--in", str(tmp_path / "x.vcr"), "--out", str(tmp_path / "y.vcr")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_gain_offset_down_chain(self, tmp_path):
        data = f32(np.arange(16, dtype=np.float64).reshape(1, 4, 4) / 16.0)
        write_scene(tmp_path / "x.vcr", data)
        rc = main([
            "degrade", "--in", str(tmp_path / "x.vcr"), "--out", str(tmp_path / "y.vcr"),
            "--gain", "2.0", "--offset", "0.5", "--down", "2",
        ])
        assert rc == 0
        out = read_raster(str(tmp_path / "y.vcr"))
        affine = 2.0 * data + 0.5
        expected = affine.reshape(1, 2, 2, 2, 2).mean(axis=(2, 4))
        # the block means collapse axes (y, x) pairwise
        expected = affine.reshape(1, 2, 2, 2, 2)
        expected = expected.transpose(0, 1, 3, 2, 4).reshape(1, 2, 2, 4).mean(axis=-1)
        assert np.allclose(out.data, expected, atol=1e-6)

    def test_mask_zeroes_unobserved_pixels(self, tmp_path):
        write_scene(tmp_path / "x.vcr", np.ones((2, 4, 4)))
        keep = np.zeros((1, 4, 4))
        keep[0, :2, :] = 1.0
        write_scene(tmp_path / "m.vcr", keep)
        rc = main([
            "degrade", "--in", str(tmp_path / "x.vcr"), "--out", str(tmp_path / "y.vcr"),
            "--mask", str(tmp_path / "m.vcr"),
        ])
        assert rc == 0
        out = read_raster(str(tmp_path / "y.vcr"))
        assert np.all(out.data[:, :2, :] == 1.0)
        assert np.all(out.data[:, 2:, :] == 0.0)

    def test_noise_is_seed_deterministic(self, tmp_path):
        write_scene(tmp_path / "x.vcr", ramp())
        for name in ("a.vcr", "b.vcr"):
            rc = main([
                "degrade", "--in", str(tmp_path / "x.vcr"), "--out", str(tmp_path / name),
                "--noise", "speckle", "--looks", "4", "--seed", "11",
            ])
            assert rc == 0
        assert (tmp_path / "a.vcr").read_bytes() == (tmp_path / "b.vcr").read_bytes()
        main([
            "degrade", "--in", str(tmp_path / "x.vcr"), "--out", str(tmp_path / "c.vcr"),
            "--noise", "speckle", "--looks", "4", "--seed", "12",
        ])
        assert (tmp_path / "a.vcr").read_bytes() != (tmp_path / "c.vcr").read_bytes()

    def test_manifest_records_the_run(self, tmp_path):
        src = tmp_path / "x.vcr"
        out = tmp_path / "y.vcr"
        write_scene(src, ramp())
        rc = main(["degrade", "--in", str(src), "--out", str(out),
                   "--noise", "gaussian", "--sigma", "0.05", "--seed", "3"])
        assert rc == 0
        doc = manifest_of(out)
        assert doc["manifest_v"] == 1
        assert doc["command"] == "degrade"
        assert doc["seed"] == 3
        assert doc["config"]["sigma"] == 0.05
        assert doc["inputs"][str(src)] == hashlib.sha256(src.read_bytes()).hexdigest()
        assert doc["outputs"][str(out)] == hashlib.sha256(out.read_bytes()).hexdigest()
        assert isinstance(doc["wall_time"], float)
        raw = (tmp_path / "y.vcr.manifest.json").read_text()
        assert raw == json.dumps(doc, indent=2, sort_keys=True) + "\n"


class TestDespeckle:
    def make_noisy(self, tmp_path):
        write_scene(tmp_path / "clean.vcr", ramp())
        main(["degrade", "--in", str(tmp_path / "clean.vcr"), "--out", str(tmp_path / "noisy.vcr"),
              "--noise", "speckle", "--looks", "1", "--seed", "7"])

    def test_end_to_end_with_report(self, tmp_path, capsys):
        self.make_noisy(tmp_path)
        rc = main([
            "despeckle", "--in", str(tmp_path / "noisy.vcr"), "--out", str(tmp_path / "out.vcr"),
            "--method", "pnp", "--prior", "tv", "--lambda", "0.4",
            "--iters", "6", "--rho0", "0.5", "--report", str(tmp_path / "trace.csv"),
        ])
        assert rc == 0

        def psnr_of(test):
            main(["eval", "--ref", str(tmp_path / "clean.vcr"), "--test", str(tmp_path / test)])
            return json.loads(capsys.readouterr().out)["psnr_db"]

        assert psnr_of("out.vcr") > psnr_of("noisy.vcr") + 2.0

        lines = (tmp_path / "trace.csv").read_text().splitlines()
        assert lines[0] == "iteration,energy"
        doc = manifest_of(tmp_path / "out.vcr")
        assert len(lines) - 1 == doc["solver"]["iterations"]
        assert doc["solver"]["stop_reason"] in ("tolerance", "max-iterations")
        assert doc["solver"]["final_energy"] == pytest.approx(float(lines[-1].split(",")[1]))

    def test_aa_tv_method(self, tmp_path):
        self.make_noisy(tmp_path)
        rc = main([
            "despeckle", "--in", str(tmp_path / "noisy.vcr"), "--out", str(tmp_path / "out.vcr"),
            "--method", "aa-tv", "--lambda", "1.0", "--iters", "40", "--step", "5e-4",
        ])
        assert rc == 0
        assert np.all(read_raster(str(tmp_path / "out.vcr")).data > 0)

    def test_median_radius_prior_parses(self, tmp_path):
        self.make_noisy(tmp_path)
        rc = main([
            "despeckle", "--in", str(tmp_path / "noisy.vcr"), "--out", str(tmp_path / "out.vcr"),
            "--prior", "median:2", "--iters", "3",
        ])
        assert rc == 0

    def test_extern_identity_prior_is_the_x_step_fixed_point(self, tmp_path):
        # With an identity denoiser the V-step only round-trips the iterate
        # through the plugin's float32 payload, so the CLI output must equal
        # plain iterated X-steps, and replays must be byte-identical.
        self.make_noisy(tmp_path)
        stub = Path(__file__).parent / "plugins" / "pnp_stub.py"
        args = [
            "despeckle", "--in", str(tmp_path / "noisy.vcr"),
            "--method", "pnp", "--prior", f"extern:{sys.executable} {stub} identity",
            "--lambda", "0.4", "--iters", "6", "--rho0", "0.5",
            "--rho-gamma", "1.2", "--tol", "0", "--floor", "1e-6",
        ]
        for name in ("a.vcr", "b.vcr"):
            rc = main(args + ["--out", str(tmp_path / name)])
            assert rc == 0
        assert (tmp_path / "a.vcr").read_bytes() == (tmp_path / "b.vcr").read_bytes()

        yv = read_raster(str(tmp_path / "noisy.vcr")).data
        x = np.maximum(yv, 1e-6)
        rho = 0.5
        for _ in range(6):
            v = x.astype(np.float32).astype(np.float64)
            x, _ = _gamma_x_newton(yv, v, 0.4, rho, 1e-6)
            rho = min(rho * 1.2, 0.5 * 1e6)
        assert np.array_equal(read_raster(str(tmp_path / "a.vcr")).data, f32(x))

    def test_unknown_prior_fails(self, tmp_path, capsys):
        self.make_noisy(tmp_path)
        rc = main([
            "despeckle", "--in", str(tmp_path / "noisy.vcr"), "--out", str(tmp_path / "out.vcr"),
            "--prior", "wavelet",
        ])
        assert rc == 1
        assert "unknown prior" in capsys.readouterr().err

    def test_unknown_method_fails(self, tmp_path, capsys):
        self.make_noisy(tmp_path)
        with pytest.raises(SystemExit) as exc:
            main(["despeckle", "--in", str(tmp_path / "noisy.vcr"),
                  "--out", str(tmp_path / "out.vcr"), "--method", "bm3d"])
        assert exc.value.code == 2
        # a config file bypasses the argparse choices, so the command checks too
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"method": "bm3d"}))
        rc = main(["--config", str(cfg), "despeckle",
                   "--in", str(tmp_path / "noisy.vcr"), "--out", str(tmp_path / "out.vcr")])
        assert rc == 1
        assert "unknown despeckle method" in capsys.readouterr().err


class TestDenoise:
    def test_smoke(self, tmp_path):
        rng = np.random.default_rng(0)
        cube = np.clip(0.5 + 0.1 * rng.standard_normal((3, 12, 12)), 0, 1)
        write_scene(tmp_path / "y.vcr", cube)
        rc = main([
            "denoise", "--in", str(tmp_path / "y.vcr"), "--out", str(tmp_path / "x.vcr"),
            "--tau", "0.1", "--beta", "1.0", "--iters", "4", "--rho0", "0.5",
        ])
        assert rc == 0
        out = read_raster(str(tmp_path / "x.vcr"))
        assert out.data.shape == (3, 12, 12)
        assert manifest_of(tmp_path / "x.vcr")["command"] == "denoise"


def write_fusion_scene(tmp_path):
    rng = np.random.default_rng(14)
    u, v = np.mgrid[0:16, 0:16] / 15.0
    maps = np.stack([u, 0.5 + 0.5 * np.sin(2 * np.pi * v)])
    truth = f32(np.tensordot(rng.random((4, 2)), maps, axes=(1, 0)))
    from varifuse import BlockMean, CompositeOperator, GaussianBlur, Geometry
    geom = Geometry(16, 16, 4)
    h_op = CompositeOperator([GaussianBlur(geom, 1.0), BlockMean(geom, 2)])
    p = np.array([[0.5, 0.5, 0.0, 0.0], [0.0, 0.0, 0.5, 0.5]])
    write_scene(tmp_path / "hsi.vcr", h_op._forward(truth))
    write_scene(tmp_path / "msi.vcr", np.tensordot(p, truth, axes=(1, 0)))
    (tmp_path / "srf.json").write_text(
        json.dumps({"rows": 2, "cols": 4, "entries": p.tolist()})
    )
    return truth


class TestFuse:
    def test_cnnfus_with_srf(self, tmp_path):
        truth = write_fusion_scene(tmp_path)
        rc = main([
            "fuse", "--hsi", str(tmp_path / "hsi.vcr"), "--msi", str(tmp_path / "msi.vcr"),
            "--out", str(tmp_path / "fused.vcr"), "--method", "cnnfus",
            "--srf", str(tmp_path / "srf.json"), "--subspace", "2", "--prior", "tv",
            "--iters", "8", "--rho0", "1e-3", "--down", "2", "--blur-sigma", "1.0",
        ])
        assert rc == 0
        out = read_raster(str(tmp_path / "fused.vcr"))
        assert out.data.shape == truth.shape
        assert float(np.abs(out.data - truth).max()) < 0.1
        assert len(manifest_of(tmp_path / "fused.vcr")["inputs"]) == 3

    def test_dlvm_without_srf(self, tmp_path):
        truth = write_fusion_scene(tmp_path)
        rc = main([
            "fuse", "--hsi", str(tmp_path / "hsi.vcr"), "--msi", str(tmp_path / "msi.vcr"),
            "--out", str(tmp_path / "fused.vcr"), "--method", "dlvm",
            "--gamma", "1.0", "--down", "2", "--blur-sigma", "1.0",
        ])
        assert rc == 0
        assert read_raster(str(tmp_path / "fused.vcr")).data.shape == truth.shape


class TestEval:
    def test_stdout_report(self, tmp_path, capsys):
        write_scene(tmp_path / "a.vcr", ramp())
        rc = main(["eval", "--ref", str(tmp_path / "a.vcr"), "--test", str(tmp_path / "a.vcr")])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["psnr_db"] == "inf"
        assert doc["ssim"] == pytest.approx(1.0)

    def test_region_enables_enl(self, tmp_path):
        rng = np.random.default_rng(1)
        write_scene(tmp_path / "a.vcr", 1.0 + 0.1 * rng.random((1, 16, 16)))
        rc = main([
            "eval", "--ref", str(tmp_path / "a.vcr"), "--test", str(tmp_path / "a.vcr"),
            "--region", "2,2,8,8", "--out", str(tmp_path / "rep.json"),
        ])
        assert rc == 0
        doc = json.loads((tmp_path / "rep.json").read_text())
        assert isinstance(doc["enl"], float)

    def test_malformed_region_fails(self, tmp_path, capsys):
        write_scene(tmp_path / "a.vcr", ramp())
        rc = main(["eval", "--ref", str(tmp_path / "a.vcr"), "--test", str(tmp_path / "a.vcr"),
                   "--region", "2,2,8"])
        assert rc == 1
        assert "region" in capsys.readouterr().err


class TestConfigResolution:
    def test_flag_beats_config_file(self, tmp_path):
        write_scene(tmp_path / "clean.vcr", ramp())
        main(["degrade", "--in", str(tmp_path / "clean.vcr"), "--out", str(tmp_path / "noisy.vcr"),
              "--noise", "speckle", "--looks", "2", "--seed", "1"])
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"lam": 0.9, "iters": 3}))
        rc = main([
            "--config", str(cfg),
            "despeckle", "--in", str(tmp_path / "noisy.vcr"), "--out", str(tmp_path / "out.vcr"),
            "--lambda", "0.1",
        ])
        assert rc == 0
        doc = manifest_of(tmp_path / "out.vcr")
        assert doc["config"]["lam"] == 0.1  # flag wins
        assert doc["config"]["iters"] == 3  # config fills the gap
        assert doc["solver"]["iterations"] <= 3

    def test_unreadable_config_fails(self, tmp_path, capsys):
        rc = main(["--config", str(tmp_path / "missing.json"),
                   "eval", "--ref", "a", "--test", "b"])
        assert rc == 1
        assert "config" in capsys.readouterr().err

    def test_non_object_config_fails(self, tmp_path, capsys):
        cfg = tmp_path / "run.json"
        cfg.write_text("[1, 2]")
        rc = main(["--config", str(cfg), "eval", "--ref", "a", "--test", "b"])
        assert rc == 1
        assert "JSON object" in capsys.readouterr().err


class TestFailureModes:
    def test_missing_input_is_a_clean_error(self, tmp_path, capsys):
        rc = main(["despeckle", "--in", str(tmp_path / "nope.vcr"),
                   "--out", str(tmp_path / "out.vcr")])
        assert rc == 1
        assert capsys.readouterr().err.startswith("error:")

    def test_bad_usage_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            main(["despeckle"])  # missing required --in/--out
        assert exc.value.code == 2
        with pytest.raises(SystemExit) as exc:
            main(["transmogrify"])
        assert exc.value.code == 2
