"""Command-line workflows end to end on small synthetic fixtures."""

import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from metamorph import cli, sampler
from metamorph import image_field as imf

from conftest import gaussian_bump


@pytest.fixture
def bump_pair(tmp_path):
    template = gaussian_bump(20, 8.0, 10.0)
    target = gaussian_bump(20, 12.0, 10.0)
    tpl = tmp_path / "template.pgm"
    tgt = tmp_path / "target.pgm"
    imf.save(template, tpl)
    imf.save(target, tgt)
    return str(tpl), str(tgt)


def run_match(tmp_path, tpl, tgt, *extra):
    out = str(tmp_path / "match_out")
    code = cli.main([
        "match", "--template", tpl, "--target", tgt, "--out", out,
        "--stride", "3", "--max-iters", "40", "--precondition", *extra,
    ])
    return code, out


class TestMatch:
    def test_identical_images_zero_energy(self, tmp_path, bump_pair):
        tpl, _ = bump_pair
        out = str(tmp_path / "ident")
        code = cli.main(["match", "--template", tpl, "--target", tpl, "--out", out])
        assert code == 0
        diag = json.loads((tmp_path / "ident" / "diagnostics.json").read_text())
        assert diag["energy"] == 0.0
        mf = sampler.load_momenta(tmp_path / "ident" / "momenta.json")
        assert_allclose(mf.alphas, 0.0, atol=0.0)
        assert_allclose(mf.z0s, 0.0, atol=0.0)

    def test_missing_target_exits_1(self, tmp_path, bump_pair, capsys):
        tpl, _ = bump_pair
        code = cli.main([
            "match", "--template", tpl, "--target", str(tmp_path / "nope.pgm"),
            "--out", str(tmp_path / "o"),
        ])
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_bump_pair_converges(self, tmp_path, bump_pair):
        tpl, tgt = bump_pair
        code, out = run_match(tmp_path, tpl, tgt)
        assert code == 0
        diag = json.loads(open(out + "/diagnostics.json").read())
        assert diag["energy"] < 1e-2 * diag["initial_energy"]
        log_lines = open(out + "/iterations.ndjson").read().splitlines()
        assert len(log_lines) >= 2
        assert all("energy" in json.loads(line) for line in log_lines)

    def test_config_echo_reproduces(self, tmp_path, bump_pair):
        tpl, tgt = bump_pair
        code, out = run_match(tmp_path, tpl, tgt)
        assert code == 0
        rerun_out = str(tmp_path / "rerun")
        code = cli.main(["match", "--config", out + "/config.json", "--out", rerun_out])
        assert code == 0
        first = (tmp_path / "match_out" / "momenta.json").read_bytes()
        second = (tmp_path / "rerun" / "momenta.json").read_bytes()
        assert first == second

    def test_missing_required_after_config(self, tmp_path):
        code = cli.main(["match", "--out", str(tmp_path / "x")])
        assert code == 1


class TestShoot:
    def test_round_trip_energy(self, tmp_path, bump_pair):
        tpl, tgt = bump_pair
        code, out = run_match(tmp_path, tpl, tgt)
        shoot_out = str(tmp_path / "shoot_out")
        code = cli.main([
            "shoot", out + "/momenta.json", "--out", shoot_out, "--target", tgt,
        ])
        assert code == 0
        match_diag = json.loads(open(out + "/diagnostics.json").read())
        shoot_diag = json.loads(open(shoot_out + "/diagnostics.json").read())
        assert abs(shoot_diag["energy"] - match_diag["energy"]) <= 1e-12 * max(
            match_diag["energy"], 1.0
        )
        assert (tmp_path / "shoot_out" / "trajectory.csv").exists()

    def test_zero_momenta_stationary(self, tmp_path, bump_pair):
        tpl, _ = bump_pair
        from metamorph.dynamics import SolverConfig

        field = imf.load(tpl)
        x0, m0 = imf.sample_grid(field, 5)
        path = tmp_path / "zero.json"
        sampler.save_momenta(
            path, x0, np.zeros((1, len(m0))), SolverConfig(), m0=m0,
            z0s=np.zeros((1, len(m0), 2)),
        )
        out = str(tmp_path / "z_out")
        assert cli.main(["shoot", str(path), "--out", out]) == 0
        from metamorph.dynamics import read_trajectory_csv

        traj = read_trajectory_csv(out + "/trajectory.csv", SolverConfig())
        for state in traj.states:
            assert_allclose(state.x, x0, atol=0.0)
            assert_allclose(state.m, m0, atol=0.0)

    def test_corrupt_momenta_exits_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{broken")
        assert cli.main(["shoot", str(bad), "--out", str(tmp_path / "o")]) == 1

    def test_conflicting_params_exit_1(self, tmp_path, bump_pair):
        tpl, tgt = bump_pair
        code, out = run_match(tmp_path, tpl, tgt)
        code = cli.main([
            "shoot", out + "/momenta.json", "--out", str(tmp_path / "c"),
            "--tau-v", "9.0",
        ])
        assert code == 1


class TestRender:
    def test_frames_written(self, tmp_path, bump_pair):
        tpl, tgt = bump_pair
        code, out = run_match(tmp_path, tpl, tgt)
        render_out = str(tmp_path / "render_out")
        code = cli.main([
            "render", out + "/momenta.json", "--template", tpl,
            "--out", render_out, "--frames", "11",
        ])
        assert code == 0
        deformed = sorted((tmp_path / "render_out").glob("deformed_*.pgm"))
        template_frames = sorted((tmp_path / "render_out").glob("template_*.pgm"))
        assert len(deformed) == 11 and len(template_frames) == 11
        assert not list((tmp_path / "render_out").glob("gridlines_*.pgm"))

    def test_gridlines_additionally_written(self, tmp_path, bump_pair):
        tpl, tgt = bump_pair
        code, out = run_match(tmp_path, tpl, tgt)
        render_out = str(tmp_path / "grid_out")
        code = cli.main([
            "render", out + "/momenta.json", "--template", tpl,
            "--out", render_out, "--frames", "3", "--gridlines", "8",
        ])
        assert code == 0
        assert len(list((tmp_path / "grid_out").glob("gridlines_*.pgm"))) == 3

    def test_rerun_byte_identical(self, tmp_path, bump_pair):
        tpl, tgt = bump_pair
        code, out = run_match(tmp_path, tpl, tgt)
        outs = []
        for name in ("r1", "r2"):
            rdir = str(tmp_path / name)
            assert cli.main([
                "render", out + "/momenta.json", "--template", tpl,
                "--out", rdir, "--frames", "5",
            ]) == 0
            outs.append(sorted((tmp_path / name).glob("*.pgm")))
        for p1, p2 in zip(*outs):
            assert p1.read_bytes() == p2.read_bytes()

    def test_csv_source_uses_sibling_momenta(self, tmp_path, bump_pair):
        tpl, tgt = bump_pair
        code, out = run_match(tmp_path, tpl, tgt)
        shoot_out = str(tmp_path / "s")
        cli.main(["shoot", out + "/momenta.json", "--out", shoot_out])
        # place the momenta next to the CSV, as documented
        import shutil

        shutil.copy(out + "/momenta.json", shoot_out + "/momenta.json")
        code = cli.main([
            "render", shoot_out + "/trajectory.csv", "--template", tpl,
            "--out", str(tmp_path / "rc"), "--frames", "2",
        ])
        assert code == 0

    def test_csv_without_sibling_fails(self, tmp_path, bump_pair):
        tpl, tgt = bump_pair
        code, out = run_match(tmp_path, tpl, tgt)
        shoot_out = str(tmp_path / "s2")
        cli.main(["shoot", out + "/momenta.json", "--out", shoot_out])
        assert cli.main([
            "render", shoot_out + "/trajectory.csv", "--template", tpl,
            "--out", str(tmp_path / "rf"), "--frames", "2",
        ]) == 1


class TestSample:
    @pytest.fixture
    def momenta_set_file(self, tmp_path, bump_pair, rng):
        tpl, _ = bump_pair
        from metamorph.dynamics import SolverConfig

        field = imf.load(tpl)
        x0, m0 = imf.sample_grid(field, 4)
        alphas = rng.uniform(-0.3, 0.3, (3, len(m0)))
        path = tmp_path / "set.json"
        sampler.save_momenta(path, x0, alphas, SolverConfig(), template_id="t", m0=m0)
        return str(path), tpl

    def test_count_frames(self, tmp_path, momenta_set_file):
        path, tpl = momenta_set_file
        out = str(tmp_path / "samples")
        code = cli.main([
            "sample", path, "--template", tpl, "--out", out,
            "--c", "1.0", "--seed", "3", "--count", "4",
        ])
        assert code == 0
        assert len(list((tmp_path / "samples").glob("sample_*.pgm"))) == 4

    def test_c_zero_identical_frames(self, tmp_path, momenta_set_file):
        path, tpl = momenta_set_file
        out = str(tmp_path / "zero_c")
        code = cli.main([
            "sample", path, "--template", tpl, "--out", out,
            "--c", "0.0", "--count", "3",
        ])
        assert code == 0
        frames = sorted((tmp_path / "zero_c").glob("sample_*.pgm"))
        blobs = [f.read_bytes() for f in frames]
        assert blobs[0] == blobs[1] == blobs[2]

    def test_seed_reproducible(self, tmp_path, momenta_set_file):
        path, tpl = momenta_set_file
        blobs = []
        for name in ("sa", "sb"):
            out = str(tmp_path / name)
            assert cli.main([
                "sample", path, "--template", tpl, "--out", out,
                "--c", "1.0", "--seed", "17", "--count", "2",
            ]) == 0
            blobs.append([f.read_bytes() for f in sorted((tmp_path / name).glob("*.pgm"))])
        assert blobs[0] == blobs[1]

    def test_missing_c_exits_1(self, tmp_path, momenta_set_file):
        path, tpl = momenta_set_file
        assert cli.main([
            "sample", path, "--template", tpl, "--out", str(tmp_path / "nc"),
        ]) == 1
