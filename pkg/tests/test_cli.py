import json

import numpy as np
import pytest

from spod.cli import main
from spod.core import SpatialGrid, load_snapshots, make_uniform_time_grid, save_snapshots
from spod.generators import TravelingProfile, synthetic_traveling


@pytest.fixture
def exact_fixture_file(tmp_path):
    """Single traveling Gaussian whose truth matches the CLI initialization:
    mode = first snapshot, coefficients = 1, path = linear."""
    grid = SpatialGrid(40, 1.0)
    tg = make_uniform_time_grid(20, 1.0)
    x = grid.nodes
    shape = np.exp(-0.5 * ((x - 0.4) / 0.08) ** 2)
    speed = 2 * grid.h / tg.times[1]  # two cells per step
    z, _ = synthetic_traveling([TravelingProfile(shape, speed)], grid, tg)
    path = tmp_path / "exact.spod"
    save_snapshots(z, path)
    return path, speed


class TestGenerate:
    def test_synthetic_roundtrip_and_determinism(self, tmp_path):
        out = tmp_path / "syn.spod"
        assert main(["generate", "synthetic", "--nx", "32", "--nt", "16", "-o", str(out)]) == 0
        z = load_snapshots(out)
        assert z.values.shape == (17, 32)
        first = out.read_bytes()
        assert main(["generate", "synthetic", "--nx", "32", "--nt", "16", "-o", str(out)]) == 0
        assert out.read_bytes() == first

    def test_burgers_dimensions(self, tmp_path):
        out = tmp_path / "b.spod"
        code = main(
            ["generate", "burgers", "--re", "1000", "--nx", "60", "--nt", "40", "-o", str(out)]
        )
        assert code == 0
        z = load_snapshots(out)
        assert z.values.shape == (41, 60)
        manifest = json.loads((tmp_path / "b.spod.manifest.json").read_text())
        assert manifest["config"]["re"] == 1000
        assert manifest["command"] == "generate"

    def test_missing_output_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["generate", "burgers"])
        assert exc.value.code == 2


class TestDecompose:
    def test_exact_fixture_truth_init(self, tmp_path, exact_fixture_file):
        src, speed = exact_fixture_file
        out = tmp_path / "exact.decomp"
        code = main(
            [
                "decompose",
                str(src),
                "--frames",
                f"r=1,path=linear:{speed}",
                "--iters",
                "50",
                "-o",
                str(out),
            ]
        )
        assert code == 0
        manifest = json.loads((tmp_path / "exact.decomp.manifest.json").read_text())
        assert manifest["final_relative_error"] <= 1e-10
        assert manifest["iterations"] == 0
        assert manifest["termination"] == "converged"

    def test_outputs_are_deterministic(self, tmp_path, exact_fixture_file):
        src, speed = exact_fixture_file
        out = tmp_path / "d.decomp"
        argv = [
            "decompose",
            str(src),
            "--frames",
            f"r=1,path=linear:{0.7 * speed}",
            "--iters",
            "20",
            "-o",
            str(out),
        ]
        assert main(argv) == 0
        first = out.read_bytes()
        assert main(argv) == 0
        assert out.read_bytes() == first

    def test_path_only_mode(self, tmp_path, exact_fixture_file):
        src, speed = exact_fixture_file
        out = tmp_path / "po.decomp"
        code = main(
            [
                "decompose",
                str(src),
                "--mode",
                "path-only",
                "--r",
                "1",
                "--frames",
                f"r=1,path=linear:{speed}",
                "--iters",
                "30",
                "-o",
                str(out),
            ]
        )
        assert code == 0
        manifest = json.loads((tmp_path / "po.decomp.manifest.json").read_text())
        assert manifest["final_relative_error"] <= 1e-8
        assert "isometry_defect" in manifest

    def test_nodal_file_path_spec(self, tmp_path, exact_fixture_file):
        src, speed = exact_fixture_file
        z = load_snapshots(src)
        pfile = tmp_path / "path.csv"
        np.savetxt(pfile, speed * z.tgrid.times, delimiter=",")
        out = tmp_path / "nf.decomp"
        code = main(
            [
                "decompose",
                str(src),
                "--frames",
                f"r=1,path=nodal-file:{pfile}",
                "--iters",
                "5",
                "-o",
                str(out),
            ]
        )
        assert code == 0
        manifest = json.loads((tmp_path / "nf.decomp.manifest.json").read_text())
        assert manifest["final_relative_error"] <= 1e-10

    def test_require_converged_failure_exit(self, tmp_path, exact_fixture_file):
        src, speed = exact_fixture_file
        out = tmp_path / "nc.decomp"
        code = main(
            [
                "decompose",
                str(src),
                "--frames",
                f"r=1,path=linear:{0.5 * speed}",
                "--iters",
                "2",
                "--grad-tol",
                "1e-14",
                "--require-converged",
                "-o",
                str(out),
            ]
        )
        assert code == 1

    def test_oversized_rank_is_usage_error(self, tmp_path, exact_fixture_file):
        src, _ = exact_fixture_file
        code = main(
            [
                "decompose",
                str(src),
                "--frames",
                "r=999,path=linear:0.0",
                "-o",
                str(src.parent / "x.decomp"),
            ]
        )
        assert code == 2

    def test_missing_input_is_io_error(self, tmp_path):
        code = main(
            [
                "decompose",
                str(tmp_path / "nope.spod"),
                "--frames",
                "r=1,path=linear:0.0",
                "-o",
                str(tmp_path / "x.decomp"),
            ]
        )
        assert code == 3


class TestPodAndCompare:
    def test_pod_manifest(self, tmp_path, exact_fixture_file):
        src, _ = exact_fixture_file
        out = tmp_path / "p.decomp"
        assert main(["pod", str(src), "--r", "2", "-o", str(out)]) == 0
        manifest = json.loads((tmp_path / "p.decomp.manifest.json").read_text())
        assert 0.0 <= manifest["final_relative_error"] <= 1.0
        assert len(manifest["singular_values"]) == 21

    def test_compare_orders_methods(self, tmp_path, exact_fixture_file, capsys):
        src, speed = exact_fixture_file
        dec = tmp_path / "s.decomp"
        main(
            [
                "decompose",
                str(src),
                "--frames",
                f"r=1,path=linear:{speed}",
                "--iters",
                "5",
                "-o",
                str(dec),
            ]
        )
        csv = tmp_path / "cmp.csv"
        code = main(
            ["compare", str(src), "--decomp", str(dec), "--pod", "1", "--csv", str(csv)]
        )
        assert code == 0
        table = capsys.readouterr().out.splitlines()
        rows = [line.split() for line in table if line and not line.startswith("method")]
        errs = {row[0]: float(row[2]) for row in rows if row[1] == "1"}
        assert errs["spod"] < errs["pod"]
        lines = csv.read_text().splitlines()
        assert lines[0] == "method,r,rel_l2_error,source"
        assert len(lines) == 3


class TestGradcheck:
    def test_builtin_fixture_passes(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out

    def test_on_data_file(self, tmp_path, exact_fixture_file, capsys):
        src, speed = exact_fixture_file
        # offset path so the gradient is not evaluated at a kink
        code = main(["gradcheck", str(src), "--frames", f"r=1,path=poly:0.003;{0.9 * speed}"])
        assert code == 0
        assert "PASS" in capsys.readouterr().out


class TestExportHeatmap:
    def test_from_snapshots(self, tmp_path, exact_fixture_file):
        src, _ = exact_fixture_file
        out = tmp_path / "hm.csv"
        assert main(["export-heatmap", str(src), "-o", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "t,x,value"
        assert len(lines) == 1 + 21 * 40

    def test_from_decomposition(self, tmp_path, exact_fixture_file):
        src, speed = exact_fixture_file
        dec = tmp_path / "d.decomp"
        main(
            [
                "decompose",
                str(src),
                "--frames",
                f"r=1,path=linear:{speed}",
                "--iters",
                "2",
                "-o",
                str(dec),
            ]
        )
        out = tmp_path / "hm.csv"
        assert main(["export-heatmap", str(dec), "-o", str(out)]) == 0
        assert out.read_text().startswith("t,x,value")

    def test_decomposition_roundtrip_matches(self, tmp_path, exact_fixture_file):
        from spod.cli import _load_decomposition, _save_decomposition
        from spod.cost_grad import reconstruct

        src, speed = exact_fixture_file
        dec = tmp_path / "d.decomp"
        main(
            [
                "decompose",
                str(src),
                "--frames",
                f"r=1,path=linear:{speed}",
                "--iters",
                "2",
                "-o",
                str(dec),
            ]
        )
        d = _load_decomposition(dec)
        again = tmp_path / "again.decomp"
        _save_decomposition(d, again)
        assert again.read_bytes() == dec.read_bytes()
        reconstruct(d)  # loaded object is well-formed
