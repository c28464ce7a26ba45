import json
import subprocess
import sys

import numpy as np
import pytest

from sdot1.cli import main
from sdot1.measures import DiscreteMeasure, load_measure, write_density_csv, write_measure
from sdot1.synthetic import gaussian_grid, sample_points


def _pgm(path, values):
    from PIL import Image

    Image.fromarray(np.asarray(values, np.uint8), mode="L").save(path, format="PPM")


@pytest.fixture
def uniform(tmp_path):
    _pgm(tmp_path / "u.pgm", np.full((16, 16), 1))
    write_measure(DiscreteMeasure([(0.5, 0.5)], [1.0]), tmp_path / "one.csv")
    return tmp_path


def _solve(d, *extra):
    return main(["solve", "--density", str(d / "u.pgm"), "--bounds", "0,0,1,1",
                 "--nu", str(d / "one.csv"), *extra])


def test_single_atom_on_uniform_square(uniform):
    out = uniform / "r.json"
    assert _solve(uniform, "--out", str(out), "--error-bounds") == 0
    rep = json.loads(out.read_text())
    assert rep["result"]["converged"] and rep["result"]["iterations"] == 0
    assert rep["result"]["w1"] == pytest.approx(0.3826, abs=2e-3)
    assert rep["weights"] == [0.0]
    m = rep["manifest"]
    assert set(m) == {"command", "inputs", "config", "seed", "version", "wall_time"}
    assert m["config"]["epsilon"] == 0.05 and m["command"][:2] == ["sdot1", "solve"]
    eb = rep["error_bounds"]
    assert eb["pixel_blur"]["value"] == pytest.approx(0.3825978 / 16, abs=1e-6)
    assert eb["subpixel_blur"]["value"] < eb["pixel_blur"]["value"]


def test_outputs_are_deterministic(tmp_path):
    g = gaussian_grid((0.4, 0.5), 0.05, (0, 0, 1, 1), 24)
    write_density_csv(g, tmp_path / "g.csv")
    nu = DiscreteMeasure(np.random.default_rng(0).random((30, 2)), np.full(30, g.total_mass / 30))
    write_measure(nu, tmp_path / "nu.csv")
    argv = ["solve", "--density", str(tmp_path / "g.csv"), "--nu", str(tmp_path / "nu.csv"),
            "--autonormalize", "--out", str(tmp_path / "r.json"), "--svg", str(tmp_path / "r.svg"),
            "--cells", str(tmp_path / "c.csv"), "--assignment", str(tmp_path / "a.pgm")]
    runs = []
    for _ in range(2):
        assert main(argv) in (0, 3)
        rep = json.loads((tmp_path / "r.json").read_text())
        rep["manifest"].pop("wall_time")
        runs.append((json.dumps(rep, sort_keys=True), (tmp_path / "r.svg").read_bytes(),
                     (tmp_path / "c.csv").read_bytes(), (tmp_path / "a.pgm").read_bytes()))
    assert runs[0] == runs[1]
    assert runs[0][1].startswith(b"<?xml") or runs[0][1].startswith(b"<svg")
    cells = np.loadtxt(tmp_path / "c.csv", delimiter=",", skiprows=1)
    assert cells.shape == (30, 7)
    assert cells[:, 4].sum() == pytest.approx(g.total_mass, rel=1e-9)


def test_iteration_log_and_hierarchy_dump(tmp_path):
    g = gaussian_grid((0.5, 0.5), 0.2, (0, 0, 1, 1), 32)
    write_density_csv(g, tmp_path / "g.csv")
    rng = np.random.default_rng(1)
    nu = DiscreteMeasure(rng.random((45, 2)), np.full(45, g.total_mass / 45))
    write_measure(nu, tmp_path / "nu.csv")
    code = main(["solve", "--density", str(tmp_path / "g.csv"), "--nu", str(tmp_path / "nu.csv"),
                 "--autonormalize", "--out", str(tmp_path / "r.json"),
                 "--iteration-log", str(tmp_path / "it.jsonl"),
                 "--hierarchy-dump", str(tmp_path / "h.json")])
    assert code == 0
    recs = [json.loads(line) for line in (tmp_path / "it.jsonl").read_text().splitlines()]
    assert recs and all(set(r) >= {"iter", "phi", "mistransported_mass", "step_size"} for r in recs)
    h = json.loads((tmp_path / "h.json").read_text())
    assert h["level_sizes"] == [45, 9]
    assert len(h["parent_maps"][0]) == 45
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["hierarchy_sizes"] == [45, 9] and len(rep["levels"]) == 2


def test_non_convergence_still_writes_report(uniform, tmp_path):
    write_measure(DiscreteMeasure([(0.2, 0.2), (0.8, 0.7), (0.3, 0.9)], [0.5, 0.3, 0.2]),
                  tmp_path / "three.csv")
    out = tmp_path / "r.json"
    code = main(["solve", "--density", str(uniform / "u.pgm"), "--bounds", "0,0,1,1",
                 "--nu", str(tmp_path / "three.csv"), "--epsilon", "1e-6",
                 "--max-iterations", "2", "--out", str(out)])
    assert code == 3
    rep = json.loads(out.read_text())
    assert rep["result"]["converged"] is False
    assert rep["result"]["termination_reason"] == "max_iterations"


def test_malformed_csv_names_the_line(uniform, capsys):
    (uniform / "bad.csv").write_text("x,y,mass\n0.1,0.2,0.5\n0.3,oops,0.5\n")
    code = main(["solve", "--density", str(uniform / "u.pgm"), "--nu", str(uniform / "bad.csv")])
    assert code == 2
    assert "bad.csv:3" in capsys.readouterr().err


def test_mass_mismatch_and_autonormalize(uniform, tmp_path, capsys):
    write_measure(DiscreteMeasure([(0.5, 0.5)], [3.0]), tmp_path / "heavy.csv")
    base = ["solve", "--density", str(uniform / "u.pgm"), "--bounds", "0,0,1,1",
            "--nu", str(tmp_path / "heavy.csv"), "--out", str(tmp_path / "r.json")]
    assert main(base) == 2
    assert "mass mismatch" in capsys.readouterr().err
    assert main(base + ["--autonormalize"]) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["balance"]["rescaled"] and rep["sites"]["mass"] == [pytest.approx(1.0)]


def test_missing_file_is_an_input_error(tmp_path, capsys):
    assert main(["solve", "--density", str(tmp_path / "none.pgm"), "--nu", "x.csv"]) == 2
    assert "no such file" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["solve", "--density", "a.pgm", "--nu", "b.csv", "--frobnicate"],
    ["solve", "--density", "a.pgm", "--nu", "b.csv", "--subpixels", "0"],
    ["solve", "--density", "a.pgm", "--nu", "b.csv", "--multiscale", "maybe"],
    ["solve", "--density", "a.pgm", "--nu", "b.csv", "--epsilon", "-1"],
    ["teleport"],
])
def test_bad_flags_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2


def test_module_entry_point(uniform):
    proc = subprocess.run([sys.executable, "-m", "sdot1", "solve", "--density",
                           str(uniform / "u.pgm"), "--bounds", "0,0,1,1",
                           "--nu", str(uniform / "one.csv"), "--unknown"],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "unrecognized arguments" in proc.stderr
    proc = subprocess.run([sys.executable, "-m", "sdot1", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "oracle" not in proc.stdout


def test_quantize_command(tmp_path):
    g = gaussian_grid((1.0, 0.5), 0.2, (0, 0, 2, 1), 40, 20)
    write_density_csv(g, tmp_path / "g.csv")
    out = tmp_path / "nu.csv"
    assert main(["quantize", "--density", str(tmp_path / "g.csv"), "--n", "12",
                 "--seed", "3", "--out", str(out)]) == 0
    nu = load_measure(out)
    assert nu.n == 12 and nu.total_mass == pytest.approx(g.total_mass, rel=1e-12)
    first = out.read_bytes()
    main(["quantize", "--density", str(tmp_path / "g.csv"), "--n", "12", "--seed", "3",
          "--out", str(out)])
    assert out.read_bytes() == first
    assert main(["quantize", "--density", str(tmp_path / "g.csv"), "--n", "100000",
                 "--out", str(out)]) == 2


def test_gof_command(tmp_path):
    g = gaussian_grid((0.5, 0.5), 0.2, (0, 0, 1, 1), 32)
    write_density_csv(g, tmp_path / "g.csv")
    pts = sample_points(g, 100, seed=7)
    (tmp_path / "s.csv").write_text("x,y\n" + "".join(f"{float(x)!r},{float(y)!r}\n" for x, y in pts))
    out = tmp_path / "gof.json"
    code = main(["gof", "--density", str(tmp_path / "g.csv"), "--sample", str(tmp_path / "s.csv"),
                 "--out", str(out), "--svg", str(tmp_path / "gof.svg")])
    assert code == 0
    rep = json.loads(out.read_text())
    assert rep["result"]["total_mass"] == pytest.approx(1.0)
    assert rep["sites"]["mass"][0] == pytest.approx(0.01)
    ecc = rep["eccentricity"]
    assert len(ecc["per_cell"]) == 100 and ecc["median"] >= 1.0
    assert (tmp_path / "gof.svg").stat().st_size > 0


def test_gof_rejects_duplicate_points(tmp_path, capsys):
    g = gaussian_grid((0.5, 0.5), 0.2, (0, 0, 1, 1), 8)
    write_density_csv(g, tmp_path / "g.csv")
    (tmp_path / "s.csv").write_text("x,y\n0.5,0.5\n0.5,0.5\n0.5,0.5\n")
    code = main(["gof", "--density", str(tmp_path / "g.csv"), "--sample", str(tmp_path / "s.csv")])
    assert code == 2
    assert "duplicate support points" in capsys.readouterr().err


def test_bounds_command(uniform):
    out = uniform / "b.json"
    assert main(["bounds", "--density", str(uniform / "u.pgm"), "--bounds", "0,0,1,1",
                 "--nu", str(uniform / "one.csv"), "--out", str(out)]) == 0
    eb = json.loads(out.read_text())["error_bounds"]
    assert eb["quantization_exact"]["value"] == pytest.approx(0.3826, abs=2e-3)
    assert eb["pixel_blur"]["kind"] == "blur_bound"


def test_render_from_report_and_pgm(tmp_path):
    vals = np.full((8, 8), 1)
    _pgm(tmp_path / "u.pgm", vals)
    write_measure(DiscreteMeasure([(0.25, 0.5), (0.75, 0.5)], [0.5, 0.5]), tmp_path / "two.csv")
    rep = tmp_path / "r.json"
    assert main(["solve", "--density", str(tmp_path / "u.pgm"), "--bounds", "0,0,1,1",
                 "--nu", str(tmp_path / "two.csv"), "--out", str(rep), "--svg",
                 str(tmp_path / "direct.svg"), "--assignment", str(tmp_path / "a.pgm")]) == 0
    assert main(["render", "--in", str(rep), "--svg", str(tmp_path / "again.svg"),
                 "--figure", str(tmp_path / "fig.png")]) == 0
    assert (tmp_path / "again.svg").read_bytes() == (tmp_path / "direct.svg").read_bytes()
    assert (tmp_path / "fig.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert main(["render", "--in", str(tmp_path / "a.pgm"), "--svg", str(tmp_path / "p.svg")]) == 0
    svg = (tmp_path / "p.svg").read_text()
    # two sites, two discs; a converged solve needs no centroid arrows
    assert svg.count("<circle") == 2 and "<line" not in svg


def test_render_from_another_directory(uniform, monkeypatch):
    monkeypatch.chdir(uniform)
    assert main(["solve", "--density", "u.pgm", "--bounds", "0,0,1,1", "--nu", "one.csv",
                 "--out", "r.json", "--svg", "a.svg"]) == 0
    (uniform / "elsewhere").mkdir()
    monkeypatch.chdir(uniform / "elsewhere")
    assert main(["render", "--in", "../r.json", "--svg", "b.svg"]) == 0
    assert (uniform / "elsewhere" / "b.svg").read_bytes() == (uniform / "a.svg").read_bytes()


def test_render_needs_an_output(tmp_path, capsys):
    assert main(["render", "--in", str(tmp_path / "r.json")]) == 2


def test_oracle_command(tmp_path):
    write_measure(DiscreteMeasure([(0, 0), (1, 0), (2, 0)], [1, 1, 1]), tmp_path / "a.csv")
    write_measure(DiscreteMeasure([(0.5, 0), (1.5, 0), (2.5, 0)], [1, 1, 1]), tmp_path / "b.csv")
    out = tmp_path / "o.json"
    assert main(["oracle", "--mu", str(tmp_path / "a.csv"), "--nu", str(tmp_path / "b.csv"),
                 "--out", str(out)]) == 0
    assert json.loads(out.read_text())["distance"] == pytest.approx(1.5, abs=1e-9)
