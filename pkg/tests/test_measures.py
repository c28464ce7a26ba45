import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdot1.measures import (DensityGrid, DiscreteMeasure, InputError, check_balance,
                            load_density, load_measure, normalize, write_density_csv,
                            write_measure)


def write_pgm_p2(path, values, maxval=255):
    ny, nx = values.shape
    lines = ["P2", "# test image", f"{nx} {ny}", str(maxval)]
    lines += [" ".join(str(int(v)) for v in row) for row in values]
    path.write_text("\n".join(lines) + "\n")


def test_pgm_single_positive_pixel(tmp_path):
    p = tmp_path / "a.pgm"
    write_pgm_p2(p, np.array([[0, 0], [0, 255]]))
    g = load_density(p, bounds="0,0,1,1")
    assert np.count_nonzero(g.values) == 1
    assert g.total_mass == 255 * 0.25
    # top row of the file is the max-y row
    assert g.values[1, 1] == 255


def test_pgm_p5_roundtrip(tmp_path):
    from PIL import Image

    vals = np.arange(12, dtype=np.uint8).reshape(3, 4)
    Image.fromarray(vals, mode="L").save(tmp_path / "b.pgm")
    g = load_density(tmp_path / "b.pgm")
    assert np.array_equal(g.values, vals)
    assert g.bounds == (0.0, 0.0, 1.0, 0.75)


def test_all_zero_pgm_rejected(tmp_path):
    p = tmp_path / "z.pgm"
    write_pgm_p2(p, np.zeros((3, 3)))
    with pytest.raises(InputError, match="zero total mass"):
        load_density(p)


def test_malformed_pgm(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P5\n2 2\n255\n\x00")
    with pytest.raises(InputError):
        load_density(p)


def test_non_square_pixels():
    vals = np.ones((196, 256))
    with pytest.raises(InputError, match="non-square pixels"):
        DensityGrid(0, 0, 1, 1, vals)
    g = DensityGrid(0, 0, 1, 0.765625, vals)
    assert g.side == pytest.approx(1 / 256)


def test_negative_density_rejected():
    with pytest.raises(InputError):
        DensityGrid(0, 0, 2, 1, np.array([[1.0, -1.0]]))


def test_normalize_discrete():
    nu = normalize(DiscreteMeasure([(0, 0), (1, 0)], [2, 2]), 1.0)
    assert np.array_equal(nu.masses, [0.5, 0.5])


def test_normalize_identity():
    nu = DiscreteMeasure([(0, 0), (1, 0), (0, 1)], [0.2, 0.3, 0.5])
    out = normalize(nu, 1.0)
    assert np.max(np.abs(out.masses - nu.masses)) <= 1e-15


def test_normalize_grid():
    g = DensityGrid(0, 0, 1, 1, np.array([[0, 0], [0, 255.0]]))
    out = normalize(g, 1.0)
    assert np.allclose(out.values, g.values / 63.75, rtol=0, atol=1e-15)
    with pytest.raises(InputError):
        normalize(g, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-6, 1e6), min_size=1, max_size=30),
       st.floats(1e-3, 1e3))
def test_normalize_hits_target(masses, target):
    pts = np.c_[np.arange(len(masses)), np.zeros(len(masses))]
    out = normalize(DiscreteMeasure(pts, masses), target)
    assert abs(out.total_mass - target) <= 1e-12 * target


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_grid_normalize_hits_target(nx, ny, seed, target):
    vals = np.random.default_rng(seed).random((ny, nx)) + 1e-3
    g = normalize(DensityGrid(0, 0, nx * 0.5, ny * 0.5, vals), target)
    assert abs(g.total_mass - target) <= 1e-12 * target


def test_check_balance():
    g = DensityGrid(0, 0, 1, 1, np.ones((1, 1)))
    one = DiscreteMeasure([(0.5, 0.5)], [1.0])
    b = check_balance(g, one)
    assert b.relative_gap == 0 and b.ok
    b = check_balance(g, DiscreteMeasure([(0.5, 0.5)], [0.98]))
    assert b.relative_gap == pytest.approx(0.02) and not b.ok
    g10 = DensityGrid(0, 0, 1, 1, np.full((1, 1), 10.0))
    assert check_balance(g10, DiscreteMeasure([(0.5, 0.5)], [10 + 1e-7])).ok


def test_duplicate_points_rejected():
    with pytest.raises(InputError, match="duplicate"):
        DiscreteMeasure([(0, 0), (0, 0)], [1, 1])


def test_csv_grid_roundtrip_is_bit_identical(tmp_path):
    rng = np.random.default_rng(3)
    g = DensityGrid(-1.5, 2.0, 0.5, 3.5, rng.random((3, 4)) * 1e-3 + np.pi)
    write_density_csv(g, tmp_path / "g.csv")
    assert json.loads((tmp_path / "g.csv.json").read_text())["x_min"] == -1.5
    h = load_density(tmp_path / "g.csv")
    assert h.bounds == g.bounds
    assert np.array_equal(h.values, g.values)


def test_measure_csv_roundtrip(tmp_path):
    nu = DiscreteMeasure([(0.1, 0.2), (1 / 3, 2 / 3)], [0.25, 0.75])
    write_measure(nu, tmp_path / "nu.csv")
    back = load_measure(tmp_path / "nu.csv")
    assert np.array_equal(back.points, nu.points) and np.array_equal(back.masses, nu.masses)


def test_malformed_measure_names_line(tmp_path):
    p = tmp_path / "nu.csv"
    p.write_text("x,y,mass\n0,0,1\n0.5,abc,1\n")
    with pytest.raises(InputError, match=r"nu.csv:3"):
        load_measure(p)
    p.write_text("a,b\n0,0\n")
    with pytest.raises(InputError, match=r":1"):
        load_measure(p)
