"""PGM writer round trips and grid layout."""

import numpy as np
import pytest

from mvcr import pgm


def test_round_trip_within_quantization(tmp_path):
    rs = np.random.RandomState(0)
    img = rs.rand(9, 13)
    p = tmp_path / "img.pgm"
    pgm.write_pgm(p, img)
    back = pgm.read_pgm(p)
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12


def test_header_and_line_length(tmp_path):
    p = tmp_path / "img.pgm"
    pgm.write_pgm(p, np.zeros((2, 100)))
    lines = p.read_text().splitlines()
    assert lines[0] == "P2"
    assert lines[1] == "100 2"
    assert lines[2] == "255"
    assert all(len(l) <= 70 for l in lines)


def test_values_clip_to_range(tmp_path):
    p = tmp_path / "img.pgm"
    pgm.write_pgm(p, np.array([[-0.5, 0.0], [1.0, 2.0]]))
    back = pgm.read_pgm(p)
    np.testing.assert_array_equal(back, [[0.0, 0.0], [1.0, 1.0]])


def test_write_rejects_bad_shapes():
    with pytest.raises(ValueError):
        pgm.write_pgm("/dev/null", np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        pgm.write_pgm("/dev/null", np.zeros((2, 2)), maxval=0)


def test_read_rejects_non_pgm(tmp_path):
    p = tmp_path / "junk.pgm"
    p.write_text("P5\n1 1\n255\n0\n")
    with pytest.raises(ValueError):
        pgm.read_pgm(p)


def test_tile_flat_images_with_gap():
    imgs = np.stack([np.full(4, 0.0), np.full(4, 0.5), np.full(4, 1.0)])
    grid = pgm.tile_images(imgs, cols=2, gap=1, gap_value=0.25)
    # 2x2 cells, 2 cols x 2 rows with one empty slot
    assert grid.shape == (5, 5)
    np.testing.assert_array_equal(grid[:2, :2], 0.0)
    np.testing.assert_array_equal(grid[:2, 3:], 0.5)
    np.testing.assert_array_equal(grid[3:, :2], 1.0)
    np.testing.assert_array_equal(grid[3:, 3:], 0.25)  # unused slot
    np.testing.assert_array_equal(grid[2, :], 0.25)  # separator row


def test_tile_rejects_non_square_flat():
    with pytest.raises(ValueError):
        pgm.tile_images(np.zeros((2, 6)), cols=1)
