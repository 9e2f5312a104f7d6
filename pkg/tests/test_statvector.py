import numpy as np
import pytest

from dcoe.statvector import StatVector, load_index_file, load_z_file, write_index_file, write_z_file


def test_validation():
    with pytest.raises(ValueError):
        StatVector([1.0, np.nan])
    with pytest.raises(ValueError):
        StatVector([])
    with pytest.raises(ValueError):
        StatVector([1.0, 2.0], truth=[2])
    with pytest.raises(ValueError):
        StatVector([1.0, 2.0], truth=[1, 1])


def test_ties_broken_by_index():
    stats = StatVector([1.0, 2.0, 1.0, 2.0])
    assert stats.order.tolist() == [1, 3, 0, 2]


def test_two_sided_scores():
    stats = StatVector([-3.0, 1.0], two_sided=True)
    assert stats.scores.tolist() == [3.0, 1.0] and stats.null_tail_factor == 2.0


def test_z_file_formats(tmp_path):
    z = np.array([0.1, -2.5, 3.25])
    path = tmp_path / "z.txt"
    write_z_file(path, z)
    np.testing.assert_array_equal(load_z_file(path).z, z)

    two = tmp_path / "z2.csv"
    two.write_text("# index, z\n2, 3.25\n0, 0.1\n1, -2.5\n")
    np.testing.assert_array_equal(load_z_file(two).z, z)

    bad = tmp_path / "bad.csv"
    bad.write_text("0, 1.0\n0, 2.0\n")
    with pytest.raises(ValueError):
        load_z_file(bad)


def test_index_file_round_trip(tmp_path):
    path = tmp_path / "truth.txt"
    write_index_file(path, [4, 0, 7])
    assert load_index_file(path).tolist() == [4, 0, 7]
