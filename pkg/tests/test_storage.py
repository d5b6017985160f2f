import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trigmark.storage import (
    FormatError,
    load_checkpoint,
    read_embeddings,
    read_pgm,
    read_ppm,
    save_checkpoint,
    write_embeddings,
    write_pgm,
    write_ppm,
)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 9), st.integers(1, 9))
def test_ppm_round_trip_on_8bit_grid(seed, h, w):
    import tempfile
    from pathlib import Path

    pixels = np.random.default_rng(seed).integers(0, 256, (h, w, 3)) / 255.0
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "x.ppm"
        write_ppm(path, pixels)
        assert np.array_equal(read_ppm(path), pixels)


def test_pgm_round_trip(tmp_path):
    mask = (np.random.default_rng(0).random((5, 7)) > 0.5).astype(np.uint8)
    write_pgm(tmp_path / "m.pgm", mask)
    assert np.array_equal(read_pgm(tmp_path / "m.pgm") > 0.5, mask.astype(bool))


def test_checkpoint_round_trip_and_bytes(tmp_path):
    arrays = {"a": np.arange(6.0).reshape(2, 3), "b": np.array([1.5])}
    save_checkpoint(tmp_path / "c1", arrays, {"k": 1})
    save_checkpoint(tmp_path / "c2", arrays, {"k": 1})
    assert (tmp_path / "c1").read_bytes() == (tmp_path / "c2").read_bytes()
    back, meta = load_checkpoint(tmp_path / "c1")
    assert meta == {"k": 1}
    assert all(np.array_equal(back[k], arrays[k]) for k in arrays)


def test_checkpoint_errors(tmp_path):
    (tmp_path / "bad").write_bytes(b"nope\n")
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "bad")
    save_checkpoint(tmp_path / "c", {"a": np.ones(10)}, {})
    data = (tmp_path / "c").read_bytes()
    (tmp_path / "t").write_bytes(data[:-16])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "t")


def test_embeddings_round_trip(tmp_path):
    rows = [("a", np.array([0.6, 0.8])), ("b", np.array([1.0, 0.0]))]
    write_embeddings(tmp_path / "e.tsv", rows)
    table = read_embeddings(tmp_path / "e.tsv")
    assert np.array_equal(table["a"], rows[0][1]) and np.array_equal(table["b"], rows[1][1])
    with pytest.raises(ValueError):
        write_embeddings(tmp_path / "x.tsv", [("a\tb", np.ones(2))])
    (tmp_path / "bad.tsv").write_text("a 1,2\n")
    with pytest.raises(FormatError):
        read_embeddings(tmp_path / "bad.tsv")
    (tmp_path / "mixed.tsv").write_text("a\t1,0\nb\t1,0,0\n")
    with pytest.raises(FormatError):
        read_embeddings(tmp_path / "mixed.tsv")
