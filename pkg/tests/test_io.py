import numpy as np
import pytest

from pdeseg.datagen import CorpusConfig, make_corpus
from pdeseg.io import (
    PGMError,
    load_corpus,
    quantize,
    read_field_raw,
    read_mask_pgm,
    read_pgm,
    save_corpus,
    write_field_raw,
    write_mask_pgm,
    write_pgm,
)


def test_pgm_roundtrip(tmp_path, rng):
    img = rng.integers(0, 256, size=(7, 11)).astype(np.uint8)
    path = tmp_path / "a.pgm"
    write_pgm(path, img)
    assert path.read_bytes().startswith(b"P5\n11 7\n255\n")
    assert np.array_equal(read_pgm(path), img)


def test_pgm_header_comments(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# a comment\n2 1\n255\n\x00\xff")
    assert read_pgm(path).tolist() == [[0, 255]]


@pytest.mark.parametrize(
    "data, offset",
    [
        (b"P2\n2 2\n255\n0000", 0),
        (b"P5\n2 x\n255\n0000", 5),
        (b"P5\n2 2\n255\n00", 13),
        (b"P5\n2", None),
    ],
)
def test_malformed_pgm_names_offset(tmp_path, data, offset):
    path = tmp_path / "bad.pgm"
    path.write_bytes(data)
    with pytest.raises(PGMError, match="byte offset" + ("" if offset is None else f" {offset}")):
        read_pgm(path)


def test_mask_pgm(tmp_path):
    m = np.array([[0, 1], [1, 0]], dtype=np.uint8)
    write_mask_pgm(tmp_path / "m.pgm", m)
    assert read_pgm(tmp_path / "m.pgm").tolist() == [[0, 255], [255, 0]]
    assert np.array_equal(read_mask_pgm(tmp_path / "m.pgm"), m)


def test_quantize():
    assert quantize(np.array([[0.0, 0.5, 1.0, 0.002]])).tolist() == [[0, 128, 255, 1]]


def test_raw_roundtrip(tmp_path, rng):
    f = rng.normal(size=(5, 3))
    path = tmp_path / "f.raw"
    write_field_raw(path, f)
    data = path.read_bytes()
    assert data[:8] == b"PDESEGF1" and len(data) == 16 + 8 * 15
    assert np.array_equal(read_field_raw(path), f)
    path.write_bytes(data[:-1])
    with pytest.raises(ValueError):
        read_field_raw(path)


def test_corpus_roundtrip(tmp_path):
    c = make_corpus(CorpusConfig(counts=(3, 2, 1, 2), size=16, seed=4))
    manifest = save_corpus(c, tmp_path / "corpus")
    d = load_corpus(manifest)
    assert d.train_order == c.train_order and d.seed == c.seed
    for a, b in zip(c.samples, d.samples):
        assert (a.index, a.split, a.morphology, a.seed) == (b.index, b.split, b.morphology, b.seed)
        assert np.array_equal(a.mask, b.mask)
        assert np.array_equal(quantize(a.image) / 255.0, b.image)
    first = manifest.read_bytes()
    save_corpus(c, tmp_path / "corpus")
    assert manifest.read_bytes() == first
