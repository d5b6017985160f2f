import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trigmark.corpus import (
    SyntheticCorpusSpec,
    default_vocabulary,
    feature_dims,
    generate_synthetic_corpus,
    load_corpus,
    sample_basic_triggers,
    save_corpus,
    trigger_space_dimension,
)


def brute_force_dimension(n, k, dims):
    """Count (subset, per-sample feature choice) tuples by enumeration."""
    subsets = sum(1 for _ in itertools.combinations(range(n), k))
    choices = sum(1 for _ in itertools.product(*[range(a * b) for a, b in dims]))
    return subsets * choices


def test_dimension_examples():
    assert trigger_space_dimension(5, 2, [(4, 3), (4, 3)]) == 1440
    assert trigger_space_dimension(7, 0, []) == 1
    assert trigger_space_dimension(3, 3, [(1, 1)] * 3) == 1


def test_dimension_matches_enumeration_exhaustively():
    r = np.random.default_rng(0)
    for n in range(0, 7):
        for k in range(0, n + 1):
            for _ in range(3):
                dims = [(int(r.integers(1, 3)), int(r.integers(1, 3))) for _ in range(k)]
                assert trigger_space_dimension(n, k, dims) == brute_force_dimension(n, k, dims)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 6).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n))), st.data())
def test_dimension_matches_enumeration_property(nk, data):
    n, k = nk
    dims = data.draw(st.lists(st.tuples(st.integers(1, 2), st.integers(1, 2)), min_size=k, max_size=k))
    assert trigger_space_dimension(n, k, dims) == brute_force_dimension(n, k, dims)


def test_dimension_is_exact_for_large_inputs():
    dims = [(32 * 32 * 3, 3)] * 16
    value = trigger_space_dimension(540, 16, dims)
    assert isinstance(value, int)
    assert value == math.comb(540, 16) * (3072 * 3) ** 16


def test_dimension_errors():
    with pytest.raises(ValueError):
        trigger_space_dimension(3, 4, [(1, 1)] * 4)
    with pytest.raises(ValueError):
        trigger_space_dimension(3, 2, [(1, 1)])
    with pytest.raises(ValueError):
        trigger_space_dimension(3, 1, [(0, 1)])


def test_default_corpus_size_and_determinism():
    spec = SyntheticCorpusSpec()
    assert spec.n_pairs == 540
    a = generate_synthetic_corpus(spec)
    b = generate_synthetic_corpus(spec)
    assert len(a) == 540
    assert all(np.array_equal(x.pixels, y.pixels) and x.id == y.id for (x, _), (y, _) in zip(a, b))
    assert feature_dims(a[0]) == (3072, 3)


def test_corpus_spec_errors():
    with pytest.raises(ValueError):
        generate_synthetic_corpus(SyntheticCorpusSpec(samples_per_class=0))
    with pytest.raises(ValueError):
        generate_synthetic_corpus(SyntheticCorpusSpec(colors=("red",)))
    with pytest.raises(ValueError):
        generate_synthetic_corpus(SyntheticCorpusSpec(image_size=(12, 12)))


def test_corpus_round_trip(tmp_path, small_corpus):
    save_corpus(small_corpus, tmp_path / "c", SyntheticCorpusSpec())
    back = load_corpus(tmp_path / "c", default_vocabulary())
    assert len(back) == len(small_corpus)
    for (x, y), (u, v) in zip(small_corpus, back):
        assert x.id == u.id and y == v
        assert np.array_equal(x.pixels, u.pixels)


def test_sampling(small_corpus):
    n = len(small_corpus)
    everything = sample_basic_triggers(small_corpus, n, 3)
    assert sorted(x.id for x, _ in everything.pairs) == sorted(x.id for x, _ in small_corpus)
    a = sample_basic_triggers(small_corpus, 16, 5)
    b = sample_basic_triggers(small_corpus, 16, 5)
    assert [x.id for x, _ in a.pairs] == [x.id for x, _ in b.pairs]
    assert len({x.id for x, _ in a.pairs}) == 16
    with pytest.raises(ValueError):
        sample_basic_triggers(small_corpus, n + 1, 0)
