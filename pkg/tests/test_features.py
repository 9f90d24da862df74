import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from facetrait.cohort import TraitTable, assemble_cohort, validate_and_normalize
from facetrait.features import FeatureMatrix, aggregate_video, build_feature_matrix, describe
from facetrait.taxonomy import EMOTIONS, FEATURE_NAMES, FeatureKey, TRAIT_NAMES


def stream_of(scores, pid="p", vid=1, ts=None):
    scores = np.asarray(scores, dtype=float)
    ts = np.arange(len(scores)) * 33 if ts is None else np.asarray(ts)
    return validate_and_normalize((ts, scores), pid, vid)[0]


def onehot_rows(happy):
    rows = np.zeros((len(happy), 7))
    rows[:, EMOTIONS.index("happy")] = happy
    rows[:, EMOTIONS.index("neutral")] = 1 - np.asarray(happy)
    return rows


def test_mean_of_happy():
    agg = aggregate_video(stream_of(onehot_rows([0.2, 0.4, 0.6])))
    assert agg["happy"] == pytest.approx(0.4, abs=1e-15)


def test_single_frame_identity(rng):
    s = rng.dirichlet(np.ones(7))
    stream = stream_of(s[None])
    agg = aggregate_video(stream)
    np.testing.assert_allclose([agg[e] for e in EMOTIONS], stream.scores[0], rtol=0, atol=0)


def test_constant_neutral():
    rows = np.zeros((1000, 7))
    rows[:, EMOTIONS.index("neutral")] = 1.0
    agg = aggregate_video(stream_of(rows))
    assert agg["neutral"] == 1.0
    assert all(agg[e] == 0 for e in EMOTIONS if e != "neutral")


def test_absent_stream_is_none():
    assert aggregate_video(stream_of(np.zeros((0, 7)))) is None


def test_alternative_aggregations():
    s = stream_of(onehot_rows([0.2, 0.4, 0.9]), ts=[0, 100, 300])
    assert aggregate_video(s, "max")["happy"] == 0.9
    # gaps 100, 200, last frame weighted by median gap 150
    expected = (0.2 * 100 + 0.4 * 200 + 0.9 * 150) / 450
    assert aggregate_video(s, "time_weighted")["happy"] == pytest.approx(expected, rel=1e-12)


@given(
    arrays(float, st.tuples(st.integers(1, 20), st.just(7)), elements=st.floats(0.01, 1)),
    st.integers(0, 2**32 - 1),
    st.integers(1, 4),
)
def test_mean_invariant_to_order_and_duplication(raw, seed, reps):
    scores = raw / raw.sum(axis=1, keepdims=True)
    base = aggregate_video(stream_of(scores))
    perm = np.random.default_rng(seed).permutation(len(scores))
    shuffled = aggregate_video(stream_of(scores[perm]))
    dup = aggregate_video(stream_of(np.repeat(scores, reps, axis=0)))
    for e in EMOTIONS:
        assert shuffled[e] == pytest.approx(base[e], abs=1e-12)
        assert dup[e] == pytest.approx(base[e], abs=1e-12)
    assert sum(base.values()) == pytest.approx(1.0, abs=1e-9)


def _cohort(rng, n=4, drop=()):
    streams = {}
    for i in range(n):
        pid = f"p{i}"
        for v in range(1, 16):
            if (pid, v) in drop:
                continue
            streams[(pid, v)] = stream_of(rng.dirichlet(np.ones(7), size=6), pid, v)
    scores = np.full((n, 22), 0.5)
    scores[:, 5:] = np.nan
    return assemble_cohort(streams, TraitTable(tuple(f"p{i}" for i in range(n)), scores))[0]


def test_feature_matrix_shape_names_and_simplex(rng):
    cohort = _cohort(rng)
    fm = build_feature_matrix(cohort)
    assert fm.values.shape == (4, 105)
    assert fm.columns[0] == "Angry 1" and fm.columns[-1] == "Surprised 15"
    assert fm.columns.index("Happy 8") == FeatureKey("happy", 8).index == 3 * 15 + 7
    per_video = fm.values.reshape(4, 7, 15).sum(axis=1)
    np.testing.assert_allclose(per_video, 1.0, atol=1e-9)
    s = cohort.stream("p2", 8)
    assert fm.column("Happy 8")[2] == s.scores[:, 3].mean()


def test_missing_video_gives_seven_absent_cells(rng):
    fm = build_feature_matrix(_cohort(rng, drop={("p1", 9)}))
    missing = [FEATURE_NAMES[j] for j in np.flatnonzero(np.isnan(fm.values[1]))]
    assert missing == [f"{e.capitalize()} 9" for e in EMOTIONS]
    assert not np.isnan(fm.values[[0, 2, 3]]).any()


def test_serialization_round_trip_and_determinism(rng):
    cohort = _cohort(rng, drop={("p0", 3)})
    fm = build_feature_matrix(cohort)
    assert FeatureMatrix.from_csv(io.StringIO(fm.to_csv_string())) == fm
    assert FeatureMatrix.from_json(json.loads(json.dumps(fm.to_json()))) == fm
    assert build_feature_matrix(cohort).to_csv_string() == fm.to_csv_string()


def test_standardize_flag(rng):
    fm = build_feature_matrix(_cohort(rng, n=6), standardize=True)
    np.testing.assert_allclose(np.nanmean(fm.values, axis=0), 0, atol=1e-12)


def test_describe_examples():
    d = describe([1, 2, 3])
    assert (d.mean, d.sd, d.minimum, d.maximum) == (2, 1, 1, 3)
    assert describe([5, 5, 5, 5]).sd == 0
    assert describe([1, np.nan, 3]).n == 2
    with pytest.raises(ValueError):
        describe([1.0])


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=50))
def test_describe_ordering(xs):
    d = describe(xs)
    assert d.minimum <= d.mean <= d.maximum
    assert d.sd >= 0
