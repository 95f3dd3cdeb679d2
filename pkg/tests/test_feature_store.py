import math
import pickle

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from interest_clock.core import CorruptSnapshot, Facet, OutOfOrderEvent, Vocabulary
from interest_clock.feature_store import HourlyTagStore, ScoreWeights, score_feature

from oracles import brute_clock, clock_as_names, random_events

DAY = 1440
POP, ROCK, HIPHOP = 0, 1, 2
CALM, ENGLISH = 2, 1


def ingest(store, user, minutes, genre, **labels):
    store.ingest(user, minutes, genre, CALM, ENGLISH, **labels)


@pytest.mark.parametrize("counts, w, expected", [
    ((2, 3, 1, 0), ScoreWeights(1, 1, 1, 1), 4.0),
    ((0, 0, 0, 0), ScoreWeights(1, 1, 1, 1), 0.0),
    ((1, 4, 2, 1), ScoreWeights(2.0, 0.5, 1.0, 3.0), -1.0),
])
def test_score_feature_examples(counts, w, expected):
    assert score_feature(*counts, w) == expected


@pytest.mark.parametrize("counts, expected", [
    ((1, 1, 0, 0), 3.0),
    ((0, 0, 1, 0), -1.0),
    ((0, 0, 0, 1), -2.0),
    ((2, 3, 1, 1), 4.0),
    ((0, 0, 0, 0), 0.0),
])
def test_score_feature_default_weights(counts, expected):
    assert score_feature(*counts, ScoreWeights()) == expected


@given(st.lists(st.integers(0, 50), min_size=4, max_size=4), st.lists(st.integers(0, 50), min_size=4, max_size=4),
       st.lists(st.floats(0, 10), min_size=4, max_size=4), st.lists(st.floats(0, 10), min_size=4, max_size=4))
def test_score_is_linear(c1, c2, w1, w2):
    w1, w2 = ScoreWeights(*w1), ScoreWeights(*w2)
    total = [a + b for a, b in zip(c1, c2)]
    assert math.isclose(score_feature(*total, w1), score_feature(*c1, w1) + score_feature(*c2, w1), abs_tol=1e-9)
    assert math.isclose(score_feature(*c1, w1 + w2), score_feature(*c1, w1) + score_feature(*c1, w2), abs_tol=1e-9)


@given(st.lists(st.integers(0, 50), min_size=4, max_size=4), st.integers(0, 3))
def test_score_monotone(counts, which):
    bumped = list(counts)
    bumped[which] += 1
    before, after = score_feature(*counts, ScoreWeights()), score_feature(*bumped, ScoreWeights())
    assert (after > before) if which < 2 else (after < before)


def test_weights_validated():
    with pytest.raises(ValueError):
        ScoreWeights(alpha=-1)
    with pytest.raises(ValueError):
        ScoreWeights(beta=float("nan"))


def test_one_like_one_finish():
    store = HourlyTagStore()
    ingest(store, 1, 22 * 60 + 5, POP, like=True, finish=True)
    clock = store.extract_clock(1)
    assert clock.slot(22, Facet.GENRE)[0][0].value == "pop"
    assert clock.slot(22, Facet.GENRE)[0][1] == 3.0
    assert store.counts(1, 22, Facet.GENRE, POP) == (1, 1, 1, 0, 0)


def test_counting_examples():
    store = HourlyTagStore()
    store.ingest(1, 8 * 60, POP, CALM, ENGLISH, like=True, finish=True)
    for f, t in ((0, POP), (1, CALM), (2, ENGLISH)):
        assert store.counts(1, 8, f, t) == (1, 1, 1, 0, 0)
    ingest(store, 2, 8 * 60, ROCK)
    assert store.counts(2, 8, Facet.GENRE, ROCK) == (1, 0, 0, 0, 0)
    ingest(store, 3, 8 * 60, ROCK, skip=True)
    ingest(store, 3, 8 * 60 + 5, ROCK, skip=True)
    assert store.counts(3, 8, Facet.GENRE, ROCK)[3] == 2


def test_only_active_hour_is_filled():
    store = HourlyTagStore()
    for i in range(5):
        ingest(store, 1, 8 * 60 + i, i, finish=True)
    clock = store.extract_clock(1)
    assert all(clock.slot(h, f) == [] for h in range(24) if h != 8 for f in range(3))


@pytest.mark.parametrize("days, watermark_day, kept", [
    ((0,), 31, 0),
    ((5,), 34, 1),
    ((0, 20), 31, 1),
])
def test_expire_examples(days, watermark_day, kept):
    store = HourlyTagStore(window_days=30)
    for d in days:
        ingest(store, 1, d * DAY + 600, POP, finish=True)
    store.expire(watermark_day * DAY)
    assert store.counts(1, 10, Facet.GENRE, POP)[2] == kept
    slot = store.extract_clock(1).slot(10, Facet.GENRE)
    assert (slot[0][1] if slot else 0) == kept


def test_expire_window_edges():
    store = HourlyTagStore(window_days=30)
    ingest(store, 1, 0 * DAY + 600, POP, finish=True)
    store.expire(29 * DAY)
    assert store.extract_clock(1).slot(10, Facet.GENRE)[0][1] == 1.0
    store.expire(30 * DAY)
    assert store.extract_clock(1).slot(10, Facet.GENRE) == []


def test_expire_keeps_recent_days():
    store = HourlyTagStore(window_days=30)
    for day in (0, 5, 20):
        ingest(store, 1, day * DAY + 600, POP, finish=True)
    store.expire(31 * DAY)
    assert store.counts(1, 10, Facet.GENRE, POP)[2] == 2
    store.expire(10)  # never goes backwards
    assert store.watermark == 31 * DAY


def test_tie_broken_by_name():
    store = HourlyTagStore()
    ingest(store, 1, 9 * 60, ROCK, finish=True)
    ingest(store, 1, 9 * 60 + 1, POP, finish=True)
    names = [t.value for t, _ in store.extract_clock(1).slot(9, Facet.GENRE)]
    assert names == ["pop", "rock"]


def test_top_three_only():
    store = HourlyTagStore()
    minute = 600
    for g, reps in ((POP, 4), (ROCK, 3), (HIPHOP, 2), (3, 1)):
        for _ in range(reps):
            ingest(store, 1, minute, g, finish=True)
            minute += 1
    slot = store.extract_clock(1).slot(10, Facet.GENRE)
    assert [s for _, s in slot] == [4.0, 3.0, 2.0]


def test_negative_scores_are_kept():
    store = HourlyTagStore()
    ingest(store, 1, 60, POP, dislike=True)
    assert store.extract_clock(1).slot(1, Facet.GENRE)[0][1] == -2.0


def test_unknown_user_and_empty_hours():
    store = HourlyTagStore()
    assert store.extract_clock(99).is_empty()
    ingest(store, 1, 60, POP, finish=True)
    clock = store.extract_clock(1)
    assert clock.slot(2, Facet.GENRE) == []
    assert (clock.tags[2] == -1).all()


def test_out_of_order_rejected():
    store = HourlyTagStore()
    ingest(store, 1, 100, POP)
    with pytest.raises(OutOfOrderEvent):
        ingest(store, 1, 99, POP)
    ingest(store, 2, 100, POP)  # equal timestamps are fine


def test_bad_tag_index():
    store = HourlyTagStore()
    with pytest.raises(ValueError):
        store.ingest(1, 0, 10, 0, 0)


def test_custom_weights_not_cached():
    store = HourlyTagStore()
    ingest(store, 1, 60, POP, like=True)
    ingest(store, 1, 61, ROCK, finish=True, dislike=True)
    default = store.extract_clock(1)
    flipped = store.extract_clock(1, ScoreWeights(0, 10, 0, 0))
    assert default.slot(1, Facet.GENRE)[0][0].value == "pop"
    assert flipped.slot(1, Facet.GENRE)[0][0].value == "rock"
    assert store.extract_clock(1) == default


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 300), st.integers(1, 12))
def test_matches_brute_force(seed, n, window):
    rng = np.random.default_rng(seed)
    ev = random_events(rng, n, max_gap=1500)
    store = HourlyTagStore(window_days=window)
    store.ingest_many(ev)
    vocab = store.vocab
    for u in range(4):
        got = clock_as_names(store.extract_clock(u))
        want = brute_clock(ev, u, store.watermark, window, (2, 1, 1, 2), vocab)
        assert got == want


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_incremental_cache_matches_fresh(seed):
    rng = np.random.default_rng(seed)
    ev = random_events(rng, 200, max_gap=900)
    store = HourlyTagStore(window_days=3)
    fresh = HourlyTagStore(window_days=3)
    for i, row in enumerate(ev):
        store.ingest_event(row)
        if i % 7 == 0:
            store.extract_clock(int(row["user_id"]))
    fresh.ingest_many(ev)
    for u in range(4):
        assert store.extract_clock(u) == fresh.extract_clock(u)


def test_deterministic_replay():
    ev = random_events(np.random.default_rng(5), 400)
    a, b = HourlyTagStore(), HourlyTagStore()
    a.ingest_many(ev)
    b.ingest_many(ev)
    assert all(a.extract_clock(u) == b.extract_clock(u) for u in range(4))


def test_snapshot_small_cases(tmp_path):
    empty = HourlyTagStore()
    empty.snapshot(tmp_path / "e.iclk")
    back = HourlyTagStore.restore(tmp_path / "e.iclk")
    assert back.n_users == 0 and back.extract_clock(0).is_empty()
    one = HourlyTagStore()
    ingest(one, 4, 300, HIPHOP, like=True)
    one.snapshot(tmp_path / "o.iclk")
    assert HourlyTagStore.restore(tmp_path / "o.iclk").extract_clock(4) == one.extract_clock(4)


def test_snapshot_round_trip(tmp_path):
    ev = random_events(np.random.default_rng(3), 500, max_gap=2000)
    store = HourlyTagStore(window_days=7)
    store.ingest_many(ev)
    path = tmp_path / "store.iclk"
    store.snapshot(path)
    back = HourlyTagStore.restore(path)
    assert back.watermark == store.watermark and back.window_days == 7
    for u in range(4):
        assert back.extract_clock(u) == store.extract_clock(u)
    # expiry keeps working after a restore
    later = store.watermark + 3 * DAY
    store.expire(later)
    back.expire(later)
    for u in range(4):
        assert back.extract_clock(u) == store.extract_clock(u)
    back.snapshot(tmp_path / "again.iclk")
    store.snapshot(tmp_path / "orig.iclk")
    assert (tmp_path / "again.iclk").read_bytes() == (tmp_path / "orig.iclk").read_bytes()


@pytest.mark.parametrize("mangle", [
    lambda t: "",
    lambda t: "XXXX" + t[4:],
    lambda t: t.replace("end\n", ""),
    lambda t: t[: len(t) // 2],
    lambda t: t.replace("day,", "dya,", 1),
    lambda t: t.split("\n", 1)[0] + "\n{not json\n",
])
def test_corrupt_snapshot(tmp_path, mangle):
    store = HourlyTagStore()
    store.ingest_many(random_events(np.random.default_rng(4), 50))
    path = tmp_path / "s.iclk"
    store.snapshot(path)
    path.write_text(mangle(path.read_text()))
    with pytest.raises(CorruptSnapshot):
        HourlyTagStore.restore(path)


def test_pickle_round_trip():
    store = HourlyTagStore()
    store.ingest_many(random_events(np.random.default_rng(6), 50))
    back = pickle.loads(pickle.dumps(store))
    assert back.extract_clock(0) == store.extract_clock(0)
    back.ingest(0, back.watermark, 0, 0, 0)
