# tests/test_synthetic.py
import pytest

from corpus import load_interactions
from preference_llm import mock_preferences
from synthetic import generate_synthetic_corpus, next_item, synthetic_title, write_synthetic_corpus


def test_next_item_wraps_around_the_ring():
    assert next_item(1, 2, 10) == 3
    assert next_item(8, 10, 10) == 2
    assert next_item(3, 1, 10) == 9


def test_sequences_follow_the_stride_rule():
    rows = generate_synthetic_corpus(num_users=20, num_items=30, min_length=5, max_length=9, seed=4)
    by_user = {}
    for user_id, item_id, _, _ in rows:
        by_user.setdefault(user_id, []).append(int(item_id[1:]))
    assert len(by_user) == 20
    for sequence in by_user.values():
        assert 5 <= len(sequence) <= 9
        for prev, cur, nxt in zip(sequence, sequence[1:], sequence[2:]):
            assert nxt == next_item(prev, cur, 30)


def test_generation_is_seeded():
    assert generate_synthetic_corpus(10, 20, 4, 6, seed=1) == generate_synthetic_corpus(10, 20, 4, 6, seed=1)
    assert generate_synthetic_corpus(10, 20, 4, 6, seed=1) != generate_synthetic_corpus(10, 20, 4, 6, seed=2)


def test_titles_carry_theme_genre_and_cadence_words():
    assert synthetic_title(0) == "Space Action Dawn Iron 0"
    assert synthetic_title(7) == "Pirate Racing Dusk Gold 7"


@pytest.mark.parametrize("start, stride, word", [(2, 2, "dawn"), (3, 3, "iron"), (5, 2, "dusk")])
def test_mock_preferences_name_the_stride(start, stride, word):
    titles = [synthetic_title(start + stride * step) for step in range(10)]
    preferences = mock_preferences(titles, 3, seed=0)
    assert word in preferences[0].lower()
    assert not any("adventure" in p.lower() for p in preferences)


@pytest.mark.parametrize("kwargs", [{"num_items": 2}, {"min_length": 2}, {"min_length": 9, "max_length": 8}])
def test_invalid_parameters(kwargs):
    with pytest.raises(ValueError):
        generate_synthetic_corpus(**{"num_users": 3, **kwargs})


def test_written_corpus_loads_in_time_order(tmp_path):
    rows = generate_synthetic_corpus(num_users=5, num_items=12, min_length=4, max_length=4, seed=0)
    log, catalog = load_interactions(write_synthetic_corpus(rows, tmp_path / "synthetic.tsv"))
    assert len(log) == 20
    assert all(item.title == synthetic_title(int(item.item_id[1:])) for item in catalog.items)
