# tests/test_corpus.py
import importlib.util
import json

import numpy as np
import pytest

from conftest import FIXTURE_EXPECTED, ROOT_DIR
from corpus import (
    CatalogItem,
    InteractionLog,
    ItemCatalog,
    build_fixed_sequence,
    corpus_statistics,
    kcore_filter,
    leave_one_out_split,
    load_interactions,
    read_catalog_jsonl,
    read_split_jsonl,
    write_catalog_jsonl,
    write_split_jsonl,
)
from errors import CatalogIntegrityError, CorpusParseError


def _load_check_script():
    module_spec = importlib.util.spec_from_file_location("check_fixture", ROOT_DIR / "data" / "fixtures" / "check_fixture.py")
    module = importlib.util.module_from_spec(module_spec)
    module_spec.loader.exec_module(module)
    return module


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


# ------------------------------
# load_interactions
# ------------------------------

def test_load_fixture_builds_catalog_in_first_seen_order(fixture_tsv):
    log, catalog = load_interactions(fixture_tsv)
    assert len(log) == 57
    assert len(catalog) == 8
    assert [c.item_id for c in catalog.items][:3] == ["i1", "i2", "i3"]
    assert catalog.title_of(6) == "Garry's Mod"


def test_load_reports_line_number_of_bad_row(tmp_path):
    path = _write(tmp_path, "bad.tsv", "u1\ti1\tTitle\t1\nu1\ti2\tOther\tnot-a-time\n")
    with pytest.raises(CorpusParseError) as exc:
        load_interactions(path)
    assert exc.value.line_number == 2
    assert "line 2" in str(exc.value)


def test_load_rejects_wrong_column_count(tmp_path):
    path = _write(tmp_path, "bad.tsv", "u1\ti1\tTitle\n")
    with pytest.raises(CorpusParseError):
        load_interactions(path)


def test_conflicting_titles_raise_integrity_error(tmp_path):
    path = _write(tmp_path, "bad.tsv", "u1\ti1\tTitle A\t1\nu2\ti1\tTitle B\t2\n")
    with pytest.raises(CatalogIntegrityError):
        load_interactions(path)


def test_jsonl_input_matches_tsv(tmp_path):
    rows = [("u1", "i1", "Alpha", 3), ("u1", "i2", "Beta", 1), ("u2", "i1", "Alpha", 2)]
    tsv = _write(tmp_path, "x.tsv", "".join(f"{u}\t{i}\t{t}\t{ts}\n" for u, i, t, ts in rows))
    jsonl = _write(tmp_path, "x.jsonl", "".join(
        json.dumps({"user_id": u, "item_id": i, "title": t, "timestamp": ts}) + "\n" for u, i, t, ts in rows
    ))
    log_a, cat_a = load_interactions(tsv)
    log_b, cat_b = load_interactions(jsonl)
    assert cat_a.titles == cat_b.titles
    assert log_a.events[["user_id", "item_id", "timestamp"]].equals(log_b.events[["user_id", "item_id", "timestamp"]])


def test_jsonl_missing_field(tmp_path):
    path = _write(tmp_path, "x.jsonl", '{"user_id": "u1", "item_id": "i1", "timestamp": 1}\n')
    with pytest.raises(CorpusParseError) as exc:
        load_interactions(path)
    assert "title" in str(exc.value)


def test_catalog_rejects_gaps_and_blank_titles():
    with pytest.raises(CatalogIntegrityError):
        ItemCatalog([CatalogItem(2, "i1", "A")])
    with pytest.raises(CatalogIntegrityError):
        ItemCatalog([CatalogItem(1, "i1", "   ")])


@pytest.mark.parametrize("index", [0, -1, 3])
def test_title_lookup_rejects_padding_and_out_of_range(small_catalog, index):
    catalog = ItemCatalog(small_catalog.items[:2])
    with pytest.raises(IndexError):
        catalog.title_of(index)


# ------------------------------
# kcore_filter + leave_one_out_split
# ------------------------------

def test_fixture_split_matches_expected_json(fixture_tsv):
    with open(FIXTURE_EXPECTED, encoding="utf-8") as f:
        expected = json.load(f)

    log, catalog = load_interactions(fixture_tsv)
    filtered = kcore_filter(log, expected["min_interactions"])
    catalog = catalog.restricted_to(filtered.items)
    split = leave_one_out_split(filtered, catalog)

    assert len(filtered) == expected["filtered"]["actions"]
    assert [c.item_id for c in catalog.items] == expected["catalog"]
    assert list(split.users) == list(expected["split"])
    for user_id, user_split in split.users.items():
        want = expected["split"][user_id]
        assert list(user_split.train) == want["train"]
        assert (user_split.valid, user_split.test) == (want["valid"], want["test"])
    assert sum(len(s.train) for s in split.users.values()) == expected["counts"]["train"]


def test_independent_script_agrees_with_expected_json(fixture_tsv):
    with open(FIXTURE_EXPECTED, encoding="utf-8") as f:
        expected = json.load(f)
    assert _load_check_script().derive(fixture_tsv) == expected


def test_kcore_cascade_removes_user_left_short():
    # u2 survives the first user pass but loses item c, then drops below 2
    log = InteractionLog.from_rows([
        ("u1", "a", 1), ("u1", "b", 2),
        ("u2", "a", 1), ("u2", "c", 2),
        ("u3", "b", 1), ("u3", "a", 2),
    ])
    kept = kcore_filter(log, 2)
    assert set(kept.events["user_id"]) == {"u1", "u3"}
    assert set(kept.events["item_id"]) == {"a", "b"}


def test_kcore_is_idempotent(fixture_tsv):
    log, _ = load_interactions(fixture_tsv)
    once = kcore_filter(log, 5)
    twice = kcore_filter(once, 5)
    assert once.events.equals(twice.events)


def test_kcore_with_k_one_keeps_everything(fixture_tsv):
    log, _ = load_interactions(fixture_tsv)
    assert len(kcore_filter(log, 1)) == len(log)


def test_short_users_keep_train_only():
    log = InteractionLog.from_rows([("u1", "a", 1), ("u1", "b", 2)])
    catalog = ItemCatalog([CatalogItem(1, "a", "A"), CatalogItem(2, "b", "B")])
    split = leave_one_out_split(log, catalog)
    assert split.users["u1"].train == (1, 2)
    assert not split.users["u1"].has_targets
    assert split.eligible_users("test") == []


def test_timestamp_ties_keep_input_order():
    log = InteractionLog.from_rows([("u1", "a", 5), ("u1", "b", 5), ("u1", "c", 6), ("u1", "d", 7)])
    catalog = ItemCatalog([CatalogItem(i, x, x.upper()) for i, x in enumerate("abcd", start=1)])
    split = leave_one_out_split(log, catalog)
    assert split.users["u1"].train == (1, 2)


def test_split_histories_never_include_their_target(fixture_tsv):
    log, catalog = load_interactions(fixture_tsv)
    filtered = kcore_filter(log, 5)
    split = leave_one_out_split(filtered, catalog.restricted_to(filtered.items))
    for s in split.users.values():
        assert s.history("valid") == list(s.train)
        assert s.history("test") == list(s.train) + [s.valid]


# ------------------------------
# build_fixed_sequence
# ------------------------------

def test_fixed_sequence_left_pads():
    seq = build_fixed_sequence([4, 5], 4)
    assert seq.indices.tolist() == [0, 0, 4, 5]
    assert seq.valid_mask.tolist() == [False, False, True, True]


def test_fixed_sequence_truncates_to_most_recent():
    seq = build_fixed_sequence([1, 2, 3, 4, 5], 3)
    assert seq.indices.tolist() == [3, 4, 5]
    assert seq.valid_mask.all()


def test_fixed_sequence_rejects_empty_history():
    with pytest.raises(ValueError):
        build_fixed_sequence([], 3)


# ------------------------------
# statistics and artifacts
# ------------------------------

def test_corpus_statistics_of_filtered_fixture(fixture_tsv):
    log, _ = load_interactions(fixture_tsv)
    stats = corpus_statistics(kcore_filter(log, 5))
    assert (stats.users, stats.items, stats.actions) == (8, 6, 48)
    assert stats.avg_actions_per_user == 6.0
    assert stats.avg_actions_per_item == 8.0
    assert stats.sparsity == pytest.approx(0.0)


def test_split_and_catalog_jsonl_round_trip(tmp_path, fixture_tsv):
    log, catalog = load_interactions(fixture_tsv)
    split = leave_one_out_split(log, catalog)
    write_split_jsonl(split, tmp_path / "split.jsonl")
    write_catalog_jsonl(catalog, tmp_path / "catalog.jsonl")
    assert read_split_jsonl(tmp_path / "split.jsonl", len(catalog)).users == split.users
    assert read_catalog_jsonl(tmp_path / "catalog.jsonl").items == catalog.items
