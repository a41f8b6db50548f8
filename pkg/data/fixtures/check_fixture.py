# check_fixture.py

"""
Independent re-derivation of the expected split for interactions_10users.tsv.

Plain list slicing with no project imports, so it can serve as an oracle for
corpus.kcore_filter + corpus.leave_one_out_split.

    python data/fixtures/check_fixture.py
"""

import json
import sys
from collections import Counter
from pathlib import Path

HERE = Path(__file__).resolve().parent


def read_rows(path):
    rows = []
    with open(path, encoding="utf-8") as f:
        next(f)  # header
        for order, line in enumerate(f):
            user, item, _title, ts = line.rstrip("\n").split("\t")
            rows.append((user, item, int(ts), order))
    return rows


def kcore(rows, k):
    while True:
        users = Counter(r[0] for r in rows)
        kept = [r for r in rows if users[r[0]] >= k]
        items = Counter(r[1] for r in kept)
        kept = [r for r in kept if items[r[1]] >= k]
        if len(kept) == len(rows):
            return kept
        rows = kept


def derive(path, k=5):
    raw = read_rows(path)
    rows = kcore(raw, k)
    catalog = list(dict.fromkeys(r[1] for r in rows))
    index = {item: i for i, item in enumerate(catalog, start=1)}
    split = {}
    for user in dict.fromkeys(r[0] for r in rows):
        events = sorted((r for r in rows if r[0] == user), key=lambda r: (r[2], r[3]))
        sequence = [index[r[1]] for r in events]
        split[user] = {"train": sequence[:-2], "valid": sequence[-2], "test": sequence[-1]}
    return {
        "min_interactions": k,
        "raw": {"users": len({r[0] for r in raw}), "items": len({r[1] for r in raw}), "actions": len(raw)},
        "filtered": {"users": len(split), "items": len(catalog), "actions": len(rows)},
        "removed_users": sorted({r[0] for r in raw} - set(split)),
        "removed_items": sorted({r[1] for r in raw} - set(catalog)),
        "counts": {
            "train": sum(len(s["train"]) for s in split.values()),
            "valid": len(split),
            "test": len(split),
        },
        "catalog": catalog,
        "split": split,
    }


if __name__ == "__main__":
    derived = derive(HERE / "interactions_10users.tsv")
    with open(HERE / "interactions_10users.expected.json", encoding="utf-8") as f:
        expected = json.load(f)
    if derived != expected:
        print(json.dumps(derived, indent=2))
        sys.exit("fixture does not match interactions_10users.expected.json")
    print("fixture OK")
