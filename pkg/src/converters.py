# converters.py

"""
Converters from public dataset dumps to the TSV schema read by
``corpus.load_interactions`` (user_id, item_id, title, timestamp).

Nothing is downloaded; point the converters at files you already have:

- MovieLens-1M: ``ratings.dat`` + ``movies.dat`` (``::`` separated, latin-1)
- Amazon 2014 category dumps: ``reviews_<Cat>.json(.gz)`` + ``meta_<Cat>.json(.gz)``
- Steam: ``steam_reviews.json(.gz)`` + ``steam_games.json(.gz)``

The Amazon meta and Steam files are one Python-literal dict per line, not JSON.
"""

import ast
import gzip
import json
from pathlib import Path
from typing import Callable, Iterator

import pandas as pd

from logger import logger

TSV_COLUMNS = ["user_id", "item_id", "title", "timestamp"]


def _open_text(path: Path):
    path = Path(path)
    return gzip.open(path, "rt", encoding="utf-8") if path.suffix == ".gz" else open(path, "r", encoding="utf-8")


def _iter_records(path: Path, parse: Callable[[str], dict]) -> Iterator[dict]:
    with _open_text(path) as f:
        for line in f:
            line = line.strip()
            if line:
                yield parse(line)


def _parse_loose(line: str) -> dict:
    try:
        return json.loads(line)
    except json.JSONDecodeError:
        return ast.literal_eval(line)


def _clean_titles(frame: pd.DataFrame) -> pd.DataFrame:
    # tabs and newlines would break the TSV schema
    frame["title"] = frame["title"].astype(str).str.replace(r"[\t\r\n]+", " ", regex=True).str.strip()
    return frame[frame["title"] != ""]


def write_interactions_tsv(frame: pd.DataFrame, out_path: Path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    frame = frame[TSV_COLUMNS].sort_values(["user_id", "timestamp"], kind="stable")
    # written by hand: titles keep literal quotes, which the csv writer would escape
    with open(out_path, "w", encoding="utf-8") as f:
        f.write("\t".join(TSV_COLUMNS) + "\n")
        for row in frame.itertuples(index=False):
            f.write(f"{row.user_id}\t{row.item_id}\t{row.title}\t{int(row.timestamp)}\n")
    logger.info(f"📝 Wrote {len(frame)} interactions ({frame['user_id'].nunique()} users) to {out_path}")
    return out_path


def convert_movielens(ratings_path: Path, movies_path: Path, out_path: Path) -> Path:
    ratings = pd.read_csv(
        ratings_path, sep="::", engine="python", encoding="latin-1",
        names=["user_id", "item_id", "rating", "timestamp"],
    )
    movies = pd.read_csv(
        movies_path, sep="::", engine="python", encoding="latin-1",
        names=["item_id", "title", "genres"],
    )
    frame = ratings.merge(movies[["item_id", "title"]], on="item_id", how="inner")
    frame = frame.astype({"user_id": str, "item_id": str})
    return write_interactions_tsv(_clean_titles(frame), out_path)


def convert_amazon(reviews_path: Path, meta_path: Path, out_path: Path) -> Path:
    reviews = pd.DataFrame(
        {"user_id": r["reviewerID"], "item_id": r["asin"], "timestamp": int(r["unixReviewTime"])}
        for r in _iter_records(reviews_path, _parse_loose)
    )
    meta = pd.DataFrame(
        {"item_id": m["asin"], "title": m.get("title", "")}
        for m in _iter_records(meta_path, _parse_loose)
    )
    frame = reviews.merge(meta, on="item_id", how="inner")
    return write_interactions_tsv(_clean_titles(frame), out_path)


def convert_steam(reviews_path: Path, games_path: Path, out_path: Path) -> Path:
    reviews = pd.DataFrame(
        {"user_id": r["username"], "item_id": str(r["product_id"]), "date": r["date"]}
        for r in _iter_records(reviews_path, _parse_loose)
    )
    reviews["timestamp"] = pd.to_datetime(reviews["date"]).astype("int64") // 10**9
    games = pd.DataFrame(
        {"item_id": str(g["id"]), "title": g.get("app_name") or g.get("title", "")}
        for g in _iter_records(games_path, _parse_loose)
        if "id" in g
    ).drop_duplicates("item_id")
    frame = reviews.merge(games, on="item_id", how="inner")
    return write_interactions_tsv(_clean_titles(frame), out_path)


CONVERTERS = {
    "movielens": convert_movielens,
    "amazon": convert_amazon,
    "steam": convert_steam,
}


if __name__ == "__main__":
    import argparse

    parser = argparse.ArgumentParser(description="Convert a public dataset dump to the interactions TSV.")
    parser.add_argument("dataset", choices=list(CONVERTERS))
    parser.add_argument("interactions", type=Path, help="ratings / reviews file")
    parser.add_argument("metadata", type=Path, help="movies / meta / games file")
    parser.add_argument("out", type=Path, help="output TSV path")
    args = parser.parse_args()
    CONVERTERS[args.dataset](args.interactions, args.metadata, args.out)
