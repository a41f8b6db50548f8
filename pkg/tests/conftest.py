# tests/conftest.py
import sys
import pytest
from pathlib import Path

# Add src/ to Python path
ROOT_DIR = Path(__file__).resolve().parents[1]
SRC_DIR = ROOT_DIR / "src"
sys.path.insert(0, str(ROOT_DIR))
sys.path.insert(0, str(SRC_DIR))

from paths import FIXTURES_DIR  # noqa: E402

FIXTURE_TSV = FIXTURES_DIR / "interactions_10users.tsv"
FIXTURE_EXPECTED = FIXTURES_DIR / "interactions_10users.expected.json"


@pytest.fixture
def fixture_tsv():
    return FIXTURE_TSV


@pytest.fixture
def small_catalog():
    from corpus import CatalogItem, ItemCatalog

    titles = ["Space Action Quest", "Pirate Puzzle Saga", "Space Racing League",
              "Medieval Strategy Empire", "Space Horror Station"]
    return ItemCatalog([CatalogItem(i, f"i{i}", t) for i, t in enumerate(titles, start=1)])


@pytest.fixture
def mock_client():
    from llm_clients import MockLlmClient

    return MockLlmClient(seed=3, max_retries=2)


@pytest.fixture
def make_config(tmp_path):
    """RunConfig writing into tmp_path, with extra ``--set`` style overrides."""
    from config import build_config

    def _make(*overrides, seed=None):
        base = [f'output_dir="{tmp_path.as_posix()}/run"', "encoder.dim=16", "alignment.d_k=8", "alignment.h=2"]
        return build_config({}, [*base, *overrides], seed=seed)

    return _make


@pytest.fixture
def synthetic_tsv(tmp_path):
    """Small synthetic corpus with enough items for the 100-negative protocol."""
    from synthetic import generate_synthetic_corpus, write_synthetic_corpus

    rows = generate_synthetic_corpus(num_users=30, num_items=150, min_length=6, max_length=10, seed=1)
    return write_synthetic_corpus(rows, tmp_path / "synthetic.tsv")


@pytest.fixture
def random_split():
    """12 users over 130 items; every user has train, valid and test items."""
    import numpy as np

    from corpus import SplitDataset, UserSplit

    rng = np.random.default_rng(0)
    users = {}
    for u in range(12):
        items = rng.choice(np.arange(1, 131), size=int(rng.integers(5, 9)), replace=False).tolist()
        users[f"u{u:02d}"] = UserSplit(train=tuple(items[:-2]), valid=items[-2], test=items[-1])
    return SplitDataset(users, item_count=130)


@pytest.fixture
def item_matrix():
    """(131, 8) float32 title matrix with a zero pad row."""
    import numpy as np

    M = np.random.default_rng(1).normal(size=(131, 8)).astype(np.float32)
    M[0] = 0
    return M
