# config.py

"""
Run configuration: a nested TOML file validated by pydantic models.

Defaults reproduce the reference setup (d=384, h=4, d_k=384, m=5, lr=0.001,
batch 128, dropout 0.5, n=50). ``--set a.b=value`` overrides are applied to the
raw mapping before validation, so the same rules hold for files and flags.
"""

import copy
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from errors import ConfigurationError
from utils import canonical_json, stable_hash

LANE_VERSION = "0.1.0"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CorpusConfig(_Section):
    input_path: str = "data/fixtures/interactions_10users.tsv"
    format: Optional[Literal["tsv", "jsonl"]] = None
    min_interactions: int = Field(default=5, ge=1)


class EncoderConfig(_Section):
    name: Literal["mock", "sentence-transformers", "remote"] = "mock"
    model: str = "sentence-transformers/all-MiniLM-L6-v2"
    dim: int = Field(default=384, ge=1)
    seed: int = 0
    cache_dir: Optional[str] = None
    batch_size: int = Field(default=64, ge=1)


class PreferencesConfig(_Section):
    m: int = Field(default=5, ge=1)


class LlmConfig(_Section):
    name: Literal["mock", "openai"] = "mock"
    model: str = "gpt-3.5-turbo"
    api_key_env: str = "OPENAI_API_KEY"
    rate_limit: float = Field(default=60.0, gt=0, description="calls per minute")
    max_retries: int = Field(default=2, ge=1, description="total calls per prompt")
    timeout: float = Field(default=60.0, gt=0)
    seed: int = 0


class SequenceConfig(_Section):
    n: int = Field(default=50, ge=1)


class BackboneConfig(_Section):
    variant: Literal["self_attention", "gated_recurrent"] = "self_attention"
    blocks: int = Field(default=2, ge=1)
    heads: int = Field(default=1, ge=1)
    dropout: float = Field(default=0.5, ge=0.0, lt=1.0)


class AlignmentConfig(_Section):
    enabled: bool = True
    h: int = Field(default=4, ge=1)
    d_k: int = Field(default=384, ge=1)
    dropout: Optional[float] = Field(default=None, ge=0.0, lt=1.0)
    layer_norm_eps: float = Field(default=1e-8, gt=0.0)


class TrainerConfig(_Section):
    learning_rate: float = Field(default=0.001, ge=0.0)
    batch_size: int = Field(default=128, ge=1)
    max_epochs: int = Field(default=200, ge=1)
    patience: int = Field(default=20, ge=1)
    freeze_M: bool = False
    adam_betas: List[float] = Field(default_factory=lambda: [0.9, 0.999])
    adam_eps: float = 1e-8


class EvaluatorConfig(_Section):
    ks: List[int] = Field(default_factory=lambda: [5, 10])
    num_negatives: int = Field(default=100, ge=1)
    per_user_csv: bool = False


class ExplainConfig(_Section):
    max_users: int = Field(default=20, ge=1)


class SweepConfig(_Section):
    parameter: str = "preferences.m"
    values: List[Any] = Field(default_factory=lambda: [1, 3, 5, 10, 15])


class SyntheticConfig(_Section):
    num_users: int = Field(default=200, ge=1)
    num_items: int = Field(default=50, ge=3)
    min_length: int = Field(default=8, ge=3)
    max_length: int = Field(default=20, ge=3)


class RunConfig(_Section):
    seed: int = 42
    output_dir: str = "outputs/run"
    corpus: CorpusConfig = Field(default_factory=CorpusConfig)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    preferences: PreferencesConfig = Field(default_factory=PreferencesConfig)
    llm: LlmConfig = Field(default_factory=LlmConfig)
    sequence: SequenceConfig = Field(default_factory=SequenceConfig)
    backbone: BackboneConfig = Field(default_factory=BackboneConfig)
    alignment: AlignmentConfig = Field(default_factory=AlignmentConfig)
    trainer: TrainerConfig = Field(default_factory=TrainerConfig)
    evaluator: EvaluatorConfig = Field(default_factory=EvaluatorConfig)
    explain: ExplainConfig = Field(default_factory=ExplainConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    synthetic: SyntheticConfig = Field(default_factory=SyntheticConfig)

    @model_validator(mode="after")
    def _check_backbone_heads(self) -> "RunConfig":
        if self.backbone.variant == "self_attention" and self.encoder.dim % self.backbone.heads:
            raise ValueError(
                f"encoder.dim={self.encoder.dim} not divisible by backbone.heads={self.backbone.heads}"
            )
        if 10 not in self.evaluator.ks:
            # early stopping and checkpoint selection read NDCG@10
            self.evaluator.ks = sorted(set(self.evaluator.ks) | {10})
        return self

    @property
    def alignment_dropout(self) -> float:
        if self.alignment.dropout is None:
            return self.backbone.dropout
        return self.alignment.dropout


def parse_override(override: str) -> tuple[str, Any]:
    """Split ``a.b=value``; the value is read as a TOML literal, falling back to a plain string."""
    if "=" not in override:
        raise ConfigurationError(f"override {override!r} is not of the form key=value")
    key, raw = override.split("=", 1)
    key, raw = key.strip(), raw.strip()
    if not key:
        raise ConfigurationError(f"override {override!r} has an empty key")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key, value


def set_dotted(mapping: Dict[str, Any], dotted_key: str, value: Any) -> None:
    node = mapping
    parts = dotted_key.split(".")
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigurationError(f"cannot set {dotted_key}: {part} is not a table")
        node = child
    node[parts[-1]] = value


def get_dotted(config: RunConfig, dotted_key: str) -> Any:
    node: Any = config
    for part in dotted_key.split("."):
        node = getattr(node, part)
    return node


def build_config(raw: Dict[str, Any], overrides: Sequence[str] = (), seed: Optional[int] = None) -> RunConfig:
    data = copy.deepcopy(raw)
    for override in overrides:
        key, value = parse_override(override)
        set_dotted(data, key, value)
    if seed is not None:
        data["seed"] = seed
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid configuration:\n{exc}") from exc


def load_config(path: Optional[Path], overrides: Sequence[str] = (), seed: Optional[int] = None) -> RunConfig:
    """Read a TOML config (or defaults when ``path`` is None) and apply CLI overrides."""
    raw: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            with open(path, "rb") as f:
                raw = tomllib.load(f)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
    return build_config(raw, overrides, seed)


def with_override(config: RunConfig, dotted_key: str, value: Any) -> RunConfig:
    """Copy of ``config`` with one dotted key replaced (used by the sweep)."""
    data = config.model_dump()
    set_dotted(data, dotted_key, value)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid sweep value {dotted_key}={value!r}:\n{exc}") from exc


def config_hash(config: RunConfig) -> str:
    return stable_hash(canonical_json(config.model_dump(mode="json")))
