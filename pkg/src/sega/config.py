"""Run configuration.

Defaults are the published implementation values. Precedence when resolving a
run: model defaults < JSON config file < command-line flags.
"""

import json
import os
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from sega.errors import ConfigError

TemplateKind = Literal["default", "short", "topic", "emotion", "tandem"]
Objective = Literal["contrastive", "multilabel"]

EMB_ENDPOINT_ENV = "SEGA_EMB_ENDPOINT"
LLM_ENDPOINT_ENV = "SEGA_LLM_ENDPOINT"
LLM_API_KEY_ENV = "SEGA_LLM_API_KEY"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ProviderConfig(_Section):
    """One text-embedding backend; text and prompt roles are configured separately."""

    backend: Literal["file", "stub", "http"] = "stub"
    role: Literal["text", "prompt"] = "text"
    path: Path | None = None
    endpoint: str | None = None
    cache_path: Path | None = None
    seed: int = 0
    dim: int = Field(768, gt=0)
    max_words: int = Field(50, gt=0)

    @model_validator(mode="after")
    def _backend_settings(self) -> "ProviderConfig":
        if self.backend == "file" and self.path is None:
            raise ValueError(f"{self.role} provider: file backend needs 'path'")
        if self.backend == "http" and not (
            self.endpoint or os.getenv(EMB_ENDPOINT_ENV)
        ):
            raise ValueError(
                f"{self.role} provider: http backend needs 'endpoint' "
                f"or {EMB_ENDPOINT_ENV}"
            )
        return self


class LLMConfig(_Section):
    backend: Literal["none", "http", "anthropic"] = "none"
    endpoint: str | None = None
    model: str = "claude-sonnet-4-20250514"
    temperature: float = Field(0.0, ge=0.0)
    max_tokens: int = Field(512, gt=0)
    max_workers: int = Field(4, gt=0)
    posts_per_user: int = Field(10, gt=0)


class ModelConfig(_Section):
    d_text: int = Field(768, gt=0)
    d_h: int = Field(32, gt=0)
    d_out: int = Field(128, gt=0)
    d_u: int = Field(64, gt=0)
    d_a: int = Field(64, gt=0)
    layers: int = Field(2, ge=1)
    heads: int = Field(4, ge=1)
    dropout: float = Field(0.3, ge=0.0, lt=1.0)
    leaky_slope: float = Field(0.01, ge=0.0)
    max_tweets: int = Field(20, gt=0)

    @model_validator(mode="after")
    def _heads_divide(self) -> "ModelConfig":
        if self.d_out % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide d_out ({self.d_out})")
        return self


class PretrainConfig(_Section):
    tau: float = Field(0.1, gt=0.0)
    k_neg: int = Field(100, ge=0)
    epochs: int = Field(100, ge=0)
    batch_size: int = Field(2048, gt=0)
    lr: float = Field(1e-3, ge=0.0)
    template: TemplateKind = "default"
    objective: Objective = "contrastive"
    prompt_encoder: Literal["prompt", "text"] = "prompt"
    prefs_path: Path | None = None


class FinetuneConfig(_Section):
    lam: float = Field(3e-5, ge=0.0)
    epochs: int = Field(150, ge=0)
    lr: float = Field(1e-3, ge=0.0)
    batch_size: int = Field(2048, gt=0)
    init_checkpoint: Path | None = None


class AblationConfig(_Section):
    no_list: bool = False
    no_pretrain: bool = False


class RunConfig(_Section):
    dataset: Path | None = None
    out: Path | None = None
    seed: int = Field(0, ge=0)
    text_provider: ProviderConfig = Field(default_factory=ProviderConfig)
    prompt_provider: ProviderConfig = Field(
        default_factory=lambda: ProviderConfig(role="prompt", seed=1)
    )
    llm: LLMConfig = Field(default_factory=LLMConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    pretrain: PretrainConfig = Field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = Field(default_factory=FinetuneConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)

    @model_validator(mode="before")
    @classmethod
    def _provider_roles(cls, data: Any) -> Any:
        if isinstance(data, dict):
            for key, role, seed in (
                ("text_provider", "text", 0),
                ("prompt_provider", "prompt", 1),
            ):
                section = data.get(key)
                if isinstance(section, dict):
                    data = {**data, key: {"role": role, "seed": seed, **section}}
        return data

    @model_validator(mode="after")
    def _consistent(self) -> "RunConfig":
        if self.text_provider.role != "text":
            raise ValueError("text_provider must have role 'text'")
        if self.prompt_provider.role != "prompt":
            raise ValueError("prompt_provider must have role 'prompt'")
        if self.ablation.no_pretrain and self.finetune.init_checkpoint is not None:
            raise ValueError(
                "ablation.no_pretrain contradicts finetune.init_checkpoint: "
                "the no-pretrain arm always starts from fresh parameters"
            )
        return self


def _merge(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict):
            current = merged.get(key)
            nested = _merge(current if isinstance(current, dict) else {}, value)
            if nested or key in merged:
                merged[key] = nested
        else:
            merged[key] = value
    return merged


def load_config(
    path: Path | str | None = None, overrides: dict[str, Any] | None = None
) -> RunConfig:
    """Resolve a RunConfig from an optional JSON file plus flag overrides.

    Args:
        path: JSON file with sections mirroring RunConfig.
        overrides: Nested dict of flag values; ``None`` leaves are ignored.

    Returns:
        Validated configuration.

    Raises:
        ConfigError: Unreadable file, unknown keys, or contradictory values.
    """
    data: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    data = _merge(data, overrides or {})
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e
