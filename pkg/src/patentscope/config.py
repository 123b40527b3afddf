"""Run configuration: one YAML/JSON file, validated strictly, secrets via env-var names."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ProviderSection(_Strict):
    mode: Literal["live", "scripted"] = "scripted"
    endpoint: Optional[str] = None
    model: str = "gpt-4o"
    api_key_env: Optional[str] = None
    timeout: float = Field(60.0, gt=0)
    max_retries: int = Field(3, ge=0)
    temperature: float = 0.0
    script: Optional[str] = None

    @model_validator(mode="after")
    def _check_mode(self):
        if self.mode == "live" and not (self.endpoint and self.api_key_env):
            raise ValueError("live provider needs endpoint and api_key_env")
        if self.mode == "scripted" and not self.script:
            raise ValueError("scripted provider needs a script path")
        return self


class EmbeddingSection(_Strict):
    mode: Literal["local", "live"] = "local"
    dim: int = Field(4096, gt=0)
    endpoint: Optional[str] = None
    model: Optional[str] = None
    api_key_env: Optional[str] = None

    @model_validator(mode="after")
    def _check_mode(self):
        if self.mode == "live" and not self.endpoint:
            raise ValueError("live embedding needs an endpoint")
        return self


class ContextSection(_Strict):
    strategy: Literal["compress", "transform"] = "compress"
    target_ratio: float = Field(0.5, gt=0, le=1)
    max_tokens_per_message: int = Field(6000, gt=0)
    max_total_tokens: int = Field(24000, gt=0)
    max_history_messages: int = Field(20, gt=0)

    @model_validator(mode="after")
    def _check_budget(self):
        if self.max_tokens_per_message > self.max_total_tokens:
            raise ValueError("max_tokens_per_message cannot exceed max_total_tokens")
        return self


class ToolsSection(_Strict):
    mode: Literal["fixture", "live"] = "fixture"
    patents_fixture: Optional[str] = None
    papers_fixture: Optional[str] = None
    patents_base_url: Optional[str] = None
    papers_base_url: Optional[str] = "https://api.semanticscholar.org/graph/v1"
    patents_key_env: Optional[str] = None
    papers_key_env: Optional[str] = None
    limit: int = Field(5, gt=0)


class IndexSection(_Strict):
    path: str = "index.evp"
    chunk_size: int = Field(512, gt=0)
    overlap: int = Field(64, ge=0)

    @model_validator(mode="after")
    def _check_chunks(self):
        if self.overlap >= self.chunk_size:
            raise ValueError("overlap must be smaller than chunk_size")
        return self


class ConverterSection(_Strict):
    command_template: Optional[str] = None


class ReportSection(_Strict):
    output_dir: str = "out"
    converter: ConverterSection = ConverterSection()


class ExtractorSection(_Strict):
    mode: Literal["builtin", "command"] = "builtin"
    command_template: Optional[str] = None

    @field_validator("command_template")
    @classmethod
    def _placeholders(cls, v):
        if v is not None and "{input}" not in v:
            raise ValueError("command_template must contain {input}")
        return v


class RunConfig(_Strict):
    provider: ProviderSection = ProviderSection(mode="scripted", script="script.json")
    embedding: EmbeddingSection = EmbeddingSection()
    context: ContextSection = ContextSection()
    tools: ToolsSection = ToolsSection()
    index: IndexSection = IndexSection()
    report: ReportSection = ReportSection()
    extractor: ExtractorSection = ExtractorSection()
    stopwords: Optional[str] = None
    max_turns: int = Field(4, gt=0)

    def resolve_paths(self, base: Path) -> "RunConfig":
        """Make relative file paths relative to the config file's directory."""

        def fix(p: Optional[str]) -> Optional[str]:
            if p is None:
                return None
            path = Path(p).expanduser()
            return str(path if path.is_absolute() else (base / path))

        data = self.model_copy(deep=True)
        data.provider.script = fix(data.provider.script)
        data.tools.patents_fixture = fix(data.tools.patents_fixture)
        data.tools.papers_fixture = fix(data.tools.papers_fixture)
        data.index.path = fix(data.index.path)
        data.report.output_dir = fix(data.report.output_dir)
        data.stopwords = fix(data.stopwords)
        return data

    def check_env(self, which: tuple[str, ...] = ("provider", "embedding", "tools")) -> None:
        missing = []
        if "provider" in which and self.provider.mode == "live":
            missing += [n for n in [self.provider.api_key_env] if n and not os.environ.get(n)]
        if "embedding" in which and self.embedding.mode == "live" and self.embedding.api_key_env:
            missing += [n for n in [self.embedding.api_key_env] if not os.environ.get(n)]
        if "tools" in which and self.tools.mode == "live":
            missing += [n for n in (self.tools.patents_key_env, self.tools.papers_key_env) if n and not os.environ.get(n)]
        if missing:
            raise ConfigError(f"missing environment variables: {', '.join(missing)}")


def load_config(path: Union[str, Path, None]) -> RunConfig:
    if path is None:
        return RunConfig().resolve_paths(Path.cwd())
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text("utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"{path}: invalid configuration:\n{exc}") from exc
    return cfg.resolve_paths(path.parent.resolve())
