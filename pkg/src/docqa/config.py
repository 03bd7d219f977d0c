"""Declarative run configuration.

One YAML file describes a full run: corpus and index locations, retrieval
depth, ablation flags, the five agent endpoints, the embedding sidecar, and
the judge. Unknown keys are rejected; validation happens before any network
call. Secrets are only ever named by environment variable.
"""

from __future__ import annotations

import random
from pathlib import Path

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import defaults
from .errors import ConfigInvalid
from .gateway import ChatGateway, GenerationParams, ModelEndpoint, SidecarClient
from .pipeline import AgentConfig, AgentRole, PipelineConfig, default_prompt


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EndpointSpec(_Strict):
    base_url: str
    model_name: str
    api_key_env: str | None = None
    timeout: float = Field(default=120.0, gt=0)
    max_retries: int = Field(default=2, ge=0)
    max_new_tokens: int = Field(default=defaults.DEFAULT_MAX_NEW_TOKENS, ge=1)
    temperature: float | None = None
    max_image_edge: int | None = Field(default=None, ge=1)
    # Provider-defined knobs passed through verbatim (e.g. image token budgets).
    extra_body: dict = Field(default_factory=dict)
    prompt_path: str | None = None

    def endpoint(self) -> ModelEndpoint:
        return ModelEndpoint(
            base_url=self.base_url,
            model_name=self.model_name,
            api_key_env=self.api_key_env,
            timeout=self.timeout,
            max_retries=self.max_retries,
            max_image_edge=self.max_image_edge,
            extra_body=dict(self.extra_body),
        )

    def params(self) -> GenerationParams:
        return GenerationParams(
            max_new_tokens=self.max_new_tokens, temperature=self.temperature
        )


class SidecarSpec(_Strict):
    base_url: str
    timeout: float = Field(default=120.0, gt=0)
    max_retries: int = Field(default=2, ge=0)


class RetrievalSpec(_Strict):
    k: int = Field(default=defaults.DEFAULT_TOP_K, ge=1)


class AblationSpec(_Strict):
    enable_general_critical: bool = True
    enable_text_agent: bool = True
    enable_image_agent: bool = True


class AgentsSpec(_Strict):
    general: EndpointSpec
    critical: EndpointSpec
    text: EndpointSpec
    image: EndpointSpec
    summarizing: EndpointSpec


class RunConfig(_Strict):
    corpus_dir: str
    index_dir: str
    image_dpi: int = Field(default=defaults.DEFAULT_RENDER_DPI, ge=1)
    seed: int = 0
    concurrency: int = Field(default=1, ge=1)
    retrieval: RetrievalSpec = Field(default_factory=RetrievalSpec)
    ablation: AblationSpec = Field(default_factory=AblationSpec)
    sidecar: SidecarSpec
    agents: AgentsSpec
    judge: EndpointSpec

    def pipeline_config(self) -> PipelineConfig:
        agent_configs = {}
        for role in AgentRole:
            spec: EndpointSpec = getattr(self.agents, role.value)
            prompt = (
                Path(spec.prompt_path).read_text(encoding="utf-8")
                if spec.prompt_path
                else default_prompt(role)
            )
            agent_configs[role] = AgentConfig(
                role=role,
                endpoint=spec.endpoint(),
                system_prompt=prompt,
                params=spec.params(),
            )
        try:
            return PipelineConfig(
                agents=agent_configs,
                k=self.retrieval.k,
                enable_general_critical=self.ablation.enable_general_critical,
                enable_text_agent=self.ablation.enable_text_agent,
                enable_image_agent=self.ablation.enable_image_agent,
            )
        except ValueError as exc:
            raise ConfigInvalid("ablation", str(exc)) from exc

    def chat_gateway(self) -> ChatGateway:
        return ChatGateway(rng=random.Random(self.seed))

    def sidecar_client(self) -> SidecarClient:
        return SidecarClient(
            base_url=self.sidecar.base_url,
            timeout=self.sidecar.timeout,
            max_retries=self.sidecar.max_retries,
        )


def load_config(path: Path | str) -> RunConfig:
    """Load and validate a YAML run config; raises ConfigInvalid with the
    dotted path of the first offending field."""
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigInvalid("<file>", str(exc)) from exc
    if not isinstance(raw, dict):
        raise ConfigInvalid("<root>", "config must be a mapping")
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        field_path = ".".join(str(p) for p in first["loc"]) or "<root>"
        raise ConfigInvalid(field_path, first["msg"]) from exc
