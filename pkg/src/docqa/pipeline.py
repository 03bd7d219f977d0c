"""Five-agent answering pipeline.

For one question the engine retrieves dual-modality context, then runs up
to five chat agents in a fixed order: a general agent drafts a preliminary
answer from both modalities, a critical agent distills hint strings for
each modality, text and image agents answer within their modality guided
by those hints, and a summarizing agent synthesizes the final answer.

Ablation flags disable the text agent, the image agent, or the
general+critical pair; the call order is always the enabled subset of
[general, critical, text, image, summarizing].
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources

from .defaults import DEFAULT_TOP_K
from .errors import DocQAError, ParseMiss
from .gateway import ChatMessage, GenerationParams, ImagePart, ModelEndpoint, TextPart, image_part_for
from .ingest import Corpus, PageImage, TextSegment
from .retrieval import EmbeddingClient, ImageIndex, RetrievalResult, TextIndex, retrieve
from .structured import extract_answer, extract_hints

logger = logging.getLogger(__name__)


class AgentRole(str, Enum):
    GENERAL = "general"
    CRITICAL = "critical"
    TEXT = "text"
    IMAGE = "image"
    SUMMARIZING = "summarizing"


def default_prompt(role: AgentRole) -> str:
    """The shipped system prompt for a role."""
    return resources.files("docqa.prompts").joinpath(f"{role.value}.txt").read_text("utf-8")


@dataclass
class AgentConfig:
    role: AgentRole
    endpoint: ModelEndpoint
    system_prompt: str = ""
    params: GenerationParams = field(default_factory=GenerationParams)

    def __post_init__(self):
        if not self.system_prompt:
            self.system_prompt = default_prompt(self.role)


@dataclass
class PipelineConfig:
    agents: dict[AgentRole, AgentConfig]
    k: int = DEFAULT_TOP_K
    enable_general_critical: bool = True
    enable_text_agent: bool = True
    enable_image_agent: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not (self.enable_text_agent or self.enable_image_agent):
            raise ValueError("at least one of the text/image agents must be enabled")

    def enabled_roles(self) -> list[AgentRole]:
        roles = []
        if self.enable_general_critical:
            roles += [AgentRole.GENERAL, AgentRole.CRITICAL]
        if self.enable_text_agent:
            roles.append(AgentRole.TEXT)
        if self.enable_image_agent:
            roles.append(AgentRole.IMAGE)
        roles.append(AgentRole.SUMMARIZING)
        return roles

    def prompt_hashes(self) -> dict[str, str]:
        return {
            role.value: hashlib.sha256(self.agents[role].system_prompt.encode("utf-8")).hexdigest()
            for role in self.enabled_roles()
        }


@dataclass
class CriticalInfo:
    text_hint: str
    image_hint: str
    fallback: bool = False


@dataclass
class CallRecord:
    role: str
    endpoint: str
    latency: float
    retry_count: int


@dataclass
class QATranscript:
    question: str
    retrieval: RetrievalResult | None = None
    answers: dict[str, str] = field(default_factory=dict)
    critical: CriticalInfo | None = None
    final: str | None = None
    summarizer_fallback: bool = False
    call_log: list[CallRecord] = field(default_factory=list)
    prompt_hashes: dict[str, str] = field(default_factory=dict)
    failure: str | None = None

    def to_dict(self) -> dict:
        retrieval = None
        if self.retrieval is not None:
            retrieval = {
                "k": self.retrieval.k,
                "text_hits": [
                    {"key": list(seg.key), "score": score, "content": seg.content}
                    for seg, score in self.retrieval.text_hits
                ],
                "image_hits": [
                    {"key": list(img.key), "score": score, "file": str(img.file_ref)}
                    for img, score in self.retrieval.image_hits
                ],
                "text_index_empty": self.retrieval.text_index_empty,
                "image_index_empty": self.retrieval.image_index_empty,
            }
        return {
            "question": self.question,
            "retrieval": retrieval,
            "answers": dict(self.answers),
            "critical": None
            if self.critical is None
            else {
                "text_hint": self.critical.text_hint,
                "image_hint": self.critical.image_hint,
                "fallback": self.critical.fallback,
            },
            "final": self.final,
            "summarizer_fallback": self.summarizer_fallback,
            "call_log": [
                {
                    "role": c.role,
                    "endpoint": c.endpoint,
                    "latency": c.latency,
                    "retry_count": c.retry_count,
                }
                for c in self.call_log
            ],
            "prompt_hashes": dict(self.prompt_hashes),
            "failure": self.failure,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)


# --- prompt assembly ---------------------------------------------------------

_CRITICAL_FORMAT_REMINDER = (
    'Reminder: respond with exactly one JSON dictionary of the form '
    '{"text": "...", "image": "..."} and nothing else.'
)


def _segments_block(text_hits: list[tuple[TextSegment, float]]) -> str:
    lines = []
    for seg, _score in text_hits:
        doc_id, page_index, segment_index = seg.key
        lines.append(f"[{doc_id} p{page_index} s{segment_index}]\n{seg.content}")
    return "\n\n".join(lines)


def _image_parts(
    image_hits: list[tuple[PageImage, float]], max_edge: int | None
) -> list[ImagePart]:
    return [image_part_for(img.file_ref, max_edge) for img, _score in image_hits]


def _user_message(text: str, images: list[ImagePart]) -> ChatMessage:
    return ChatMessage(role="user", parts=(TextPart(text), *images))


def _call(gateway, cfg: AgentConfig, messages: list[ChatMessage], call_log: list[CallRecord]) -> str:
    try:
        result = gateway.chat_complete(cfg.endpoint, messages, cfg.params)
    except DocQAError as exc:
        exc.args = (f"[{cfg.role.value} agent] {exc}",)
        raise
    call_log.append(
        CallRecord(
            role=cfg.role.value,
            endpoint=cfg.endpoint.model_name,
            latency=result.latency,
            retry_count=result.retry_count,
        )
    )
    return result.text


def run_general(
    gateway,
    question: str,
    text_hits: list[tuple[TextSegment, float]],
    image_hits: list[tuple[PageImage, float]],
    cfg: AgentConfig,
    call_log: list[CallRecord],
) -> str:
    """Preliminary answer from both modalities at once."""
    body = f"Question: {question}\n\nRetrieved text segments:\n"
    body += _segments_block(text_hits) if text_hits else "(none)"
    body += "\n\nThe retrieved page images follow."
    messages = [
        ChatMessage.text("system", cfg.system_prompt),
        _user_message(body, _image_parts(image_hits, cfg.endpoint.max_image_edge)),
    ]
    return _call(gateway, cfg, messages, call_log)


def parse_critical(reply: str) -> CriticalInfo:
    """Pull the text/image hint pair out of a critical-agent reply."""
    hints = extract_hints(reply)
    if hints is None:
        raise ParseMiss(f"no JSON object with hints in reply: {reply[:200]!r}")
    return CriticalInfo(text_hint=hints[0], image_hint=hints[1])


def run_critical(
    gateway,
    question: str,
    text_hits: list[tuple[TextSegment, float]],
    image_hits: list[tuple[PageImage, float]],
    preliminary_answer: str,
    cfg: AgentConfig,
    call_log: list[CallRecord],
) -> CriticalInfo:
    """One call extracting both hints; retries once on a format miss,
    then falls back to using the raw reply as both hints."""
    body = f"Question: {question}\n\nRetrieved text segments:\n"
    body += _segments_block(text_hits) if text_hits else "(none)"
    body += "\n\nThe retrieved page images follow."
    body += f"\n\nPreliminary answer: {preliminary_answer}"
    images = _image_parts(image_hits, cfg.endpoint.max_image_edge)
    system = ChatMessage.text("system", cfg.system_prompt)

    reply = _call(gateway, cfg, [system, _user_message(body, images)], call_log)
    try:
        return parse_critical(reply)
    except ParseMiss:
        logger.warning("critical reply unparseable, retrying with format reminder")
    retry_body = body + "\n\n" + _CRITICAL_FORMAT_REMINDER
    reply = _call(gateway, cfg, [system, _user_message(retry_body, images)], call_log)
    try:
        return parse_critical(reply)
    except ParseMiss:
        logger.warning("critical reply unparseable after retry, using raw-text fallback")
        return CriticalInfo(text_hint=reply, image_hint=reply, fallback=True)


def _hint_section(hint: str) -> str:
    return f"\n\nCritical information to focus on:\n{hint}" if hint else ""


def run_text_agent(
    gateway,
    question: str,
    text_hits: list[tuple[TextSegment, float]],
    text_hint: str,
    cfg: AgentConfig,
    call_log: list[CallRecord],
) -> str:
    """Text-only answer over the retrieved segments; hint section omitted when empty."""
    body = f"Question: {question}\n\nText segments:\n"
    body += _segments_block(text_hits) if text_hits else "(none)"
    body += _hint_section(text_hint)
    messages = [ChatMessage.text("system", cfg.system_prompt), ChatMessage.text("user", body)]
    return _call(gateway, cfg, messages, call_log)


def run_image_agent(
    gateway,
    question: str,
    image_hits: list[tuple[PageImage, float]],
    image_hint: str,
    cfg: AgentConfig,
    call_log: list[CallRecord],
) -> str:
    """Image-grounded answer over the retrieved pages; hint section omitted when empty."""
    body = f"Question: {question}\n\nThe retrieved page images follow."
    body += _hint_section(image_hint)
    messages = [
        ChatMessage.text("system", cfg.system_prompt),
        _user_message(body, _image_parts(image_hits, cfg.endpoint.max_image_edge)),
    ]
    return _call(gateway, cfg, messages, call_log)


_AGENT_LABELS = {
    AgentRole.GENERAL: "General Agent",
    AgentRole.TEXT: "Text Agent",
    AgentRole.IMAGE: "Image Agent",
}


def run_summarizer(
    gateway,
    question: str,
    answers: dict[AgentRole, str],
    cfg: AgentConfig,
    call_log: list[CallRecord],
) -> tuple[str, bool]:
    """Synthesize the final answer from the available agent answers.

    Returns (final_answer, fallback_flag); on a format miss the raw reply
    is used verbatim and flagged.
    """
    if not answers:
        raise ValueError("summarizer needs at least one agent answer")
    body = f"Question: {question}\n"
    for role in (AgentRole.GENERAL, AgentRole.TEXT, AgentRole.IMAGE):
        if role in answers:
            body += f"\n{_AGENT_LABELS[role]} answer:\n{answers[role]}\n"
    messages = [ChatMessage.text("system", cfg.system_prompt), ChatMessage.text("user", body)]
    reply = _call(gateway, cfg, messages, call_log)
    answer = extract_answer(reply)
    if answer is None:
        logger.warning("summarizer reply had no Answer object, using raw reply")
        return reply, True
    return answer, False


def answer_question(
    gateway,
    embedder: EmbeddingClient,
    question: str,
    corpus: Corpus,
    text_index: TextIndex,
    image_index: ImageIndex,
    config: PipelineConfig,
) -> QATranscript:
    """Run retrieval and the enabled agents for one question.

    Any unrecovered gateway error aborts the question; the transcript is
    returned with its ``failure`` field set instead of raising.
    """
    transcript = QATranscript(question=question, prompt_hashes=config.prompt_hashes())
    try:
        retrieval = retrieve(question, corpus, text_index, image_index, config.k, embedder)
        transcript.retrieval = retrieval

        answers: dict[AgentRole, str] = {}
        text_hint, image_hint = "", ""
        if config.enable_general_critical:
            a_g = run_general(
                gateway, question, retrieval.text_hits, retrieval.image_hits,
                config.agents[AgentRole.GENERAL], transcript.call_log,
            )
            answers[AgentRole.GENERAL] = a_g
            transcript.answers[AgentRole.GENERAL.value] = a_g
            critical = run_critical(
                gateway, question, retrieval.text_hits, retrieval.image_hits, a_g,
                config.agents[AgentRole.CRITICAL], transcript.call_log,
            )
            transcript.critical = critical
            text_hint, image_hint = critical.text_hint, critical.image_hint

        if config.enable_text_agent:
            a_t = run_text_agent(
                gateway, question, retrieval.text_hits, text_hint,
                config.agents[AgentRole.TEXT], transcript.call_log,
            )
            answers[AgentRole.TEXT] = a_t
            transcript.answers[AgentRole.TEXT.value] = a_t

        if config.enable_image_agent:
            a_i = run_image_agent(
                gateway, question, retrieval.image_hits, image_hint,
                config.agents[AgentRole.IMAGE], transcript.call_log,
            )
            answers[AgentRole.IMAGE] = a_i
            transcript.answers[AgentRole.IMAGE.value] = a_i

        final, fallback = run_summarizer(
            gateway, question, answers, config.agents[AgentRole.SUMMARIZING], transcript.call_log
        )
        transcript.final = final
        transcript.summarizer_fallback = fallback
    except DocQAError as exc:
        logger.error("question aborted: %s", exc)
        transcript.failure = str(exc)
    return transcript
