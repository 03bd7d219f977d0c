"""Benchmark harness: run the pipeline over a QA set and score with an LLM judge.

The judge sees the question, the predicted answer, and the ground truth and
returns a binary correctness verdict. Accuracy is aggregated overall and per
evidence category. Items whose pipeline run aborted score 0 (denominators
stay fixed); items whose judge reply stayed unparseable after a retry are
excluded from accuracy and reported separately.
"""

from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ItemSetMismatch, JudgeParseFailure
from .gateway import ChatMessage, GenerationParams, ModelEndpoint
from .ingest import Corpus
from .pipeline import PipelineConfig, answer_question
from .structured import extract_correctness

logger = logging.getLogger(__name__)

_JUDGE_FORMAT_REMINDER = (
    'Reminder: return only a JSON dictionary like {"correctness": 1} and nothing else.'
)


@dataclass(frozen=True)
class BenchmarkItem:
    item_id: str
    question: str
    doc_id: str
    ground_truth: str
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.ground_truth:
            raise ValueError(f"item {self.item_id}: ground_truth must be non-empty")


def load_benchmark_items(path: Path | str) -> list[BenchmarkItem]:
    """Load a JSONL dataset, one item per line."""
    items = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        items.append(
            BenchmarkItem(
                item_id=rec["item_id"],
                question=rec["question"],
                doc_id=rec["doc_id"],
                ground_truth=rec["ground_truth"],
                categories=tuple(rec.get("categories", [])),
            )
        )
    return items


@dataclass
class JudgeVerdict:
    correctness: int
    raw_reply: str


def judge_prompt_template() -> str:
    return resources.files("docqa.prompts").joinpath("evaluation.txt").read_text("utf-8")


def judge(
    gateway,
    question: str,
    predicted: str,
    ground_truth: str,
    judge_endpoint: ModelEndpoint,
    params: GenerationParams | None = None,
) -> JudgeVerdict:
    """Binary correctness verdict from the judge endpoint.

    One format-reminder retry on an unparseable reply; a second miss raises
    JudgeParseFailure.
    """
    params = params or GenerationParams()
    prompt = (
        judge_prompt_template()
        .replace("{question}", question)
        .replace("{answer}", predicted)
        .replace("{gt}", ground_truth)
    )
    reply = gateway.chat_complete(
        judge_endpoint, [ChatMessage.text("user", prompt)], params
    ).text
    verdict = extract_correctness(reply)
    if verdict is None:
        logger.warning("judge reply unparseable, retrying with format reminder")
        reply = gateway.chat_complete(
            judge_endpoint,
            [ChatMessage.text("user", prompt + "\n\n" + _JUDGE_FORMAT_REMINDER)],
            params,
        ).text
        verdict = extract_correctness(reply)
    if verdict is None:
        raise JudgeParseFailure(f"unparseable judge reply: {reply[:200]!r}")
    return JudgeVerdict(correctness=verdict, raw_reply=reply)


@dataclass
class ItemResult:
    item_id: str
    prediction: str | None
    verdict: int | None  # None when failed or unevaluated
    categories: tuple[str, ...] = ()
    failed: bool = False  # pipeline aborted; scores 0
    unevaluated: bool = False  # judge parse failure; excluded from accuracy

    @property
    def scored(self) -> bool:
        return not self.unevaluated

    @property
    def effective_verdict(self) -> int:
        return 0 if self.verdict is None else self.verdict


@dataclass
class BenchmarkReport:
    run_id: str
    results: list[ItemResult]
    config_snapshot: dict = field(default_factory=dict)

    @property
    def judged(self) -> int:
        return sum(1 for r in self.results if r.verdict is not None)

    @property
    def failed(self) -> int:
        return sum(1 for r in self.results if r.failed)

    @property
    def unevaluated(self) -> int:
        return sum(1 for r in self.results if r.unevaluated)

    @property
    def accuracy(self) -> float:
        scored = [r for r in self.results if r.scored]
        if not scored:
            return 0.0
        return sum(r.effective_verdict for r in scored) / len(scored)

    def per_category(self) -> dict[str, tuple[float, int]]:
        """tag -> (accuracy, item count); items may bear several tags."""
        buckets: dict[str, list[int]] = {}
        for r in self.results:
            if not r.scored:
                continue
            for tag in r.categories:
                buckets.setdefault(tag, []).append(r.effective_verdict)
        return {
            tag: (sum(vs) / len(vs), len(vs)) for tag, vs in sorted(buckets.items())
        }

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "accuracy": self.accuracy,
            "judged": self.judged,
            "failed": self.failed,
            "unevaluated": self.unevaluated,
            "per_category": {
                tag: {"accuracy": acc, "count": n}
                for tag, (acc, n) in self.per_category().items()
            },
            "items": [
                {
                    "item_id": r.item_id,
                    "prediction": r.prediction,
                    "verdict": r.verdict,
                    "categories": list(r.categories),
                    "failed": r.failed,
                    "unevaluated": r.unevaluated,
                }
                for r in self.results
            ],
            "config": self.config_snapshot,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, indent=2)


def aggregate_by_category(report: BenchmarkReport) -> dict[str, tuple[float, int]]:
    return report.per_category()


def _load_cached_transcripts(path: Path) -> dict[str, dict]:
    cached = {}
    if path.exists():
        for line in path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            cached[rec["item_id"]] = rec["transcript"]
    return cached


def run_benchmark(
    gateway,
    embedder,
    items: list[BenchmarkItem],
    corpus: Corpus,
    text_index,
    image_index,
    pipeline_config: PipelineConfig,
    judge_endpoint: ModelEndpoint,
    out_dir: Path | str,
    run_id: str = "run",
    judge_params: GenerationParams | None = None,
    concurrency: int = 1,
) -> BenchmarkReport:
    """Answer and judge every item; resumable via the transcript log.

    Items already present in ``<out_dir>/transcripts.jsonl`` are served from
    it without re-running the pipeline. Per-item failures are recorded and
    the run continues.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    transcript_path = out_dir / "transcripts.jsonl"
    judgment_path = out_dir / "judgments.jsonl"
    cached = _load_cached_transcripts(transcript_path)
    cached_judgments: dict[str, dict] = {}
    if judgment_path.exists():
        for line in judgment_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                rec = json.loads(line)
                cached_judgments[rec["item_id"]] = rec
    write_lock = threading.Lock()

    def answer_one(item: BenchmarkItem) -> dict:
        if item.item_id in cached:
            return cached[item.item_id]
        transcript = answer_question(
            gateway, embedder, item.question, corpus, text_index, image_index, pipeline_config
        )
        record = transcript.to_dict()
        with write_lock, open(transcript_path, "a", encoding="utf-8") as fh:
            fh.write(
                json.dumps(
                    {"item_id": item.item_id, "transcript": record},
                    sort_keys=True,
                    ensure_ascii=False,
                )
                + "\n"
            )
        return record

    def evaluate_one(item: BenchmarkItem) -> ItemResult:
        if item.item_id in cached_judgments:
            rec = cached_judgments[item.item_id]
            return ItemResult(
                item.item_id,
                rec.get("prediction"),
                rec.get("verdict"),
                item.categories,
                unevaluated=rec.get("unevaluated", False),
            )
        record = answer_one(item)
        prediction = record.get("final")
        if record.get("failure") or prediction is None:
            return ItemResult(
                item.item_id, prediction, None, item.categories, failed=True
            )
        try:
            verdict = judge(
                gateway, item.question, prediction, item.ground_truth,
                judge_endpoint, judge_params,
            )
            result = ItemResult(item.item_id, prediction, verdict.correctness, item.categories)
        except JudgeParseFailure:
            logger.error("item %s unevaluated: judge reply unparseable", item.item_id)
            result = ItemResult(
                item.item_id, prediction, None, item.categories, unevaluated=True
            )
        with write_lock, open(judgment_path, "a", encoding="utf-8") as fh:
            fh.write(
                json.dumps(
                    {
                        "item_id": result.item_id,
                        "prediction": result.prediction,
                        "verdict": result.verdict,
                        "unevaluated": result.unevaluated,
                    },
                    sort_keys=True,
                    ensure_ascii=False,
                )
                + "\n"
            )
        return result

    if concurrency > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            results = list(pool.map(evaluate_one, items))
    else:
        results = [evaluate_one(item) for item in items]

    report = BenchmarkReport(
        run_id=run_id,
        results=results,
        config_snapshot={
            "k": pipeline_config.k,
            "enable_general_critical": pipeline_config.enable_general_critical,
            "enable_text_agent": pipeline_config.enable_text_agent,
            "enable_image_agent": pipeline_config.enable_image_agent,
            "agents": {
                role.value: cfg.endpoint.model_name
                for role, cfg in pipeline_config.agents.items()
            },
            "judge": judge_endpoint.model_name,
            "prompt_hashes": pipeline_config.prompt_hashes(),
        },
    )
    (out_dir / f"report_{run_id}.json").write_text(report.to_json() + "\n", encoding="utf-8")
    return report


@dataclass
class RunComparison:
    run_ids: list[str]
    accuracies: dict[str, float]  # over the shared item set
    deltas: dict[tuple[str, str], float]
    config_differences: list[str]
    warnings: list[str]
    shared_items: int


def compare_runs(reports: list[BenchmarkReport]) -> RunComparison:
    """Align reports on their shared item set and tabulate accuracy deltas."""
    if len(reports) < 2:
        raise ValueError("need at least two reports to compare")
    warnings: list[str] = []
    id_sets = [{r.item_id for r in rep.results} for rep in reports]
    shared = set.intersection(*id_sets)
    if any(ids != shared for ids in id_sets):
        warnings.append(
            ItemSetMismatch(
                f"reports cover different item sets; comparing the {len(shared)} shared items"
            ).args[0]
        )

    def shared_accuracy(rep: BenchmarkReport) -> float:
        scored = [r for r in rep.results if r.item_id in shared and r.scored]
        if not scored:
            return 0.0
        return sum(r.effective_verdict for r in scored) / len(scored)

    accuracies = {rep.run_id: shared_accuracy(rep) for rep in reports}
    deltas = {}
    for i, a in enumerate(reports):
        for b in reports[i + 1 :]:
            deltas[(a.run_id, b.run_id)] = accuracies[b.run_id] - accuracies[a.run_id]

    config_differences = []
    base = reports[0].config_snapshot
    for rep in reports[1:]:
        for key in sorted(set(base) | set(rep.config_snapshot)):
            if base.get(key) != rep.config_snapshot.get(key):
                config_differences.append(
                    f"{reports[0].run_id} vs {rep.run_id}: {key} differs"
                )
    return RunComparison(
        run_ids=[rep.run_id for rep in reports],
        accuracies=accuracies,
        deltas=deltas,
        config_differences=config_differences,
        warnings=warnings,
        shared_items=len(shared),
    )
