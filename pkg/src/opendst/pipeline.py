"""End-to-end run orchestration.

A run walks every dialogue turn by turn: domain classification (or gold
domain labels), then the chosen tracking route, accumulating the predicted
state. Finished dialogues are appended to a JSONL checkpoint, so an
interrupted run resumes where it stopped and produces byte-identical
outputs to an uninterrupted one.
"""

from __future__ import annotations

import configparser
import json
import logging
import random
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .budget import QaTraceCounts, comparison_rows
from .classifier import TurnDomainPrediction, classify_turn
from .core import DialogueState, Dialogue, Schema, Speaker, apply_turn_update
from .datasets import (
    Corpus,
    MissingGold,
    corpus_stats,
    load_corpus_dump,
    load_multiwoz,
    load_sgd,
)
from .evaluator import EvalReport, build_report, write_matrix_csv
from .gateway import (
    Backend,
    MockBackend,
    OpenAIChatBackend,
    RequestLedger,
    SamplingParams,
)
from .goldmock import GoldScriptedBackend
from .prompts import PromptLibrary, load_assets
from .qa import qa_track_turn
from .srp import srp_track_turn

log = logging.getLogger(__name__)

_DATASETS = ("multiwoz-2.1", "multiwoz-2.4", "sgd", "dump")
_METHODS = ("qa", "srp")
_DOMAIN_SOURCES = ("gold", "predicted")


@dataclass
class RunConfig:
    """Everything one run needs; representable as an INI file, overridable
    by CLI flags. Credentials stay in the environment: only the variable
    name is configured."""

    dataset: str = "multiwoz-2.4"
    data_path: str = ""
    method: str = "srp"
    domain_source: str = "gold"
    backend: str = "mock:gold"
    model_key: str = ""
    endpoint: str = "https://api.openai.com/v1"
    api_key_env: str = "OPENDST_API_KEY"
    rpm: float = 0.0
    temperature: float | None = None
    top_p: float | None = None
    max_tokens: int = 1024
    with_ontology: bool = False
    extended_extraction: bool = True
    dontcare_scan: bool = True
    dialogue_limit: int = 0
    seed: int = 0
    workers: int = 1
    output_dir: str = "runs/out"
    force: bool = False
    figures: bool = True
    audit: bool = False
    max_history_chars: int = 8000
    fuzzy_threshold: float = 0.95

    def validate(self) -> None:
        if self.dataset not in _DATASETS:
            raise ValueError(f"dataset must be one of {_DATASETS}")
        if self.method not in _METHODS:
            raise ValueError(f"method must be one of {_METHODS}")
        if self.domain_source not in _DOMAIN_SOURCES:
            raise ValueError(f"domains must be one of {_DOMAIN_SOURCES}")
        if not self.data_path:
            raise ValueError("data path is required")
        if self.workers < 1:
            raise ValueError("workers must be positive")
        if self.dialogue_limit < 0 or self.max_history_chars < 0:
            raise ValueError("limits must be non-negative")
        if not 0.0 < self.fuzzy_threshold <= 1.0:
            raise ValueError("fuzzy threshold must be in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def effective_model_key(self) -> str:
        if self.model_key:
            return self.model_key
        if self.backend.startswith("mock:"):
            return "gpt-4-turbo"
        return self.backend

    def sampling(self) -> SamplingParams | None:
        """Explicit sampling override; None defers to per-stage defaults."""
        if self.temperature is None and self.top_p is None and self.max_tokens == 1024:
            return None
        return SamplingParams(
            temperature=self.temperature if self.temperature is not None else 0.3,
            top_p=self.top_p if self.top_p is not None else 0.9,
            max_tokens=self.max_tokens,
        )


_BOOL_FIELDS = {"with_ontology", "extended_extraction", "dontcare_scan", "force", "figures", "audit"}
_INT_FIELDS = {"max_tokens", "dialogue_limit", "seed", "workers", "max_history_chars"}
_FLOAT_FIELDS = {"rpm", "fuzzy_threshold"}
_OPT_FLOAT_FIELDS = {"temperature", "top_p"}


def load_config(ini_path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """INI file first, then explicit overrides on top."""
    config = RunConfig()
    if ini_path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(str(ini_path))
        if not read:
            raise FileNotFoundError(ini_path)
        merged: dict[str, str] = {}
        for section in parser.sections():
            merged.update(parser.items(section))
        _apply_fields(config, merged)
    if overrides:
        _apply_fields(config, overrides)
    config.validate()
    return config


def _apply_fields(config: RunConfig, fields: dict) -> None:
    for key, value in fields.items():
        name = key.replace("-", "_")
        if name == "data":
            name = "data_path"
        if name == "domains":
            name = "domain_source"
        if name == "output":
            name = "output_dir"
        if not hasattr(config, name):
            raise ValueError(f"unknown config key {key!r}")
        if value is None:
            continue
        if name in _BOOL_FIELDS and isinstance(value, str):
            value = value.strip().lower() in ("1", "true", "yes", "on")
        elif name in _INT_FIELDS:
            value = int(value)
        elif name in _FLOAT_FIELDS:
            value = float(value)
        elif name in _OPT_FLOAT_FIELDS:
            value = float(value)
        setattr(config, name, value)


def load_run_corpus(config: RunConfig) -> Corpus:
    if config.dataset == "multiwoz-2.1":
        return load_multiwoz(config.data_path, version="2.1")
    if config.dataset == "multiwoz-2.4":
        return load_multiwoz(config.data_path, version="2.4")
    if config.dataset == "sgd":
        return load_sgd(config.data_path)
    return load_corpus_dump(config.data_path)


def make_backend(config: RunConfig, corpus: Corpus | None) -> Backend:
    if config.backend == "mock:gold":
        if corpus is None:
            raise ValueError("mock:gold needs a loaded corpus")
        return GoldScriptedBackend(corpus)
    if config.backend == "mock:empty":
        return MockBackend(default="{}")
    return OpenAIChatBackend(
        model=config.backend,
        endpoint=config.endpoint,
        api_key_env=config.api_key_env,
        rpm=config.rpm or None,
    )


class _AuditLog:
    def __init__(self, path: Path):
        self._fh = path.open("a", encoding="utf-8")
        self._lock = threading.Lock()
        self._seq = 0

    def __call__(self, event: dict) -> None:
        with self._lock:
            event = {"seq": self._seq, **event}
            self._seq += 1
            self._fh.write(json.dumps(event, sort_keys=True, ensure_ascii=False) + "\n")
            self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def run_dialogue(
    dialogue: Dialogue,
    schema: Schema,
    backend: Backend,
    library: PromptLibrary,
    config: RunConfig,
    ledger: RequestLedger,
    audit=None,
) -> dict:
    """Track one dialogue; returns its checkpoint record."""
    sampling = config.sampling()
    state = DialogueState({})
    active: frozenset[str] = frozenset()
    previous_prediction: TurnDomainPrediction | None = None
    history = []
    rows = []
    ordinal = 0
    max_chars = config.max_history_chars or None
    for turn in dialogue.turns:
        if turn.speaker is not Speaker.USER:
            history.append(turn)
            continue
        if config.domain_source == "gold":
            if dialogue.gold_turn_domains is None:
                raise MissingGold(f"{dialogue.id}: gold domain labels required for domains=gold")
            prediction = TurnDomainPrediction(turn_index=turn.index, domains=dialogue.gold_turn_domains[ordinal])
        else:
            prediction = classify_turn(
                turn,
                history,
                schema,
                backend,
                library=library,
                ledger=ledger,
                params=sampling,
                previous=previous_prediction,
                audit=audit,
                max_history_chars=max_chars,
            )
        previous_prediction = prediction
        active = active | prediction.domains
        if config.method == "qa":
            delta = qa_track_turn(
                turn,
                history,
                active,
                state,
                schema,
                backend,
                library=library,
                ledger=ledger,
                params=sampling,
                extended=config.extended_extraction,
                dontcare_scan=config.dontcare_scan,
                audit=audit,
                max_history_chars=max_chars,
            )
        else:
            delta = srp_track_turn(
                turn,
                history,
                active,
                state,
                schema,
                backend,
                library=library,
                model_key=config.effective_model_key,
                ledger=ledger,
                params=sampling,
                with_ontology=config.with_ontology,
                audit=audit,
                max_history_chars=max_chars,
            )
        state = apply_turn_update(state, delta, schema)
        rows.append(
            {
                "turn_index": turn.index,
                "domains": sorted(prediction.domains),
                "via_fallback": prediction.via_fallback,
                "active_domains": sorted(active),
                "state": state.serialize(),
            }
        )
        history.append(turn)
        ordinal += 1
    return {"dialogue_id": dialogue.id, "turns": rows}


def select_dialogues(corpus: Corpus, limit: int, seed: int) -> list[Dialogue]:
    """Corpus order, optionally subsampled with a seeded draw."""
    dialogues = list(corpus.dialogues)
    if limit and limit < len(dialogues):
        rng = random.Random(seed)
        picked = sorted(rng.sample(range(len(dialogues)), limit))
        dialogues = [dialogues[i] for i in picked]
    return dialogues


def _read_checkpoint(path: Path) -> tuple[dict[str, dict], list[dict]]:
    records: dict[str, dict] = {}
    ledger_rows: list[dict] = []
    if not path.exists():
        return records, ledger_rows
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError:
                log.warning("skipping truncated checkpoint line")
                continue
            if "dialogue_id" in row:
                records[row["dialogue_id"]] = row
                ledger_rows.extend(row.get("ledger", []))
    return records, ledger_rows


def run_pipeline(
    config: RunConfig,
    corpus: Corpus | None = None,
    backend: Backend | None = None,
    interrupt_after: int | None = None,
) -> EvalReport:
    """Execute a full run and write its outputs to the configured directory.

    ``interrupt_after`` aborts after that many newly tracked dialogues (the
    checkpoint stays behind); a later call with the same config resumes.
    """
    config.validate()
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.json"
    checkpoint_path = out_dir / "checkpoint.jsonl"
    if report_path.exists():
        if not config.force:
            raise FileExistsError(f"{report_path} exists; pass force to overwrite")
        for stale in (report_path, checkpoint_path):
            stale.unlink(missing_ok=True)

    if corpus is None:
        corpus = load_run_corpus(config)
    if backend is None:
        backend = make_backend(config, corpus)
    library = load_assets()

    dialogues = select_dialogues(corpus, config.dialogue_limit, config.seed)
    done, restored_rows = _read_checkpoint(checkpoint_path)
    ledger = RequestLedger()
    ledger.restore(restored_rows)
    pending = [d for d in dialogues if d.id not in done]
    if done:
        log.info("resuming: %d dialogues already tracked, %d pending", len(done), len(pending))

    audit = _AuditLog(out_dir / "audit.jsonl") if config.audit else None
    write_lock = threading.Lock()
    interrupted = threading.Event()
    completed_new = 0

    def track(dialogue: Dialogue) -> None:
        nonlocal completed_new
        if interrupted.is_set():
            return
        child = RequestLedger()
        record = run_dialogue(dialogue, corpus.schema, backend, library, config, child, audit)
        record["ledger"] = child.snapshot()
        with write_lock:
            ledger.merge(child)
            with checkpoint_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
            done[dialogue.id] = record
            completed_new += 1
            if interrupt_after is not None and completed_new >= interrupt_after:
                interrupted.set()

    try:
        if config.workers > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                list(pool.map(track, pending))
        else:
            for dialogue in pending:
                track(dialogue)
                if interrupted.is_set():
                    break
    finally:
        if audit is not None:
            audit.close()
    if interrupted.is_set() and any(d.id not in done for d in dialogues):
        raise KeyboardInterrupt("run interrupted; checkpoint retained")

    report = _score_records(config, corpus, dialogues, done, ledger)
    emit_report(report, config, corpus, dialogues, done, out_dir)
    return report


def _score_records(
    config: RunConfig,
    corpus: Corpus,
    dialogues: Sequence[Dialogue],
    done: dict[str, dict],
    ledger: RequestLedger,
) -> EvalReport:
    pred_states, gold_states, pred_domains, gold_domains = [], [], [], []
    for dialogue in dialogues:
        record = done[dialogue.id]
        if dialogue.gold_states is None or dialogue.gold_turn_domains is None:
            raise MissingGold(f"{dialogue.id}: cannot score without gold annotations")
        pred_states.append([DialogueState.deserialize(row["state"]) for row in record["turns"]])
        gold_states.append(list(dialogue.gold_states))
        pred_domains.append([frozenset(row["domains"]) for row in record["turns"]])
        gold_domains.append(list(dialogue.gold_turn_domains))

    stats = corpus_stats(
        Corpus(name=corpus.name, version=corpus.version, dialogues=tuple(dialogues), schema=corpus.schema)
    )
    qa_counts = QaTraceCounts.from_ledger(ledger)
    budget = comparison_rows(stats, qa_counts if qa_counts.total() else None, weighted=False)
    extras = {
        "config": config.to_dict(),
        "stats": stats.to_dict(),
        "budget": budget,
        "measured_requests": {
            "total": ledger.requests(),
            "srp-tracking": ledger.requests(stage="srp-tracking"),
        },
        "fallback_turns": sum(
            1 for record in done.values() for row in record["turns"] if row.get("via_fallback")
        ),
    }
    report = build_report(
        pred_states,
        gold_states,
        pred_domains=pred_domains,
        gold_domains=gold_domains,
        matrix_domains=sorted(corpus.schema.domains),
        ledger_rows=ledger.snapshot(),
        threshold=config.fuzzy_threshold,
        extras=extras,
    )
    report.domain_change_profile = list(stats.domain_change_profile)
    return report


def emit_report(
    report: EvalReport,
    config: RunConfig,
    corpus: Corpus,
    dialogues: Sequence[Dialogue],
    done: dict[str, dict],
    out_dir: Path,
) -> dict[str, str]:
    """Write report.json, predictions.jsonl, budget.csv, the confusion
    matrix, and (when enabled) the report figures. All output is
    deterministic: sorted keys, no timestamps."""
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: dict[str, str] = {}

    predictions_path = out_dir / "predictions.jsonl"
    with predictions_path.open("w", encoding="utf-8") as fh:
        for dialogue in dialogues:
            for row in done[dialogue.id]["turns"]:
                fh.write(json.dumps({"dialogue_id": dialogue.id, **row}, sort_keys=True, ensure_ascii=False) + "\n")
    paths["predictions"] = str(predictions_path)

    report_path = out_dir / "report.json"
    report_path.write_text(
        json.dumps(report.to_dict(), sort_keys=True, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    paths["report"] = str(report_path)

    from .budget import write_budget_csv

    budget_rows = report.extras.get("budget", [])
    if budget_rows:
        budget_path = out_dir / "budget.csv"
        write_budget_csv(budget_rows, budget_path)
        paths["budget"] = str(budget_path)

    if report.matrix_labels:
        import numpy as np

        matrix_path = out_dir / "misclassification_matrix.csv"
        write_matrix_csv(np.array(report.misclassification, dtype=np.int64), report.matrix_labels, matrix_path)
        paths["matrix"] = str(matrix_path)

    if config.figures:
        from .figures import render_report_figures

        for name, path in render_report_figures(report, out_dir / "figures").items():
            paths[f"figure:{name}"] = str(path)

    manifest_path = out_dir / "run_manifest.json"
    manifest_path.write_text(
        json.dumps({"outputs": dict(sorted(paths.items()))}, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    paths["manifest"] = str(manifest_path)
    return paths


def score_predictions(predictions_path: str | Path, corpus: Corpus, threshold: float = 0.95) -> EvalReport:
    """Re-score a predictions file offline against a corpus's gold."""
    by_dialogue: dict[str, list[dict]] = {}
    order: list[str] = []
    with Path(predictions_path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            did = row["dialogue_id"]
            if did not in by_dialogue:
                by_dialogue[did] = []
                order.append(did)
            by_dialogue[did].append(row)

    pred_states, gold_states, pred_domains, gold_domains = [], [], [], []
    schema_domains = sorted(corpus.schema.domains)
    for did in order:
        dialogue = corpus.dialogue(did)
        if dialogue.gold_states is None or dialogue.gold_turn_domains is None:
            raise MissingGold(f"{did}: gold annotations required to score")
        rows = sorted(by_dialogue[did], key=lambda r: r["turn_index"])
        pred_states.append([DialogueState.deserialize(r["state"]) for r in rows])
        gold_states.append(list(dialogue.gold_states))
        pred_domains.append([frozenset(r["domains"]) for r in rows])
        gold_domains.append(list(dialogue.gold_turn_domains))
    return build_report(
        pred_states,
        gold_states,
        pred_domains=pred_domains,
        gold_domains=gold_domains,
        matrix_domains=schema_domains,
        threshold=threshold,
    )
