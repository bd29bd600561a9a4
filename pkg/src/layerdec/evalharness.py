"""Scoring harness: multiple-choice metrics, QA metrics, diagnostics, timing.

Options are scored from precomputed teacher-forced traces (one step per
continuation token), never by running a model, so every metric here is a
deterministic function of trace files plus a decode config.  Fixture
directories are described in ``docs/eval-fixtures.md``.
"""

from __future__ import annotations

import json
import re
import string
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from .decoding import (
    DecodeConfig,
    Strategy,
    decode_sequence,
    decode_step,
    greedy_pick,
    layer_distributions,
)
from .errors import InvalidConfig, InvalidExample, InvalidInput, IoError
from .trace import LayerTrace, read_trace_file

# Throughput measured in the original experiments on a 7B-parameter model,
# kept as a printed point of comparison for bench runs (hardware differs, so
# it is informational, never asserted against).
REFERENCE_THROUGHPUT = (
    "reference point (7B model): greedy 39.41 tok/s, entropy-adjusted 36.10 tok/s "
    "(~8.4% overhead)"
)

METRIC_DEFINITIONS = {
    "mc1": "fraction of questions whose top-scored option is labeled true "
    "(ties resolve to the lowest option index)",
    "mc2": "mean probability mass on true options after softmax over option "
    "total log-scores",
    "mc3": "mean fraction of true options scored strictly above every false option",
    "em": "mean of max-over-golds exact match on normalized text",
    "f1": "mean of max-over-golds token-overlap F1 on normalized text",
}


@dataclass(frozen=True)
class MCExample:
    question_id: str
    option_traces: tuple[LayerTrace, ...]
    labels: tuple[bool, ...]
    option_token_ids: tuple[tuple[int, ...], ...]

    def validate(self) -> None:
        n = len(self.option_traces)
        if n < 2:
            raise InvalidExample(f"{self.question_id}: need at least 2 options")
        if len(self.labels) != n or len(self.option_token_ids) != n:
            raise InvalidExample(f"{self.question_id}: options/labels/tokens misaligned")
        if not any(self.labels):
            raise InvalidExample(f"{self.question_id}: no option labeled true")


@dataclass(frozen=True)
class QAExample:
    question_id: str
    prediction: str
    gold_answers: tuple[str, ...]

    def validate(self) -> None:
        if not self.gold_answers:
            raise InvalidExample(f"{self.question_id}: gold_answers empty")


@dataclass
class EvalReport:
    metrics: dict[str, float]
    per_example: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        header = {
            "kind": "header",
            "config": self.config,
            "metric_definitions": METRIC_DEFINITIONS,
        }
        body = [{"kind": "example", **ex} for ex in self.per_example]
        tail = {"kind": "metrics", **self.metrics}
        return [header, *body, tail]

    def summary(self) -> str:
        lines = ["eval summary"]
        for name in sorted(self.metrics):
            lines.append(f"  {name:>4}: {self.metrics[name]:.6f}")
        lines.append(f"  examples: {len(self.per_example)}")
        return "\n".join(lines)


def score_option(trace: LayerTrace, token_ids, cfg: DecodeConfig) -> float:
    """Total log-score of a fixed continuation, one trace step per token.

    Greedy configs sum the final layer's log-probabilities.  The adjusted
    strategy forces renormalization so head scores form a distribution
    before the log is taken; outside the head the original probability
    passes through either way.
    """
    token_ids = list(token_ids)
    if len(token_ids) != trace.header.step_count:
        raise InvalidExample(
            f"trace has {trace.header.step_count} steps but {len(token_ids)} tokens to score"
        )
    if cfg.strategy == Strategy.DOLA:
        raise InvalidConfig("option scoring supports greedy and end strategies only")
    if cfg.strategy == Strategy.END:
        cfg = replace(cfg, renormalize=True)
    total = 0.0
    for record, token in zip(trace.steps, token_ids):
        if not 0 <= token < trace.header.vocab_size:
            raise InvalidExample(f"token id {token} outside vocabulary")
        if cfg.strategy == Strategy.GREEDY:
            decision = greedy_pick(record, trace.header, cfg.sparse_fill)
        else:
            decision = decode_step(record, trace.header, cfg)
        total += float(np.log(decision.final_scores[token]))
    return total


def mc_metrics(examples, cfg: DecodeConfig) -> tuple[float, float, float]:
    """Multiple-choice accuracy triple over teacher-forced option scores."""
    examples = list(examples)
    if not examples:
        raise InvalidExample("no examples to score")
    mc1_hits, mc2_masses, mc3_fracs = [], [], []
    for ex in examples:
        ex.validate()
        scores = [
            score_option(t, ids, cfg)
            for t, ids in zip(ex.option_traces, ex.option_token_ids)
        ]
        top = scores.index(max(scores))
        mc1_hits.append(1.0 if ex.labels[top] else 0.0)

        shifted = np.array(scores) - max(scores)
        probs = np.exp(shifted) / np.exp(shifted).sum()
        mc2_masses.append(float(probs[list(ex.labels)].sum()))

        false_scores = [s for s, lab in zip(scores, ex.labels) if not lab]
        bar = max(false_scores) if false_scores else -np.inf
        true_scores = [s for s, lab in zip(scores, ex.labels) if lab]
        mc3_fracs.append(sum(1.0 for s in true_scores if s > bar) / len(true_scores))
    return (
        float(np.mean(mc1_hits)),
        float(np.mean(mc2_masses)),
        float(np.mean(mc3_fracs)),
    )


_ARTICLES = re.compile(r"\b(a|an|the)\b")


def normalize_answer(text: str) -> str:
    text = text.lower()
    text = "".join(ch for ch in text if ch not in string.punctuation)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def _f1(prediction: str, gold: str) -> float:
    pred_tokens = normalize_answer(prediction).split()
    gold_tokens = normalize_answer(gold).split()
    if not pred_tokens or not gold_tokens:
        return float(pred_tokens == gold_tokens)
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def qa_metrics(examples) -> tuple[float, float]:
    examples = list(examples)
    if not examples:
        raise InvalidExample("no examples to score")
    ems, f1s = [], []
    for ex in examples:
        ex.validate()
        norm_pred = normalize_answer(ex.prediction)
        ems.append(
            float(any(norm_pred == normalize_answer(g) for g in ex.gold_answers))
        )
        f1s.append(max(_f1(ex.prediction, g) for g in ex.gold_answers))
    return float(np.mean(ems)), float(np.mean(f1s))


@dataclass(frozen=True)
class KlProfile:
    """KL(final || layer) per step and captured non-final layer."""

    layers: tuple[int, ...]
    values: np.ndarray  # shape (steps, len(layers))

    def rows(self) -> list[dict]:
        return [
            {
                "kind": "kl_profile",
                "step": s,
                "kl": {str(l): float(v) for l, v in zip(self.layers, row)},
            }
            for s, row in enumerate(self.values)
        ]


def layer_kl_profile(trace: LayerTrace) -> KlProfile:
    header = trace.header
    early = header.layer_indices[:-1]
    values = np.zeros((header.step_count, len(early)))
    for s, record in enumerate(trace.steps):
        probs = layer_distributions(record, header, header.layer_indices)
        final = probs[-1]
        for j in range(len(early)):
            values[s, j] = kernels.kl_divergence(final, probs[j])
    return KlProfile(layers=early, values=values)


def token_trajectory(trace: LayerTrace, step: int, token_ids) -> np.ndarray:
    """P_layer(token) for each requested token (rows) and layer (columns)."""
    header = trace.header
    if not 0 <= step < header.step_count:
        raise InvalidInput(f"step {step} out of range for {header.step_count}-step trace")
    token_ids = list(token_ids)
    for t in token_ids:
        if not 0 <= t < header.vocab_size:
            raise InvalidInput(f"token id {t} outside vocabulary")
    probs = layer_distributions(trace.steps[step], header, header.layer_indices)
    out = np.empty((len(token_ids), header.num_layers))
    for i, t in enumerate(token_ids):
        for j, p in enumerate(probs):
            out[i, j] = p[t]
    return out


def throughput_bench(trace: LayerTrace, cfgs, repetitions: int = 3) -> dict:
    """Tokens per second for each config over identical inputs.

    Each config is timed over ``repetitions`` full passes after one warmup
    pass; the fastest pass wins (standard practice for wall-clock micro
    benchmarks).  When both a greedy and an end config are present, the
    report includes the relative overhead plus the published reference
    point as context.
    """
    if repetitions < 1:
        raise InvalidInput("repetitions must be >= 1")
    entries = []
    by_strategy: dict[str, float] = {}
    for cfg in cfgs:
        decode_sequence(trace, cfg)  # warmup
        best = np.inf
        for _ in range(repetitions):
            start = time.perf_counter()
            decode_sequence(trace, cfg)
            best = min(best, time.perf_counter() - start)
        tps = trace.header.step_count / max(best, 1e-9)
        entries.append({"strategy": cfg.strategy.value, "tokens_per_s": tps})
        by_strategy.setdefault(cfg.strategy.value, tps)
    report = {
        "entries": entries,
        "steps": trace.header.step_count,
        "repetitions": repetitions,
        "reference": REFERENCE_THROUGHPUT,
    }
    if "greedy" in by_strategy and "end" in by_strategy:
        g, e = by_strategy["greedy"], by_strategy["end"]
        report["end_overhead_vs_greedy_pct"] = 100.0 * (g - e) / g
    return report


# -- fixture directory loading ----------------------------------------------

def load_fixture_dir(path) -> tuple[list[MCExample], list[QAExample]]:
    """Read manifest.json plus referenced trace files from a fixture dir."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidExample(f"{manifest_path} is not valid JSON: {exc}") from exc

    mc_examples = []
    for entry in manifest.get("mc", []):
        try:
            options = entry["options"]
            example = MCExample(
                question_id=str(entry["question_id"]),
                option_traces=tuple(
                    read_trace_file(root / o["trace"]) for o in options
                ),
                labels=tuple(bool(o["label"]) for o in options),
                option_token_ids=tuple(
                    tuple(int(t) for t in o["token_ids"]) for o in options
                ),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidExample(f"malformed mc entry: {exc}") from exc
        example.validate()
        mc_examples.append(example)

    qa_examples = []
    for entry in manifest.get("qa", []):
        try:
            example = QAExample(
                question_id=str(entry["question_id"]),
                prediction=str(entry["prediction"]),
                gold_answers=tuple(str(g) for g in entry["gold_answers"]),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidExample(f"malformed qa entry: {exc}") from exc
        example.validate()
        qa_examples.append(example)
    return mc_examples, qa_examples


def evaluate(mc_examples, qa_examples, cfg: DecodeConfig) -> EvalReport:
    """Full fixture evaluation; any section may be empty."""
    metrics: dict[str, float] = {}
    per_example: list[dict] = []
    mc_examples, qa_examples = list(mc_examples), list(qa_examples)
    if mc_examples:
        mc1, mc2, mc3 = mc_metrics(mc_examples, cfg)
        metrics.update(mc1=mc1, mc2=mc2, mc3=mc3)
        for ex in mc_examples:
            scores = [
                score_option(t, ids, cfg)
                for t, ids in zip(ex.option_traces, ex.option_token_ids)
            ]
            per_example.append(
                {
                    "question_id": ex.question_id,
                    "task": "mc",
                    "scores": scores,
                    "labels": list(ex.labels),
                }
            )
    if qa_examples:
        em, f1 = qa_metrics(qa_examples)
        metrics.update(em=em, f1=f1)
        for ex in qa_examples:
            per_example.append(
                {
                    "question_id": ex.question_id,
                    "task": "qa",
                    "em": float(
                        any(
                            normalize_answer(ex.prediction) == normalize_answer(g)
                            for g in ex.gold_answers
                        )
                    ),
                    "f1": max(_f1(ex.prediction, g) for g in ex.gold_answers),
                }
            )
    return EvalReport(
        metrics=metrics,
        per_example=per_example,
        config=_config_echo(cfg),
    )


def _config_echo(cfg: DecodeConfig) -> dict:
    policy = cfg.layer_set
    if policy.kind == "explicit":
        layers = ",".join(str(l) for l in policy.layers)
    elif policy.kind == "bucket":
        layers = f"bucket:{policy.bucket_index}/{policy.bucket_count}"
    else:
        layers = "dynamic"
    return {
        "strategy": cfg.strategy.value,
        "entropy_weight": cfg.entropy_weight,
        "alpha": cfg.alpha,
        "layers": layers,
        "entropy_sign": cfg.entropy_sign.value,
        "renormalize": cfg.renormalize,
    }
