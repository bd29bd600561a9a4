"""Per-step decoding strategies over layer-logit traces.

Three strategies share one shape: look at a step's per-layer logits, score
the vocabulary, pick a token.

* ``greedy``: argmax of the final layer's softmax.  The control baseline.
* ``end_adjust``: scores each head candidate by how its probability evolved
  across a chosen set of layers.  A candidate whose mass appears only in the
  last few layers has a sharply peaked cross-layer distribution (low entropy)
  and is left mostly alone; a candidate that was equally visible everywhere
  has a flat one (high entropy) and gets suppressed by exp(-weight * H).
* ``dola_contrast``: picks the candidate layer most divergent from the final
  layer (by Jensen-Shannon divergence) and scores head tokens by the log
  ratio of final to that layer's probability.

Every operation is a pure function of (record, config); decisions never feed
back into the trace, which records a fixed context.  Ties anywhere resolve
to the lowest token id or lowest layer index so that runs are reproducible
bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator

import numpy as np

from . import kernels
from .errors import (
    DegenerateToken,
    InvalidConfig,
    InvalidInput,
    LayerNotCaptured,
    StepError,
)
from .trace import LayerTrace, StepRecord, TraceHeader, step_logits

# Score assigned outside the candidate head where a strategy (dola) has no
# probability semantics to pass through.  Finite so reports stay serializable.
SCORE_FLOOR = -1e30

DEFAULT_SPARSE_FILL = -30.0


class Strategy(str, Enum):
    GREEDY = "greedy"
    END = "end"
    DOLA = "dola"


class EntropySign(str, Enum):
    STANDARD = "standard"
    LITERAL = "literal"


@dataclass(frozen=True)
class LayerSetPolicy:
    """How the cross-layer set is chosen.

    kind "explicit" uses ``layers`` verbatim (model layer indices).  kind
    "bucket" partitions the captured layers into ``bucket_count`` contiguous
    buckets and takes bucket ``bucket_index`` (0-based; any remainder goes
    to the later buckets), dropping the final layer unless ``include_final``
    is set on the config.  kind "dynamic_bucket" picks, per step, the bucket
    whose mean JS divergence against the final layer is largest.
    """

    kind: str = "bucket"
    layers: tuple[int, ...] = ()
    bucket_index: int = 3
    bucket_count: int = 4

    def __post_init__(self) -> None:
        if self.kind not in ("explicit", "bucket", "dynamic_bucket"):
            raise InvalidConfig(f"unknown layer set kind {self.kind!r}")
        if self.kind == "explicit" and not self.layers:
            raise InvalidConfig("explicit layer set cannot be empty")
        if self.kind != "explicit" and self.bucket_count < 1:
            raise InvalidConfig("bucket_count must be >= 1")


@dataclass(frozen=True)
class DecodeConfig:
    strategy: Strategy = Strategy.END
    entropy_weight: float = 2.0
    alpha: float = 0.01
    layer_set: LayerSetPolicy = field(default_factory=LayerSetPolicy)
    entropy_sign: EntropySign = EntropySign.STANDARD
    renormalize: bool = False
    epsilon_denom: float = 1e-12
    include_final: bool = False
    sparse_fill: float = DEFAULT_SPARSE_FILL

    def __post_init__(self) -> None:
        if self.entropy_weight < 0:
            raise InvalidConfig("entropy weight must be non-negative")
        if not 0 < self.alpha <= 1:
            raise InvalidConfig("alpha must lie in (0, 1]")
        if self.epsilon_denom <= 0:
            raise InvalidConfig("epsilon_denom must be positive")


@dataclass(frozen=True)
class CrossLayerDistribution:
    """One candidate token's probability trajectory, normalized over layers."""

    token_id: int
    q: np.ndarray

    def __post_init__(self) -> None:
        self.q.flags.writeable = False


@dataclass(frozen=True)
class StepDecision:
    """Outcome of scoring one step.

    ``final_scores`` is the full-vocabulary mixed vector: adjusted values for
    head members, pass-through originals (or a floor, for dola) elsewhere.
    ``entropies`` maps head token ids to their cross-layer entropy and is
    empty for strategies that never compute one.
    """

    step_index: int
    chosen_token: int
    final_scores: np.ndarray
    vhead: tuple[int, ...]
    entropies: dict[int, float]
    metadata: dict

    def __post_init__(self) -> None:
        self.final_scores.flags.writeable = False


def layer_distributions(
    record: StepRecord,
    header: TraceHeader,
    layers: Iterable[int],
    fill: float = DEFAULT_SPARSE_FILL,
) -> list[np.ndarray]:
    """Full-vocabulary softmax of each requested layer's logits."""
    logits = step_logits(record, header, fill)
    rows = []
    for layer in layers:
        if layer not in header.layer_indices:
            raise LayerNotCaptured(f"layer {layer} not in trace (has {header.layer_indices})")
        rows.append(kernels.softmax(logits[header.layer_position(layer)]))
    return rows


def build_cross_layer(
    token_id: int,
    layer_probs: list[np.ndarray],
    epsilon_denom: float = 1e-12,
) -> CrossLayerDistribution:
    """Normalize one token's per-layer probabilities to sum to 1.

    Raises DegenerateToken when the token is invisible at every layer in the
    set (total mass below ``epsilon_denom``); callers treat that as maximal
    entropy, i.e. no emergence signal at all.
    """
    if not layer_probs:
        raise InvalidInput("layer_probs cannot be empty")
    mass = np.array([p[token_id] for p in layer_probs], dtype=np.float64)
    total = mass.sum()
    if total < epsilon_denom:
        raise DegenerateToken(
            f"token {token_id} has cross-layer mass {total:.3e} below {epsilon_denom:.0e}"
        )
    return CrossLayerDistribution(token_id=token_id, q=mass / total)


def cross_layer_entropy(d: CrossLayerDistribution, sign: EntropySign = EntropySign.STANDARD) -> float:
    h = kernels.entropy(d.q)
    return h if sign == EntropySign.STANDARD else -h + 0.0


def vhead_filter(final_probs: np.ndarray, alpha: float) -> tuple[int, ...]:
    """Token ids whose final probability is at least alpha times the max."""
    if not 0 < alpha <= 1:
        raise InvalidConfig("alpha must lie in (0, 1]")
    threshold = alpha * final_probs.max()
    return tuple(int(v) for v in np.flatnonzero(final_probs >= threshold))


def resolve_layer_set(
    header: TraceHeader,
    policy: LayerSetPolicy,
    record: StepRecord | None = None,
    include_final: bool = False,
    fill: float = DEFAULT_SPARSE_FILL,
) -> tuple[int, ...]:
    """Turn a policy into concrete model layer indices for one step.

    Bucket arithmetic partitions every captured layer into ``bucket_count``
    contiguous runs (sizes as equal as possible, remainder on the later
    runs), then removes the final layer from the chosen run unless asked to
    keep it.  With 32 captured layers, bucket 3 of 4 is layers 24..31, which
    becomes 24..30 once the final layer drops out.
    """
    captured = header.layer_indices
    if policy.kind == "explicit":
        for layer in policy.layers:
            if layer not in captured:
                raise LayerNotCaptured(f"layer {layer} not captured")
        layers = policy.layers
        if not include_final:
            layers = tuple(l for l in layers if l != header.final_layer)
        if not layers:
            raise InvalidConfig("layer set is empty after excluding the final layer")
        return layers

    k = policy.bucket_count
    n = len(captured)
    if k > n:
        raise InvalidConfig(f"cannot split {n} layers into {k} buckets")
    buckets = _partition(captured, k)

    if policy.kind == "bucket":
        if not 0 <= policy.bucket_index < k:
            raise InvalidConfig(
                f"bucket_index {policy.bucket_index} out of range for {k} buckets"
            )
        chosen = buckets[policy.bucket_index]
    else:
        if record is None:
            raise InvalidConfig("dynamic_bucket needs a step record to score buckets")
        final_probs = layer_distributions(record, header, [header.final_layer], fill)[0]
        best_score = -1.0
        chosen = buckets[0]
        for bucket in buckets:
            members = [l for l in bucket if l != header.final_layer]
            if not members:
                continue
            probs = layer_distributions(record, header, members, fill)
            score = float(
                np.mean([kernels.js_divergence(p, final_probs) for p in probs])
            )
            if score > best_score:
                best_score = score
                chosen = bucket
    if not include_final:
        chosen = tuple(l for l in chosen if l != header.final_layer)
    if not chosen:
        raise InvalidConfig("layer set is empty after excluding the final layer")
    return chosen


def _partition(captured: tuple[int, ...], k: int) -> list[tuple[int, ...]]:
    base, extra = divmod(len(captured), k)
    buckets = []
    start = 0
    for i in range(k):
        size = base + (1 if i >= k - extra else 0)
        buckets.append(captured[start : start + size])
        start += size
    return buckets


def greedy_pick(record: StepRecord, header: TraceHeader, fill: float = DEFAULT_SPARSE_FILL) -> StepDecision:
    final_probs = layer_distributions(record, header, [header.final_layer], fill)[0]
    chosen = int(np.argmax(final_probs))
    return StepDecision(
        step_index=record.step_index,
        chosen_token=chosen,
        final_scores=final_probs,
        vhead=(chosen,),
        entropies={},
        metadata={"strategy": "greedy"},
    )


def end_adjust(record: StepRecord, header: TraceHeader, cfg: DecodeConfig) -> StepDecision:
    """Entropy-weighted adjustment of the final distribution.

    Head members get final probability times exp(-weight * H); everything
    else passes through untouched.  With renormalize on, the head's adjusted
    scores are rescaled to reclaim exactly the probability mass the head
    held originally, which keeps the mixed vector a distribution without
    moving the argmax inside the head.
    """
    if cfg.strategy != Strategy.END:
        raise InvalidConfig(f"end_adjust called with strategy {cfg.strategy.value}")
    final_probs = layer_distributions(record, header, [header.final_layer], cfg.sparse_fill)[0]
    layers = resolve_layer_set(
        header, cfg.layer_set, record, include_final=cfg.include_final, fill=cfg.sparse_fill
    )
    head = vhead_filter(final_probs, cfg.alpha)
    layer_probs = layer_distributions(record, header, layers, cfg.sparse_fill)
    max_entropy = float(np.log(len(layers)))

    entropies: dict[int, float] = {}
    scores = final_probs.copy()
    for token in head:
        try:
            dist = build_cross_layer(token, layer_probs, cfg.epsilon_denom)
            h = cross_layer_entropy(dist, cfg.entropy_sign)
        except DegenerateToken:
            h = max_entropy if cfg.entropy_sign == EntropySign.STANDARD else -max_entropy
        entropies[token] = h
        scores[token] = np.exp(-cfg.entropy_weight * h) * final_probs[token]

    if cfg.renormalize:
        head_idx = np.array(head, dtype=np.intp)
        original_mass = final_probs[head_idx].sum()
        adjusted_mass = scores[head_idx].sum()
        if adjusted_mass > 0:
            scores[head_idx] *= original_mass / adjusted_mass

    chosen = int(np.argmax(scores))
    return StepDecision(
        step_index=record.step_index,
        chosen_token=chosen,
        final_scores=scores,
        vhead=head,
        entropies=entropies,
        metadata={"strategy": "end", "layers": list(layers)},
    )


def dola_contrast(
    record: StepRecord,
    header: TraceHeader,
    candidate_layers: Iterable[int],
    alpha: float = 0.01,
    fill: float = DEFAULT_SPARSE_FILL,
) -> StepDecision:
    """Contrast the final layer against its most divergent candidate layer.

    The premature layer maximizes JS divergence against the final
    distribution (lowest index on ties).  Head tokens are scored by
    log P_final - log P_premature; within the head, score ties fall back to
    higher final probability, then to the lower token id.
    """
    candidates = tuple(candidate_layers)
    if not candidates:
        raise InvalidConfig("dola needs at least one candidate layer")
    final_probs = layer_distributions(record, header, [header.final_layer], fill)[0]
    candidate_probs = layer_distributions(record, header, candidates, fill)

    divergences = [kernels.js_divergence(p, final_probs) for p in candidate_probs]
    best = int(np.argmax(divergences))
    premature_layer = candidates[best]
    premature_probs = candidate_probs[best]

    head = vhead_filter(final_probs, alpha)
    scores = np.full(final_probs.shape, SCORE_FLOOR)
    eps = kernels.KL_SMOOTH_EPS
    chosen = head[0]
    chosen_key = None
    for token in head:
        contrast = float(
            np.log(max(final_probs[token], eps)) - np.log(max(premature_probs[token], eps))
        )
        scores[token] = contrast
        key = (contrast, float(final_probs[token]), -token)
        if chosen_key is None or key > chosen_key:
            chosen_key = key
            chosen = token
    return StepDecision(
        step_index=record.step_index,
        chosen_token=int(chosen),
        final_scores=scores,
        vhead=head,
        entropies={},
        metadata={
            "strategy": "dola",
            "premature_layer": int(premature_layer),
            "js_divergence": float(divergences[best]),
        },
    )


def decode_step(record: StepRecord, header: TraceHeader, cfg: DecodeConfig) -> StepDecision:
    if cfg.strategy == Strategy.GREEDY:
        return greedy_pick(record, header, cfg.sparse_fill)
    if cfg.strategy == Strategy.END:
        return end_adjust(record, header, cfg)
    candidates = resolve_layer_set(
        header, cfg.layer_set, record, include_final=False, fill=cfg.sparse_fill
    )
    return dola_contrast(record, header, candidates, cfg.alpha, cfg.sparse_fill)


def decode_stream(
    header: TraceHeader, steps: Iterable[StepRecord], cfg: DecodeConfig
) -> Iterator[StepDecision]:
    """Decode steps as they arrive; bad steps surface with their index."""
    for i, record in enumerate(steps):
        try:
            yield decode_step(record, header, cfg)
        except Exception as exc:
            raise StepError(i, exc) from exc


def decode_sequence(trace: LayerTrace, cfg: DecodeConfig) -> list[StepDecision]:
    """One StepDecision per step.

    Steps are scored independently; the trace pins the context, so choosing
    a different token here cannot alter later steps' logits.
    """
    return list(decode_stream(trace.header, trace.steps, cfg))
