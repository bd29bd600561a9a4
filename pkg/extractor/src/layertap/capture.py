"""Per-layer logit capture from a causal language model.

Layer convention: index k means "the hidden state after k transformer
blocks", so 0 is the embedding output and L (the block count) is the final
layer. Intermediate rows apply the model's final normalization before the
vocabulary head, the usual logit-lens-with-final-norm convention, so every
layer's logits live on the head's scale and early layers are comparable to
late ones. This is a chosen convention and is worth knowing when comparing
against other instrumentations that project raw hidden states. The final
row is not recomputed through that path at all: it is copied from the
model's own output logits, so the trace's last layer is bit-for-bit what
the model itself predicts.

Generation is plain greedy (ties to the lowest token id) and runs WITHOUT a
key-value cache: each step is a fresh full forward over the whole prefix.
That costs quadratic time in sequence length, which is acceptable at
research scale, and buys exact reproducibility: every captured row equals
what an ordinary one-shot forward at the same context produces, with no
cached-path numerical drift.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, ExtractionError
from . import writer

# Final-normalization module names across common decoder families.
_NORM_ATTRS = ("norm", "ln_f", "final_layernorm", "final_layer_norm", "layer_norm")


@dataclass(frozen=True)
class ExtractionConfig:
    """What to extract: model, prompts, layers, encoding, budget.

    ``layers`` of None taps every layer (0..L inclusive); an explicit tuple
    taps exactly those indices. The final layer is always captured either
    way. ``topk`` of 0 writes dense rows; a positive value writes that many
    exact top-scoring (id, logit) pairs per layer.
    """

    model_id: str
    prompts_path: str
    max_new_tokens: int
    layers: tuple[int, ...] | None = None
    topk: int = 0
    device: str = "cpu"

    def validate(self) -> None:
        if not self.model_id:
            raise ConfigError("a model identifier is required")
        if self.max_new_tokens < 1:
            raise ConfigError("max_new_tokens must be at least 1")
        if self.topk < 0:
            raise ConfigError("topk must be non-negative (0 = dense)")
        if self.layers is not None:
            if not self.layers:
                raise ConfigError("explicit layer list cannot be empty")
            if any(l < 0 for l in self.layers):
                raise ConfigError("layer indices must be non-negative")


def extract(config: ExtractionConfig, output_dir) -> list[Path]:
    """Run greedy generation per prompt and write one trace file each.

    Returns the written paths in prompt order. Blank prompt lines are
    skipped. Every file is complete and atomically renamed into place
    before the next prompt starts.
    """
    config.validate()
    out_root = Path(output_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    prompts = _read_prompts(config.prompts_path)
    if not prompts:
        print("layertap: no prompts found, nothing to do", file=sys.stderr)
        return []

    model, tokenizer = _load(config.model_id, config.device)
    num_blocks = int(model.config.num_hidden_layers)
    final_layer = num_blocks
    tapped = _resolve_layers(config.layers, final_layer)
    norm = _final_norm(model)
    head = model.get_output_embeddings()
    if head is None:
        raise ExtractionError(f"{config.model_id}: model has no output head")

    paths = []
    for i, prompt in enumerate(prompts):
        path = out_root / f"prompt{i:03d}.trace"
        try:
            _extract_one(prompt, i, path, config, model, tokenizer, tapped, norm, head)
        except torch.cuda.OutOfMemoryError as exc:
            raise ExtractionError(
                f"out of memory on prompt {i}: tap fewer layers, lower topk, "
                f"or try --device cpu ({exc})"
            ) from exc
        except RuntimeError as exc:
            if "out of memory" in str(exc).lower():
                raise ExtractionError(
                    f"out of memory on prompt {i}: tap fewer layers, lower "
                    f"topk, or try --device cpu ({exc})"
                ) from exc
            raise
        paths.append(path)
    return paths


def _extract_one(prompt, index, path, config, model, tokenizer, tapped, norm, head):
    ids = tokenizer(prompt, return_tensors="pt").input_ids.to(model.device)
    if ids.numel() == 0:
        raise ExtractionError(f"prompt {index} produced no tokens")
    steps = []
    vocab_size = None
    with torch.inference_mode():
        for step in range(config.max_new_tokens):
            out = model(input_ids=ids, output_hidden_states=True, use_cache=False)
            hidden = out.hidden_states
            final_row = out.logits[0, -1, :]
            vocab_size = int(final_row.shape[0])
            rows = []
            for layer in tapped:
                if layer == len(hidden) - 1:
                    rows.append(final_row)
                else:
                    rows.append(head(norm(hidden[layer][0, -1, :])))
            matrix = (
                torch.stack(rows).to(torch.float32).cpu().numpy().copy()
            )
            context = ids[0].cpu().numpy().astype("<u4")
            steps.append((step, context, matrix))
            next_id = int(np.argmax(matrix[-1]))
            ids = torch.cat(
                [ids, torch.tensor([[next_id]], device=ids.device)], dim=1
            )
    if config.topk > vocab_size:
        raise ConfigError(f"topk {config.topk} exceeds vocabulary size {vocab_size}")

    blobs = [
        writer.header_bytes(
            vocab_size=vocab_size,
            layer_indices=tapped,
            topk=config.topk,
            tokenizer_id=config.model_id,
            step_count=len(steps),
        )
    ]
    for step, context, matrix in steps:
        if config.topk:
            kept_ids = np.empty((len(tapped), config.topk), dtype="<u4")
            kept_logits = np.empty((len(tapped), config.topk), dtype="<f4")
            for j in range(len(tapped)):
                kept_ids[j], kept_logits[j] = writer.top_pairs(matrix[j], config.topk)
            blobs.append(writer.sparse_step_bytes(step, context, kept_ids, kept_logits))
        else:
            blobs.append(writer.dense_step_bytes(step, context, matrix))
    written = writer.atomic_write(path, blobs)
    print(
        f"layertap: wrote {path}: {len(steps)} steps, {len(tapped)} layers, "
        f"{written} bytes",
        file=sys.stderr,
    )


def _resolve_layers(layers, final_layer: int) -> tuple[int, ...]:
    if layers is None:
        return tuple(range(final_layer + 1))
    for l in layers:
        if l > final_layer:
            raise ConfigError(
                f"layer {l} out of range: the model has layers 0..{final_layer}"
            )
    return tuple(sorted(set(layers) | {final_layer}))


def _load(model_id: str, device: str):
    from transformers import AutoModelForCausalLM, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(model_id)
        model = AutoModelForCausalLM.from_pretrained(model_id)
    except Exception as exc:
        raise ExtractionError(f"cannot load model {model_id!r}: {exc}") from exc
    try:
        model = model.to(device)
    except (RuntimeError, ValueError) as exc:
        raise ExtractionError(f"cannot move model to {device!r}: {exc}") from exc
    model.eval()
    return model, tokenizer


def _final_norm(model) -> torch.nn.Module:
    base = model.base_model
    for name in _NORM_ATTRS:
        module = getattr(base, name, None)
        if isinstance(module, torch.nn.Module):
            return module
    raise ExtractionError(
        f"cannot locate the final normalization on {type(base).__name__}; "
        f"tried {', '.join(_NORM_ATTRS)}"
    )


def _read_prompts(path) -> list[str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return [line.rstrip("\n") for line in fh if line.strip()]
    except OSError as exc:
        raise ExtractionError(f"cannot read prompts {path}: {exc}") from exc
