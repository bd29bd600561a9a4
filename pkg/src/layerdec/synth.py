"""Deterministic synthetic layer-logit traces.

Real decoder behavior hinges on how a token's probability evolves across
layers, so the test bed manufactures exactly that: ``factual_sharp`` tokens
sit at a low base logit and ramp up sharply near the top of the stack, while
``easy_flat`` tokens hold an essentially constant logit the whole way.  Both
shapes are drawn with small seeded noise, tight enough that the contracts
(ramp visible in logit space, flat tokens varying by well under 0.1 in the
upper half) survive every draw.

Scenario files are plain JSON; see ``docs/scenario-format.md``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpec, IoError
from .trace import Encoding, LayerTrace, StepRecord, TraceHeader

VALID_KINDS = ("factual_sharp", "easy_flat", "distractor")

# Ramp overshoot beyond the requested magnitude; absorbs the worst-case
# profiled-cell noise (two draws clipped to +-0.045) with room to spare.
GROWTH_MARGIN = 0.2
PROFILE_NOISE_SIGMA = 0.02
PROFILE_NOISE_CLIP = 0.045


@dataclass(frozen=True)
class TokenProfile:
    token_id: int
    kind: str
    base_logit: float = 0.0
    growth_onset_layer: float = 0.75
    growth_magnitude: float = 0.0
    noise_seed: int = 0

    def validate(self) -> None:
        if self.kind not in VALID_KINDS:
            raise InvalidSpec(f"unknown profile kind {self.kind!r}")
        if not 0.0 <= self.growth_onset_layer <= 1.0:
            raise InvalidSpec("growth_onset_layer must lie in [0, 1]")
        if self.growth_magnitude < 0:
            raise InvalidSpec("growth_magnitude must be non-negative")
        if self.kind == "factual_sharp":
            if self.growth_magnitude <= 0:
                raise InvalidSpec("factual_sharp needs growth_magnitude > 0")
            if self.growth_onset_layer < 0.5:
                raise InvalidSpec("factual_sharp needs growth_onset_layer >= 0.5")


@dataclass(frozen=True)
class ScenarioStep:
    """One generation step; ``profiles`` of None inherits the scenario set."""

    label: str = ""
    profiles: tuple[TokenProfile, ...] | None = None


@dataclass(frozen=True)
class ScenarioSpec:
    vocab_size: int
    num_layers: int
    profiles: tuple[TokenProfile, ...] = ()
    steps: tuple[ScenarioStep, ...] = ()
    seed: int = 0
    noise_sigma: float = 0.05

    def validate(self) -> None:
        if self.vocab_size < 1 or self.num_layers < 1:
            raise InvalidSpec("vocab_size and num_layers must be positive")
        if self.noise_sigma < 0:
            raise InvalidSpec("noise_sigma must be non-negative")
        for profiles in self._per_step_profiles():
            seen = set()
            for p in profiles:
                p.validate()
                if p.token_id in seen:
                    raise InvalidSpec(f"duplicate profile for token {p.token_id}")
                if not 0 <= p.token_id < self.vocab_size:
                    raise InvalidSpec(f"profile token {p.token_id} outside vocabulary")
                seen.add(p.token_id)

    def _per_step_profiles(self) -> list[tuple[TokenProfile, ...]]:
        steps = self.steps if self.steps else (ScenarioStep(),)
        return [s.profiles if s.profiles is not None else self.profiles for s in steps]

    @property
    def step_labels(self) -> tuple[str, ...]:
        steps = self.steps if self.steps else (ScenarioStep(),)
        return tuple(s.label for s in steps)


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _trajectory(profile: TokenProfile, num_layers: int) -> np.ndarray:
    """Noise-free logit per layer for one profiled token."""
    if num_layers == 1:
        x = np.ones(1)
    else:
        x = np.arange(num_layers) / (num_layers - 1)
    if profile.kind == "factual_sharp":
        onset = profile.growth_onset_layer
        span = max(1.0 - onset, 1e-9)
        ramp = _smoothstep((x - onset) / span)
        return profile.base_logit + (profile.growth_magnitude + GROWTH_MARGIN) * ramp
    return np.full(num_layers, float(profile.base_logit))


def generate(spec: ScenarioSpec) -> LayerTrace:
    """Build a dense trace from a scenario; same spec, same bytes, always."""
    spec.validate()
    n, v = spec.num_layers, spec.vocab_size
    per_step = spec._per_step_profiles()
    steps = []
    for step_idx, profiles in enumerate(per_step):
        bg_rng = np.random.default_rng([spec.seed, 0, step_idx])
        logits = bg_rng.normal(0.0, spec.noise_sigma, size=(n, v))
        for p in profiles:
            col = _trajectory(p, n)
            p_rng = np.random.default_rng([spec.seed, 1, step_idx, p.noise_seed, p.token_id])
            if p.kind == "distractor":
                col = col + p_rng.normal(0.0, spec.noise_sigma, size=n)
            else:
                noise = p_rng.normal(0.0, PROFILE_NOISE_SIGMA, size=n)
                col = col + np.clip(noise, -PROFILE_NOISE_CLIP, PROFILE_NOISE_CLIP)
            logits[:, p.token_id] = col
        steps.append(StepRecord(step_index=step_idx, dense=logits.astype(np.float32)))
    header = TraceHeader(
        vocab_size=v,
        layer_indices=tuple(range(n)),
        encoding=Encoding.DENSE_F32,
        step_count=len(steps),
    )
    return LayerTrace(header=header, steps=steps)


# -- canned argmax-flip fixture ---------------------------------------------

# One noise-free step over an 8-token vocabulary and 32 layers.  Token 0 is
# flat with the highest final probability (0.45); token 1 is invisible until
# layer 30 and lands at 0.35.  Greedy therefore picks 0, while the entropy
# adjustment at default settings suppresses 0 by roughly 1/49 and leaves 1
# nearly untouched, flipping the argmax.  The expected numbers below were
# computed symbolically at 50 decimal digits from the exact float32 logits
# and are pinned here for regression, independent of the decoder code path.
OVERTAKE_TOKEN_FLAT = 0
OVERTAKE_TOKEN_SHARP = 1
OVERTAKE_EXPECTED = {
    "greedy": {"chosen_token": 0},
    "end": {
        "chosen_token": 1,
        "adjusted_flat": 0.00918393366274106,
        "adjusted_sharp": 0.3456815896930911,
        "margin": 0.33649765603035003,
    },
    "end_lambda_zero": {"chosen_token": 0},
}


def overtake_fixture() -> tuple[LayerTrace, dict]:
    """Canned one-step trace where the adjustment flips the argmax."""
    v, n = 8, 32
    filler = 0.2 / 6
    final_p = np.array([0.45, 0.35] + [filler] * 6)
    early = np.log(np.array([0.45, 1e-6] + [filler] * 6))
    ramp = early.copy()
    ramp[1] = np.log(0.01)
    final = np.log(final_p)

    logits = np.empty((n, v), dtype=np.float32)
    logits[:30] = early.astype(np.float32)
    logits[30] = ramp.astype(np.float32)
    logits[31] = final.astype(np.float32)

    header = TraceHeader(
        vocab_size=v,
        layer_indices=tuple(range(n)),
        encoding=Encoding.DENSE_F32,
        tokenizer_id="fixture",
        step_count=1,
    )
    trace = LayerTrace(header=header, steps=[StepRecord(step_index=0, dense=logits)])
    return trace, OVERTAKE_EXPECTED


# -- scenario (de)serialization ----------------------------------------------

def scenario_from_dict(data: dict) -> ScenarioSpec:
    try:
        profiles = tuple(_profile_from_dict(p) for p in data.get("profiles", []))
        steps = tuple(
            ScenarioStep(
                label=s.get("label", ""),
                profiles=(
                    tuple(_profile_from_dict(p) for p in s["profiles"])
                    if "profiles" in s
                    else None
                ),
            )
            for s in data.get("steps", [])
        )
        spec = ScenarioSpec(
            vocab_size=int(data["vocab_size"]),
            num_layers=int(data["num_layers"]),
            profiles=profiles,
            steps=steps,
            seed=int(data.get("seed", 0)),
            noise_sigma=float(data.get("noise_sigma", 0.05)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidSpec(f"malformed scenario: {exc}") from exc
    spec.validate()
    return spec


def _profile_from_dict(data: dict) -> TokenProfile:
    return TokenProfile(
        token_id=int(data["token_id"]),
        kind=str(data["kind"]),
        base_logit=float(data.get("base_logit", 0.0)),
        growth_onset_layer=float(data.get("growth_onset_layer", 0.75)),
        growth_magnitude=float(data.get("growth_magnitude", 0.0)),
        noise_seed=int(data.get("noise_seed", 0)),
    )


def load_scenario(path) -> ScenarioSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read scenario {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"scenario {path} is not valid JSON: {exc}") from exc
    return scenario_from_dict(data)
