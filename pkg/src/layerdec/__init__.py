"""Cross-layer entropy decoding over recorded per-layer logits.

The package splits into small layers: ``kernels`` has the numeric
primitives, ``trace`` the binary trace format, ``decoding`` the per-step
strategies, ``synth`` the deterministic trace generator, ``evalharness``
the scoring and diagnostics, and ``cli`` the command line front end.
"""

from .decoding import (
    CrossLayerDistribution,
    DecodeConfig,
    EntropySign,
    LayerSetPolicy,
    StepDecision,
    Strategy,
    build_cross_layer,
    cross_layer_entropy,
    decode_sequence,
    decode_step,
    decode_stream,
    dola_contrast,
    end_adjust,
    greedy_pick,
    layer_distributions,
    resolve_layer_set,
    vhead_filter,
)
from .errors import (
    DegenerateToken,
    EngineError,
    FormatError,
    InvalidConfig,
    InvalidExample,
    InvalidInput,
    InvalidSpec,
    InvalidTrace,
    IoError,
    LayerNotCaptured,
    StepError,
    TruncatedError,
    VersionError,
)
from .evalharness import (
    EvalReport,
    KlProfile,
    MCExample,
    QAExample,
    evaluate,
    layer_kl_profile,
    load_fixture_dir,
    mc_metrics,
    qa_metrics,
    score_option,
    throughput_bench,
    token_trajectory,
)
from .kernels import entropy, js_divergence, kl_divergence, log_softmax, softmax
from .synth import (
    ScenarioSpec,
    ScenarioStep,
    TokenProfile,
    generate,
    load_scenario,
    overtake_fixture,
    scenario_from_dict,
)
from .trace import (
    Encoding,
    LayerTrace,
    StepRecord,
    TraceHeader,
    densify,
    iter_steps,
    read_header,
    read_trace,
    read_trace_file,
    write_trace,
    write_trace_file,
)

__version__ = "0.1.0"
