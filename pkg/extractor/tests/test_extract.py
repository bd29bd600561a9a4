"""End-to-end extraction against a tiny random-weight model built locally.

The model is constructed from a config with a fixed seed and saved to a
temp directory, so nothing touches the network and every forward is
reproducible. Fidelity tests recompute rows with plain transformers calls
and require bit-exact agreement with the trace, which the no-cache design
makes possible.
"""

import hashlib

import numpy as np
import pytest
import torch

from layerdec import DecodeConfig, decode_sequence, read_trace_file

from layertap import ExtractionConfig, extract
from layertap.cli import main as cli_main
from layertap.errors import ConfigError

VOCAB = 32
BLOCKS = 4
SEED = 7


@pytest.fixture(scope="module")
def model_dir(tmp_path_factory):
    from tokenizers import Tokenizer, models, pre_tokenizers
    from transformers import LlamaConfig, LlamaForCausalLM, PreTrainedTokenizerFast

    root = tmp_path_factory.mktemp("tinymodel")
    torch.manual_seed(SEED)
    config = LlamaConfig(
        vocab_size=VOCAB,
        hidden_size=32,
        intermediate_size=64,
        num_hidden_layers=BLOCKS,
        num_attention_heads=4,
        num_key_value_heads=4,
        max_position_embeddings=64,
        bos_token_id=30,
        eos_token_id=31,
        pad_token_id=29,
    )
    LlamaForCausalLM(config).save_pretrained(root)

    vocab = {f"tok{i}": i for i in range(28)}
    vocab.update({"[UNK]": 28, "[PAD]": 29, "[BOS]": 30, "[EOS]": 31})
    tok = Tokenizer(models.WordLevel(vocab=vocab, unk_token="[UNK]"))
    tok.pre_tokenizer = pre_tokenizers.Whitespace()
    PreTrainedTokenizerFast(
        tokenizer_object=tok, unk_token="[UNK]", pad_token="[PAD]",
        bos_token="[BOS]", eos_token="[EOS]",
    ).save_pretrained(root)
    return str(root)


@pytest.fixture(scope="module")
def prompts_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("prompts") / "prompts.txt"
    path.write_text("tok3 tok5 tok1\n\ntok7 tok2\n", encoding="utf-8")
    return str(path)


def _config(model_dir, prompts_file, **overrides):
    base = dict(
        model_id=model_dir, prompts_path=prompts_file, max_new_tokens=3,
        layers=None, topk=0, device="cpu",
    )
    base.update(overrides)
    return ExtractionConfig(**base)


@pytest.fixture(scope="module")
def dense_traces(model_dir, prompts_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("dense")
    paths = extract(_config(model_dir, prompts_file), out)
    return [read_trace_file(p) for p in paths], paths


def test_traces_validate_under_engine_reader(dense_traces):
    traces, paths = dense_traces
    assert len(paths) == 2  # the blank prompt line is skipped
    for trace in traces:
        trace.validate()
        assert trace.header.vocab_size == VOCAB
        assert trace.header.layer_indices == tuple(range(BLOCKS + 1))
        assert trace.header.step_count == 3
        assert trace.header.encoding == 0


def test_context_grows_by_one_token_per_step(dense_traces):
    traces, _ = dense_traces
    for trace in traces:
        lengths = [record.context_token_ids.size for record in trace.steps]
        assert lengths[0] >= 1
        assert lengths == [lengths[0] + i for i in range(len(lengths))]


def test_final_rows_match_plain_forwards_bit_for_bit(model_dir, dense_traces):
    from transformers import AutoModelForCausalLM

    model = AutoModelForCausalLM.from_pretrained(model_dir).eval()
    traces, _ = dense_traces
    for trace in traces:
        for record in trace.steps:
            ids = torch.from_numpy(record.context_token_ids.astype(np.int64))[None, :]
            with torch.inference_mode():
                logits = model(input_ids=ids, use_cache=False).logits[0, -1, :]
            assert np.array_equal(record.dense[-1], logits.cpu().numpy())


def test_greedy_chain_is_argmax_of_final_rows(dense_traces):
    traces, _ = dense_traces
    for trace in traces:
        for earlier, later in zip(trace.steps, trace.steps[1:]):
            chosen = int(later.context_token_ids[-1])
            assert chosen == int(np.argmax(earlier.dense[-1]))


def test_intermediate_rows_use_final_norm_before_head(model_dir, dense_traces):
    from transformers import AutoModelForCausalLM

    model = AutoModelForCausalLM.from_pretrained(model_dir).eval()
    head = model.get_output_embeddings()
    norm = model.base_model.norm
    traces, _ = dense_traces
    record = traces[0].steps[0]
    ids = torch.from_numpy(record.context_token_ids.astype(np.int64))[None, :]
    with torch.inference_mode():
        out = model(input_ids=ids, output_hidden_states=True, use_cache=False)
        for layer in (0, 2):
            row = head(norm(out.hidden_states[layer][0, -1, :]))
            assert np.array_equal(record.dense[layer], row.cpu().numpy())


def test_final_layer_forced_into_explicit_sets(model_dir, prompts_file, tmp_path):
    paths = extract(_config(model_dir, prompts_file, layers=(1, 2)), tmp_path)
    header = read_trace_file(paths[0]).header
    assert header.layer_indices == (1, 2, BLOCKS)


def test_sparse_rows_are_exact_topk_of_dense(model_dir, prompts_file, dense_traces, tmp_path):
    k = 5
    paths = extract(_config(model_dir, prompts_file, topk=k), tmp_path)
    dense, _ = dense_traces
    for sparse_path, dense_trace in zip(paths, dense):
        sparse_trace = read_trace_file(sparse_path)
        assert sparse_trace.header.topk == k
        for s_rec, d_rec in zip(sparse_trace.steps, dense_trace.steps):
            for row_idx in range(len(dense_trace.header.layer_indices)):
                row = d_rec.dense[row_idx]
                order = np.lexsort((np.arange(row.size), -row))[:k]
                expect = np.sort(order)
                assert np.array_equal(s_rec.sparse_ids[row_idx], expect)
                assert np.array_equal(s_rec.sparse_logits[row_idx], row[expect])


def test_two_runs_produce_identical_checksums(model_dir, prompts_file, tmp_path):
    first = extract(_config(model_dir, prompts_file), tmp_path / "a")
    second = extract(_config(model_dir, prompts_file), tmp_path / "b")
    digests_a = [hashlib.sha256(p.read_bytes()).hexdigest() for p in first]
    digests_b = [hashlib.sha256(p.read_bytes()).hexdigest() for p in second]
    assert digests_a == digests_b
    assert all(p.stat().st_size > 35 for p in first)


def test_engine_decodes_extracted_trace(dense_traces):
    traces, _ = dense_traces
    decisions = decode_sequence(traces[0], DecodeConfig())
    assert len(decisions) == 3
    for decision in decisions:
        assert 0 <= decision.chosen_token < VOCAB


def test_cli_writes_and_prints_paths(model_dir, prompts_file, tmp_path, capsys):
    code = cli_main([
        "--model", model_dir, "--prompts", prompts_file,
        "--output-dir", str(tmp_path), "--max-new-tokens", "2",
        "--layers", "0,2", "--topk", "3",
    ])
    assert code == 0
    printed = capsys.readouterr().out.strip().splitlines()
    assert len(printed) == 2
    header = read_trace_file(printed[0]).header
    assert header.layer_indices == (0, 2, BLOCKS)
    assert header.topk == 3


def test_cli_exit_codes(model_dir, prompts_file, tmp_path):
    out = str(tmp_path)
    assert cli_main(["--model", str(tmp_path / "missing"), "--prompts", prompts_file,
                     "--output-dir", out]) == 2
    assert cli_main(["--model", model_dir, "--prompts", str(tmp_path / "nope.txt"),
                     "--output-dir", out]) == 2
    assert cli_main(["--model", model_dir, "--prompts", prompts_file,
                     "--output-dir", out, "--max-new-tokens", "0"]) == 1
    assert cli_main(["--model", model_dir, "--prompts", prompts_file,
                     "--output-dir", out, "--layers", "a,b"]) == 1
    assert cli_main(["--model", model_dir, "--prompts", prompts_file,
                     "--output-dir", out, "--layers", "9"]) == 1
    assert cli_main(["--model", model_dir, "--prompts", prompts_file,
                     "--output-dir", out, "--topk", "999"]) == 1
    assert cli_main(["--model", model_dir, "--unknown-flag"]) == 1


def test_config_validation():
    with pytest.raises(ConfigError):
        ExtractionConfig(model_id="", prompts_path="p", max_new_tokens=1).validate()
    with pytest.raises(ConfigError):
        ExtractionConfig(model_id="m", prompts_path="p", max_new_tokens=0).validate()
    with pytest.raises(ConfigError):
        ExtractionConfig(model_id="m", prompts_path="p", max_new_tokens=1,
                         layers=()).validate()
    with pytest.raises(ConfigError):
        ExtractionConfig(model_id="m", prompts_path="p", max_new_tokens=1,
                         topk=-1).validate()


def test_empty_prompt_file_extracts_nothing(model_dir, tmp_path):
    empty = tmp_path / "empty.txt"
    empty.write_text("\n\n", encoding="utf-8")
    paths = extract(_config(model_dir, str(empty)), tmp_path / "out")
    assert paths == []
