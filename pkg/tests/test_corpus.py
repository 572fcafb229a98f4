from dataclasses import replace

import numpy as np
import pytest

from editlab.errors import ConfigError, ContractError
from editlab.bench.corpus import (all_templates, split_templates, generate_corpus, heldout_functions, render_function,
                                  MIN_FUNCTIONS_PER_MAPPING)
from editlab.bench.mappings import ApiMapping, default_mappings, libraries_for, validate_mappings, DEFAULT_LIBRARIES
from editlab.bench.vocab import Vocabulary, build_vocabulary, EOL, BOS, EOF, MAX_VOCAB_SIZE
from editlab.utils.misc import contains_subsequence


def test_default_mappings_valid(mappings, vocab):
    assert len(mappings) == 16
    assert len({m.library for m in mappings}) == 4
    validate_mappings(mappings, vocab)
    with pytest.raises(ConfigError):
        default_mappings(0)


def test_validate_mappings_rejects():
    m = ApiMapping("tsr", ("tsr", ".", "old"), ("tsr", ".", "old"))
    with pytest.raises(ConfigError):
        validate_mappings([m])

    a = ApiMapping("tsr", ("tsr", ".", "old"), ("tsr", ".", "new"))
    with pytest.raises(ConfigError):
        validate_mappings([a, a])

    inner = ApiMapping("tsr", ("tsr", ".", "ops"), ("tsr", ".", "other"))
    outer = ApiMapping("tsr", ("tsr", ".", "ops", ".", "x"), ("tsr", ".", "y"))
    with pytest.raises(ConfigError):
        validate_mappings([inner, outer])

    with pytest.raises(ConfigError):
        validate_mappings([ApiMapping("tsr", ("tsr", ".", "zz"), ("tsr", ".", "yy"))], build_vocabulary([], []))


def test_vocabulary(vocab):
    assert len(vocab) <= MAX_VOCAB_SIZE
    assert vocab.decode(vocab.encode([BOS, "def", EOL])) == [BOS, "def", EOL]
    assert vocab.kind("tsr") == "alias"
    assert Vocabulary.from_dict(vocab.to_dict()) == vocab
    with pytest.raises(ContractError):
        vocab.encode(["not_a_token"])
    with pytest.raises(ConfigError):
        Vocabulary(["a", "a"], ["ident", "ident"])


def test_templates_split():
    training, heldout = split_templates(0)
    assert not set(training) & set(heldout)
    assert len(training) + len(heldout) == len(all_templates())
    assert split_templates(0) == split_templates(0)


def test_render_function_shape(mappings, libraries):
    m = mappings[0]
    lib = [lib for lib in libraries if lib.alias == m.library][0]
    f = render_function(m, lib, ("helper", "add", "scale"), np.random.default_rng(0))
    assert f.tokens[0] == BOS and f.tokens[-1] == EOF
    assert f.prompt[-1] == EOL
    assert contains_subsequence(f.line, m.deprecated)
    assert contains_subsequence(f.updated_line(), m.updated)
    assert not contains_subsequence(f.updated_line(), m.deprecated)
    stripped = replace(f, line=[t for t in f.line if t not in m.deprecated])
    with pytest.raises(ContractError, match="not found"):
        stripped.updated_line()
    # context statements plus the def line
    assert f.prompt.count(EOL) == 4

    with pytest.raises(ContractError):
        render_function(m, DEFAULT_LIBRARIES[1], ("add", "add"), np.random.default_rng(0))


def test_generate_corpus(mappings, libraries, vocab):
    corpus = generate_corpus(mappings[:2], libraries, 2 * MIN_FUNCTIONS_PER_MAPPING, seed=3, vocab=vocab)
    assert len(corpus) == 2 * MIN_FUNCTIONS_PER_MAPPING
    assert corpus == generate_corpus(mappings[:2], libraries, 2 * MIN_FUNCTIONS_PER_MAPPING, seed=3, vocab=vocab)
    for m in mappings[:2]:
        n = sum(contains_subsequence(seq, m.deprecated) for seq in corpus)
        assert n == MIN_FUNCTIONS_PER_MAPPING
    # no function teaches the updated API
    assert not any(contains_subsequence(seq, m.updated) for seq in corpus for m in mappings[:2])

    assert generate_corpus(mappings, libraries, 0, seed=3) == []
    with pytest.raises(ContractError):
        generate_corpus(mappings, libraries, 10, seed=3)


def test_heldout_functions_use_heldout_templates(mappings, libraries):
    _, heldout = split_templates(0)
    funcs = heldout_functions(mappings[:3], libraries_for(mappings[:3]), 5, seed=0, stream=11)
    assert len(funcs) == 15
    assert all(f.template in set(heldout) for f in funcs)
    for m in mappings[:3]:
        prompts = [tuple(f.prompt) for f in funcs if f.mapping == m]
        assert len(set(prompts)) == len(prompts)
