"""Generator for functions in the synthetic coding language

A function is a ``def`` line, 2 to 5 context statements, one invocation line that
calls an API of the mapping table, and a ``return`` line::

    <bos> def merge_parts ( a , b ) : <eol>
    parts = a * 3 <eol>
    tensor = tsr . zeros ( parts ) <eol>
    merged = tsr . cat_rows ( tensor ) <eol>
    return merged <eol> <eof>

Context identifiers are drawn from the API's cue words and its library's nouns,
helper calls use the library alias, so the context predicts the library and the API.
The invocation argument is always the variable assigned by the last statement.

The sequence of statement kinds is the function's template.  Templates are split,
by seed, into a training set and a held-out set, so benchmark inputs never share a
template with training code.
"""
import itertools
from dataclasses import dataclass

import numpy as np

from editlab.errors import ConfigError, ContractError
from editlab.bench.vocab import BOS, EOL, EOF, GENERIC_PARAMS, NEUTRAL_IDENTS
from editlab.utils.misc import find_subsequence

STATEMENT_KINDS = ("helper", "scale", "add", "pack", "index")
MIN_STATEMENTS = 2
MAX_STATEMENTS = 5
MIN_FUNCTIONS_PER_MAPPING = 50


@dataclass
class SyntheticFunction:
    """one generated function

    Parameters
    ----------
    mapping: ApiMapping
    template: tuple(str)
        statement kinds of the context
    tokens: list(str)
        whole function, deprecated API at the invocation line
    prompt_len: int
        number of tokens before the invocation line
    line: list(str)
        invocation line with the deprecated API, no end-of-line
    """
    mapping: object
    template: tuple
    tokens: list
    prompt_len: int
    line: list

    @property
    def prompt(self):
        return self.tokens[:self.prompt_len]

    @property
    def template_id(self):
        return "-".join(self.template)

    def updated_line(self):
        """invocation line with the deprecated API replaced by the updated one"""
        dep = list(self.mapping.deprecated)
        i = find_subsequence(self.line, dep)
        if i < 0:
            raise ContractError(f"{' '.join(dep)} not found in {' '.join(self.line)}")
        return self.line[:i] + list(self.mapping.updated) + self.line[i + len(dep):]


def all_templates():
    return [t for n in range(MIN_STATEMENTS, MAX_STATEMENTS + 1)
            for t in itertools.product(STATEMENT_KINDS, repeat=n)]


def split_templates(seed, heldout_fraction=0.2):
    """seeded partition of all templates into (training, held-out) lists"""
    templates = all_templates()
    order = np.random.default_rng([seed, 7]).permutation(len(templates))
    n_heldout = max(1, int(round(heldout_fraction * len(templates))))
    heldout = sorted(templates[i] for i in order[:n_heldout])
    training = sorted(templates[i] for i in order[n_heldout:])
    return training, heldout


def _statement(kind, var, defined, library, rng):
    src = defined[int(rng.integers(len(defined)))]
    src2 = defined[int(rng.integers(len(defined)))]
    digit = str(int(rng.integers(1, 10)))
    if kind == "helper":
        helper = library.helpers[int(rng.integers(len(library.helpers)))]
        return [var, "=", library.alias, ".", helper, "(", src, ")"]
    if kind == "scale":
        return [var, "=", src, "*", digit]
    if kind == "add":
        return [var, "=", src, "+", src2]
    if kind == "pack":
        return [var, "=", "[", src, ",", src2, "]"]
    if kind == "index":
        return [var, "=", src, "[", digit, "]"]
    raise ContractError(f"unknown statement kind {kind}")


def vary_statement(stmt, rng, variation):
    """semantics preserving surface variation of one statement line"""
    stmt = list(stmt)
    if variation <= 0:
        return stmt
    if len(stmt) == 5 and stmt[3] == "+" and rng.random() < variation:
        stmt = stmt[:2] + [stmt[4], "+", stmt[2]]
    if rng.random() < variation:
        stmt = stmt[:2] + ["("] + stmt[2:] + [")"]
    return stmt


def render_function(mapping, library, template, rng, variation=0.0):
    """generate one function for ``mapping`` following ``template``

    Parameters
    ----------
    mapping: ApiMapping
    library: Library
        library of the mapping
    template: tuple(str)
        statement kinds
    rng: numpy.random.Generator
    variation: float, default 0.0
        probability of surface variations (operand swaps, parentheses, joined lines,
        neutral identifiers), used to make training code less uniform

    Returns
    -------
    SyntheticFunction
    """
    if library.alias != mapping.library:
        raise ContractError(f"library {library.alias} does not match mapping {mapping.api_id}")
    params = [str(p) for p in rng.choice(GENERIC_PARAMS, 2, replace=False)]

    first = [mapping.cues[int(rng.integers(len(mapping.cues)))]] if mapping.cues else []
    others = [c for c in mapping.cues if c not in first] + list(library.nouns)
    others = [others[i] for i in rng.permutation(len(others))]
    names = first + others + [n for n in NEUTRAL_IDENTS]
    if variation > 0:
        names = [NEUTRAL_IDENTS[int(rng.integers(len(NEUTRAL_IDENTS)))] if rng.random() < variation / 2 else nm
                 for nm in names]
        # keep names distinct
        names = list(dict.fromkeys(names))
    names = [nm for nm in names if nm not in params]

    defined = list(params)
    lines = [[BOS, "def", mapping.fname, "(", params[0], ",", params[1], ")", ":"]]
    for kind, var in zip(template, names):
        stmt = _statement(kind, var, defined, library, rng)
        lines.append(vary_statement(stmt, rng, variation))
        defined.append(var)

    tokens = []
    for line_i, line in enumerate(lines):
        if line_i >= 2 and variation > 0 and rng.random() < variation / 2:
            # join onto previous statement
            tokens[-1] = ";"
        tokens.extend(line + [EOL])
    prompt_len = len(tokens)

    invocation = [mapping.result, "="] + list(mapping.deprecated) + ["(", defined[-1], ")"]
    tokens.extend(invocation + [EOL, "return", mapping.result, EOL, EOF])
    return SyntheticFunction(mapping, tuple(template), tokens, prompt_len, invocation)


def _library_table(libraries):
    return {lib.alias: lib for lib in libraries}


def generate_functions(mappings, libraries, n_functions, templates, seed, variation=0.0):
    """``n_functions`` functions, mappings assigned round robin, then shuffled"""
    libs = _library_table(libraries)
    missing = {m.library for m in mappings} - set(libs)
    if missing:
        raise ConfigError(f"mappings refer to unknown libraries {sorted(missing)}")
    rng = np.random.default_rng(seed)
    funcs = []
    for i in range(n_functions):
        m = mappings[i % len(mappings)]
        template = templates[int(rng.integers(len(templates)))]
        funcs.append(render_function(m, libs[m.library], template, rng, variation=variation))
    order = rng.permutation(len(funcs))
    return [funcs[i] for i in order]


def generate_corpus(mappings, libraries, n_functions, seed, vocab=None, variation=0.15, heldout_fraction=0.2):
    """training corpus: token sequences over training templates, one deprecated call each

    Parameters
    ----------
    mappings: list(ApiMapping)
    libraries: list(Library)
    n_functions: int
        0, or at least 50 per mapping
    seed: int
    vocab: Vocabulary, optional
        if given, every token must belong to it
    variation: float, default 0.15
        surface variation probability
    heldout_fraction: float, default 0.2

    Returns
    -------
    corpus: list(list(str))
    """
    if n_functions == 0:
        return []
    if n_functions < MIN_FUNCTIONS_PER_MAPPING * len(mappings):
        raise ContractError(f"n_functions {n_functions} < {MIN_FUNCTIONS_PER_MAPPING} per mapping "
                            f"x {len(mappings)} mappings")
    training, _ = split_templates(seed, heldout_fraction)
    funcs = generate_functions(mappings, libraries, n_functions, training, [seed, 1], variation=variation)
    corpus = [f.tokens for f in funcs]
    if vocab is not None:
        unknown = sorted({t for seq in corpus for t in seq if t not in vocab})
        if unknown:
            raise ConfigError(f"vocabulary overflow, tokens {unknown} not in vocabulary")
    return corpus


def heldout_functions(mappings, libraries, n_per_mapping, seed, stream, heldout_fraction=0.2):
    """functions over held-out templates, ``n_per_mapping`` per mapping in mapping order

    ``stream`` separates independent draws (candidates, specificity pool, emission checks).
    Prompts are distinct within a mapping.
    """
    _, heldout = split_templates(seed, heldout_fraction)
    libs = _library_table(libraries)
    out = []
    for m_i, m in enumerate(mappings):
        rng = np.random.default_rng([seed, stream, m_i])
        seen = set()
        funcs = []
        attempts = 0
        while len(funcs) < n_per_mapping and attempts < 50 * n_per_mapping:
            attempts += 1
            f = render_function(m, libs[m.library], heldout[int(rng.integers(len(heldout)))], rng)
            key = tuple(f.prompt)
            if key in seen:
                continue
            seen.add(key)
            funcs.append(f)
        out.extend(funcs)
    return out
