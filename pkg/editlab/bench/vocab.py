"""Closed vocabulary of the synthetic coding language

Every token has a kind.  Rephrasing renames only ``ident`` tokens, and the API
extraction used for specificity keys off ``alias`` tokens.
"""
from editlab.errors import ConfigError, ContractError

BOS, EOL, EOF = "<bos>", "<eol>", "<eof>"
SPECIAL = [BOS, EOL, EOF]
KEYWORDS = ["def", "return"]
PUNCT = ["(", ")", ",", ".", ":", "=", "+", "*", "[", "]", ";"]
DIGITS = [str(d) for d in range(10)]
GENERIC_PARAMS = ["a", "b", "x", "y", "n", "data", "value", "item", "size", "count"]
NEUTRAL_IDENTS = [f"v{i}" for i in range(16)]

MAX_VOCAB_SIZE = 512


class Vocabulary:
    """ordered token list with kinds

    Parameters
    ----------
    tokens: list(str)
        distinct tokens, position is the token index
    kinds: list(str)
        kind of each token
    """

    def __init__(self, tokens, kinds):
        if len(tokens) != len(kinds):
            raise ConfigError(f"vocabulary has {len(tokens)} tokens but {len(kinds)} kinds")
        if len(set(tokens)) != len(tokens):
            dups = sorted({t for t in tokens if tokens.count(t) > 1})
            raise ConfigError(f"duplicate vocabulary tokens {dups}")
        if len(tokens) > MAX_VOCAB_SIZE:
            raise ConfigError(f"vocabulary overflow: {len(tokens)} > {MAX_VOCAB_SIZE} tokens")
        self.tokens = list(tokens)
        self.kinds = list(kinds)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    @property
    def eol_id(self):
        return self.index[EOL]

    def kind(self, token):
        return self.kinds[self.index[token]]

    def tokens_of_kind(self, kind):
        return [t for t, k in zip(self.tokens, self.kinds) if k == kind]

    def encode(self, tokens):
        try:
            return [self.index[t] for t in tokens]
        except KeyError as exc:
            raise ContractError(f"token {exc.args[0]!r} not in vocabulary") from exc

    def decode(self, ids):
        return [self.tokens[i] for i in ids]

    def to_dict(self):
        return {"tokens": self.tokens, "kinds": self.kinds}

    @classmethod
    def from_dict(cls, d):
        return cls(d["tokens"], d["kinds"])

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens and self.kinds == other.kinds


def build_vocabulary(libraries, mappings):
    """vocabulary covering the grammar, the libraries and the mapping table"""
    entries = []

    def _add(tokens, kind):
        for t in tokens:
            entries.append((t, kind))

    _add(SPECIAL, "special")
    _add(KEYWORDS, "keyword")
    _add(PUNCT, "punct")
    _add(DIGITS, "digit")
    _add(GENERIC_PARAMS, "ident")
    _add(NEUTRAL_IDENTS, "ident")
    for lib in libraries:
        _add([lib.alias], "alias")
        _add([lib.submodule], "module")
        _add(lib.helpers, "helper")
        _add(lib.nouns, "ident")
    for m in mappings:
        _add([m.deprecated[-1]], "api")
        _add([m.updated[-1]], "api")
        _add(m.cues, "ident")
        _add([m.fname, m.result], "ident")

    return Vocabulary([e[0] for e in entries], [e[1] for e in entries])
