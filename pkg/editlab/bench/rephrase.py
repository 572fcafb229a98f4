"""Semantics preserving rewrites of a prompt

Rules:

* ``rename``: consistent renaming of identifiers to unused neutral names
* ``swap``: operand swap of a ``v = a + b`` statement
* ``parens``: parenthesize the right hand side of a statement
* ``reorder``: permute context statements, respecting data dependencies, last
  statement fixed (the invocation reads its variable)
* ``regroup``: join two statement lines with ``;``, or split a joined pair

Every applied rule is recorded so :meth:`Rephrasing.invert` gives back the original
prompt.
"""
from dataclasses import dataclass, field

import numpy as np

from editlab.errors import ContractError
from editlab.bench.vocab import EOL, NEUTRAL_IDENTS

RULES = ("rename", "swap", "parens", "reorder", "regroup")
SEPARATORS = (EOL, ";")


def split_prompt(tokens):
    """(def line incl. its end-of-line, statements, separators after each statement)"""
    tokens = list(tokens)
    try:
        head_end = tokens.index(EOL) + 1
    except ValueError:
        raise ContractError("prompt has no def line")
    statements, separators = [], []
    cur = []
    for t in tokens[head_end:]:
        if t in SEPARATORS:
            if not cur:
                raise ContractError("empty statement in prompt")
            statements.append(cur)
            separators.append(t)
            cur = []
        else:
            cur.append(t)
    if cur:
        raise ContractError("prompt does not end with a line separator")
    if not statements:
        raise ContractError("prompt has no context statements")
    return tokens[:head_end], statements, separators


def join_prompt(head, statements, separators):
    out = list(head)
    for s, sep in zip(statements, separators):
        out.extend(s + [sep])
    return out


def _is_parenthesized(stmt):
    return len(stmt) >= 4 and stmt[2] == "(" and stmt[-1] == ")" and _matching(stmt, 2) == len(stmt) - 1


def _matching(stmt, i):
    depth = 0
    for j in range(i, len(stmt)):
        if stmt[j] == "(":
            depth += 1
        elif stmt[j] == ")":
            depth -= 1
            if depth == 0:
                return j
    return -1


def _is_swappable(stmt):
    return len(stmt) == 5 and stmt[1] == "=" and stmt[3] == "+"


@dataclass
class Rephrasing:
    """a rewritten prompt and the record of how it was produced

    ``order[p]`` is the original index of the statement now at position p.
    ``joined`` holds positions (in the new order) whose trailing separator was flipped.
    """
    original: list
    tokens: list
    rules: list = field(default_factory=list)
    renaming: dict = field(default_factory=dict)
    swapped: list = field(default_factory=list)
    parenthesized: list = field(default_factory=list)
    order: list = field(default_factory=list)
    joined: list = field(default_factory=list)

    def rename_tokens(self, tokens):
        return [self.renaming.get(t, t) for t in tokens]

    def invert(self):
        """undo every rule in reverse order of application"""
        head, statements, separators = split_prompt(self.tokens)
        for p in self.joined:
            separators[p] = ";" if separators[p] == EOL else EOL
        restored = [None] * len(statements)
        restored_sep = [None] * len(separators)
        for p, orig in enumerate(self.order):
            restored[orig] = statements[p]
            restored_sep[orig] = separators[p]
        statements, separators = restored, restored_sep
        for i in self.parenthesized:
            statements[i] = statements[i][:2] + statements[i][3:-1]
        for i in self.swapped:
            s = statements[i]
            statements[i] = s[:2] + [s[4], "+", s[2]]
        inverse = {v: k for k, v in self.renaming.items()}
        tokens = join_prompt(head, statements, separators)
        return [inverse.get(t, t) for t in tokens]


def rephrase(tokens, rules, rng, identifiers, n_renamed=None):
    """apply ``rules`` to a prompt

    Parameters
    ----------
    tokens: list(str)
        prompt: def line and context statements
    rules: iterable(str)
        subset of RULES
    rng: numpy.random.Generator
    identifiers: set(str)
        tokens that may be renamed
    n_renamed: int, default None
        number of identifiers to rename, all of them if None

    Returns
    -------
    Rephrasing
    """
    rules = [r for r in RULES if r in set(rules)]
    unknown = set(rules) - set(RULES)
    if unknown:
        raise ContractError(f"unknown rephrase rules {sorted(unknown)}")
    head, statements, separators = split_prompt(tokens)
    result = Rephrasing(original=list(tokens), tokens=list(tokens))
    n = len(statements)
    result.order = list(range(n))

    if "rename" in rules:
        present = list(dict.fromkeys(t for t in tokens if t in identifiers))
        free = [t for t in NEUTRAL_IDENTS if t not in set(tokens)]
        k = len(present) if n_renamed is None else min(n_renamed, len(present))
        k = min(k, len(free))
        if k > 0:
            chosen = [present[i] for i in sorted(rng.choice(len(present), k, replace=False))]
            targets = [free[i] for i in rng.choice(len(free), k, replace=False)]
            result.renaming = dict(zip(chosen, targets))
            head = result.rename_tokens(head)
            statements = [result.rename_tokens(s) for s in statements]
            result.rules.append("rename")

    if "swap" in rules:
        cands = [i for i, s in enumerate(statements) if _is_swappable(s) and s[2] != s[4]]
        if cands:
            i = cands[int(rng.integers(len(cands)))]
            s = statements[i]
            statements[i] = s[:2] + [s[4], "+", s[2]]
            result.swapped.append(i)
            result.rules.append("swap")

    if "parens" in rules:
        cands = [i for i, s in enumerate(statements) if not _is_parenthesized(s)]
        if cands:
            i = cands[int(rng.integers(len(cands)))]
            statements[i] = statements[i][:2] + ["("] + statements[i][2:] + [")"]
            result.parenthesized.append(i)
            result.rules.append("parens")

    if "reorder" in rules and n > 2:
        order = _dependency_respecting_order(statements, rng)
        if order != list(range(n)):
            result.order = order
            statements = [statements[o] for o in order]
            separators = [separators[o] for o in order]
            result.rules.append("reorder")

    if "regroup" in rules and n > 1:
        # the last separator ends the prompt and stays a line break
        p = int(rng.integers(n - 1))
        separators[p] = ";" if separators[p] == EOL else EOL
        result.joined.append(p)
        result.rules.append("regroup")

    result.tokens = join_prompt(head, statements, separators)
    return result


def _dependency_respecting_order(statements, rng):
    """random topological order of all but the last statement, last kept in place"""
    n = len(statements)
    var_of = [s[0] for s in statements]
    deps = []
    for j in range(n):
        rhs = set(statements[j][2:])
        deps.append({i for i in range(j) if var_of[i] in rhs})
    placed = []
    remaining = list(range(n - 1))
    while remaining:
        ready = [j for j in remaining if deps[j] <= set(placed)]
        j = ready[int(rng.integers(len(ready)))]
        placed.append(j)
        remaining.remove(j)
    return placed + [n - 1]


def plan_attempt(attempt, rng):
    """rules for a retry: one rule at first, one more every second attempt"""
    n_rules = min(1 + attempt // 2, len(RULES))
    return [RULES[i] for i in sorted(rng.choice(len(RULES), n_rules, replace=False))]


def attempt_rng(seed, instance_key, attempt):
    return np.random.default_rng([seed, instance_key, attempt])
