"""Token-level scores of a completion against a ground-truth line

All scores are in [0, 1].  ``exact_match`` equal to 1 implies ``bleu`` and
``rouge_l`` equal to 1.
"""
import math
from collections import Counter
from dataclasses import dataclass, asdict

import numpy as np

from editlab.errors import ContractError
from editlab.utils.misc import contains_subsequence

METRIC_NAMES = ("em", "aem", "bleu", "rouge_l")
MAX_NGRAM_ORDER = 4


@dataclass
class MetricRecord:
    em: float = 0.0
    aem: float = 0.0
    bleu: float = 0.0
    rouge_l: float = 0.0

    def to_dict(self):
        return asdict(self)

    def as_tuple(self):
        return tuple(getattr(self, m) for m in METRIC_NAMES)


def exact_match(completion, truth):
    return 1.0 if list(completion) == list(truth) else 0.0


def api_exact_match(completion, api):
    """1 if the API token sequence occurs contiguously in the completion"""
    if len(api) == 0:
        raise ContractError("api_exact_match needs a non-empty API sequence")
    return 1.0 if contains_subsequence(completion, api) else 0.0


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(completion, truth):
    """sentence BLEU with uniform weights over n = 1..min(4, len(completion))

    Clipped n-gram precisions, add-one smoothing where an order has no match, and the
    usual brevity penalty.  An empty completion scores 0, unless the truth is empty too.
    """
    c, r = list(completion), list(truth)
    if len(c) == 0:
        return 1.0 if len(r) == 0 else 0.0
    max_n = min(MAX_NGRAM_ORDER, len(c))
    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand = _ngrams(c, n)
        ref = _ngrams(r, n)
        total = sum(cand.values())
        matches = sum(min(cnt, ref[g]) for g, cnt in cand.items())
        p = matches / total if matches > 0 else 1.0 / (total + 1)
        log_sum += math.log(p)
    bp = 1.0 if len(c) > len(r) else math.exp(1.0 - len(r) / len(c))
    return bp * math.exp(log_sum / max_n)


def lcs_length(a, b):
    a, b = list(a), list(b)
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(completion, truth):
    """F1 of longest-common-subsequence precision and recall, both empty scores 1"""
    c, r = list(completion), list(truth)
    if not c and not r:
        return 1.0
    if not c or not r:
        return 0.0
    lcs = lcs_length(c, r)
    if lcs == 0:
        return 0.0
    prec, rec = lcs / len(c), lcs / len(r)
    return 2.0 * prec * rec / (prec + rec)


def score(completion, truth_line, api):
    """all four scores of one completion"""
    return MetricRecord(em=exact_match(completion, truth_line),
                        aem=api_exact_match(completion, api),
                        bleu=bleu(completion, truth_line),
                        rouge_l=rouge_l(completion, truth_line))


def mean_record(records):
    """elementwise mean, in the given order, None for no records"""
    records = list(records)
    if not records:
        return None
    arr = np.array([r.as_tuple() for r in records])
    return MetricRecord(*[float(v) for v in arr.mean(axis=0)])


def median_record(records):
    """elementwise median over runs"""
    records = [r for r in records if r is not None]
    if not records:
        return None
    arr = np.array([r.as_tuple() for r in records])
    return MetricRecord(*[float(v) for v in np.median(arr, axis=0)])
