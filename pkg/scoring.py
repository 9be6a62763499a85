#!/usr/bin/env python3
"""
Scoring Module for Graph of Thoughts Runner
Error-scope scorers, clipping, merge quality and the LLM-assisted merge scorer
"""

import logging
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction

from errors import AllSamplesUnparseable, OutOfRangeScore, ParseFailure

logger = logging.getLogger(__name__)

LOWER_BETTER = 'lower-better'
HIGHER_BETTER = 'higher-better'

LOCAL = 'local'
LLM_ASSISTED = 'llm-assisted'

SCORE_MIN = 0
SCORE_MAX = 10


@dataclass(frozen=True)
class ScorerSpec:
    """Scorer id, ranking polarity and whether it queries the LLM"""
    id: str
    polarity: str = LOWER_BETTER
    kind: str = LOCAL
    samples: int = 1

    def __post_init__(self):
        if self.polarity not in (LOWER_BETTER, HIGHER_BETTER):
            raise ValueError(f"Unknown polarity: {self.polarity}")
        if self.kind == LLM_ASSISTED and self.samples < 1:
            raise ValueError("LLM-assisted scorers need samples >= 1")

    @property
    def lower_is_better(self):
        return self.polarity == LOWER_BETTER

    def worst(self, size):
        """Score given to thoughts whose content could not be parsed"""
        return Fraction(size) if self.lower_is_better else Fraction(0)


@dataclass(frozen=True)
class ScoreValue:
    value: int
    clipped: bool = False


def sorting_error_scope(input_list, output_list):
    """
    Sorted-pair violations plus digit-frequency deviation

    Args:
        input_list: The list that was supposed to be sorted
        output_list: The LLM's sorted list

    Returns:
        X + Y where X counts adjacent descents in the output and Y sums the
        absolute frequency differences over the digits 0-9
    """
    descents = sum(1 for a, b in zip(output_list, output_list[1:]) if a > b)
    expected = Counter(input_list)
    actual = Counter(output_list)
    deviation = sum(abs(actual[digit] - expected[digit]) for digit in range(10))
    return descents + deviation


def clip_error(error, size):
    return ScoreValue(value=min(error, size), clipped=error > size)


def positive_score(error, size):
    return max(size - error, 0)


def intersection_error_scope(set_a, set_b, candidate):
    """
    Spurious plus missing plus duplicated elements of a candidate intersection

    Args:
        set_a, set_b: Duplicate-free input sets
        candidate: The LLM's intersection, as a list

    Returns:
        |C - T| + |T - C| + (len(candidate) - |C|) with C the distinct
        candidate elements and T the true intersection
    """
    truth = set(set_a) & set(set_b)
    distinct = set(candidate)
    return len(distinct - truth) + len(truth - distinct) + (len(candidate) - len(distinct))


def keyword_error(computed, truth):
    """L1 distance between two country count maps (absent keys count as 0)"""
    keys = set(computed) | set(truth)
    return sum(abs(computed.get(key, 0) - truth.get(key, 0)) for key in keys)


def _exact(value):
    return value if isinstance(value, Fraction) else Fraction(str(value))


def merge_quality(redundancy_samples, retained_samples):
    """
    Harmonic mean of the averaged redundancy and retention scores

    Args:
        redundancy_samples: Redundancy scores in [0, 10]
        retained_samples: Retained-information scores in [0, 10]

    Returns:
        Fraction; 0 when both averages are 0

    Raises:
        OutOfRangeScore: a sample lies outside [0, 10]
        ValueError: either list is empty
    """
    if not redundancy_samples or not retained_samples:
        raise ValueError("merge_quality needs at least one sample of each value")
    redundancy = [_exact(v) for v in redundancy_samples]
    retained = [_exact(v) for v in retained_samples]
    for value in redundancy + retained:
        if not SCORE_MIN <= value <= SCORE_MAX:
            raise OutOfRangeScore(f"Score {value} outside [{SCORE_MIN}, {SCORE_MAX}]")

    mean_redundancy = sum(redundancy) / len(redundancy)
    mean_retained = sum(retained) / len(retained)
    if mean_redundancy + mean_retained == 0:
        return Fraction(0)
    return 2 * mean_redundancy * mean_retained / (mean_redundancy + mean_retained)


def llm_merge_score(backend, docs, candidate, samples=3, op_id=None):
    """
    Ask the LLM to rate a merged document for redundancy and retention

    Each sample is a separate query of the score prompt. A sample whose
    response lacks either tag is dropped as a whole.

    Args:
        backend: Anything with query(CompletionRequest)
        docs: The four source documents
        candidate: Merged document text
        samples: Number of scoring queries

    Returns:
        Tuple of (redundancy_samples, retained_samples)

    Raises:
        AllSamplesUnparseable: no sample could be parsed
    """
    from llm_backend import CompletionRequest
    from prompting import parse_score_pair, render

    if samples < 1:
        raise ValueError("samples must be >= 1")

    bindings = {f'doc{i}': doc for i, doc in enumerate(docs, start=1)}
    bindings['s'] = candidate
    prompt = render('nda_score_prompt', bindings)

    redundancy, retained = [], []
    for attempt in range(samples):
        response = backend.query(CompletionRequest.from_prompt(prompt, op_id=op_id))
        try:
            pair = parse_score_pair(response.texts[0])
        except ParseFailure as e:
            logger.warning("Dropping unparseable score sample (%s/%s): %s", attempt + 1, samples, e)
            continue
        redundancy.append(pair[0])
        retained.append(pair[1])

    if not redundancy:
        raise AllSamplesUnparseable(f"None of {samples} scoring samples could be parsed")
    return redundancy, retained


def keyword_merge_validator(parts, merged):
    """True iff merged equals the key-wise sum of the part count maps"""
    expected = Counter()
    for part in parts:
        expected.update(part)
    return all(merged.get(k, 0) == expected.get(k, 0) for k in set(merged) | set(expected))
