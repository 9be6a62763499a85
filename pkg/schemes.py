#!/usr/bin/env python3
"""
Schemes Module for Graph of Thoughts Runner
Problem instance generation and GoO builders for GoT and the baseline schemes
"""

import logging
import os
import random
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

from config import CONFIG
from errors import InvalidSize, UnsupportedConfiguration
from goo_engine import (AGGREGATE, CUMULATIVE_BEST, GENERATE, GROUND_TRUTH, IMPROVE,
                        KEEP_BEST_N, LOCAL_SPLIT, PREDECESSORS_ONLY, SCORE, SELECT,
                        VALIDATE_AND_IMPROVE, GraphOfOperations, call_bounds, goo_to_document)
from usecases import (COUNTRIES, DOCUMENT_MERGING, KEYWORD_COUNTING, SET_INTERSECTION, SORTING,
                      USE_CASES, count_countries, get_registry, split_sentences)

logger = logging.getLogger(__name__)

IO = 'io'
COT = 'cot'
COT_SC = 'cot_sc'
TOT = 'tot'
TOT2 = 'tot2'
GOT = 'got'
GOT8 = 'got8'
GOTX = 'gotx'
BASELINES = (IO, COT, COT_SC, TOT, TOT2)
SCHEMES = BASELINES + (GOT, GOT8, GOTX)

FIXTURE = 'fixture'
LIST_SIZES = (32, 64, 128)
MERGE_SCORE_SCALE = 10       # document merging "size": the score ceiling
NDA_COUNT = 4

_SENTENCE_TEMPLATES = (
    "Travelers moving from {a} to {b} often remark on the change in climate.",
    "A chef trained in {a} opened a small kitchen in {b} last spring.",
    "The museum exhibit compared folk music from {a} with songs recorded in {b}.",
    "Researchers in {a} shared their findings with a team based in {b}.",
    "She spent a year teaching in {a} before moving on to {b}.",
    "Goods shipped from {a} reached markets in {b} within a week.",
    "His grandparents grew up in {a}, while hers came from {b}.",
    "The football match between {a} and {b} drew a record crowd.",
)

# Per use case: (io prompt, chain prompt, improve prompt, scorer, comparator)
_BASELINE_PROMPTS = {
    SORTING: ('sort_prompt', 'sort_prompt_cot', 'improve_prompt', 'sorting_error', 'sorting_exact'),
    SET_INTERSECTION: ('intersect_prompt', 'intersect_prompt_cot', 'improve_intersect_prompt',
                       'intersection_error', 'intersection_exact'),
    KEYWORD_COUNTING: ('count_prompt_io', 'count_prompt', 'improve_count_prompt',
                       'keyword_error', 'keyword_exact'),
    DOCUMENT_MERGING: ('nda_merge_prompt', 'nda_merge_prompt_cot', 'nda_improve_prompt',
                       'merge_quality', None),
}


@dataclass(frozen=True)
class UseCase:
    """A use case with its problem size ('fixture' for pinned inputs)"""
    id: str
    problem_size: Any

    def __post_init__(self):
        if self.id not in USE_CASES:
            raise UnsupportedConfiguration(f"Unknown use case: {self.id}")
        is_valid, message = validate_size(self.id, self.problem_size)
        if not is_valid:
            raise InvalidSize(message)


@dataclass(frozen=True)
class ProblemInstance:
    use_case: str
    size: int
    seed: int
    payload: Any
    truth: Any = None


@dataclass
class SchemeConfig:
    """A scheme resolved into a concrete graph of operations"""
    scheme: str
    use_case: UseCase
    goo: GraphOfOperations
    params: Dict[str, Any] = field(default_factory=dict)

    @property
    def registry(self):
        return get_registry(self.use_case.id)

    def to_document(self):
        document = goo_to_document(self.goo)
        document['scheme'] = self.scheme
        document['use_case'] = self.use_case.id
        document['size'] = self.use_case.problem_size
        return document


def parse_size(value):
    """CLI size argument: an integer or the word 'fixture'"""
    if isinstance(value, str) and value != FIXTURE:
        try:
            return int(value)
        except ValueError:
            raise InvalidSize(f"Size must be an integer or '{FIXTURE}': {value}") from None
    return value


def validate_size(use_case, size):
    """
    Check a problem size against a use case

    Returns:
        Tuple of (is_valid, message)
    """
    if use_case in (SORTING, SET_INTERSECTION):
        if size not in LIST_SIZES:
            return False, f"{use_case} size must be one of {LIST_SIZES}, got {size}"
    elif use_case == KEYWORD_COUNTING:
        if size != FIXTURE and (not isinstance(size, int) or size < 8 or size % 2):
            return False, f"keyword size must be an even integer >= 8 or '{FIXTURE}', got {size}"
    elif use_case == DOCUMENT_MERGING:
        if size != FIXTURE:
            return False, f"document merging only runs on the '{FIXTURE}' documents, got {size}"
    return True, None


# Instance generation

def _fixture_path(*parts):
    return os.path.join(CONFIG['fixture_dir'], *parts)


def load_keyword_passage():
    with open(_fixture_path('keyword_passage.txt'), 'r', encoding='utf-8') as f:
        return f.read().strip()


def load_ndas():
    documents = []
    for index in range(1, NDA_COUNT + 1):
        with open(_fixture_path('ndas', f'doc{index}.txt'), 'r', encoding='utf-8') as f:
            documents.append(f.read().strip())
    return documents


def _sorting_instance(size, seed, rng):
    digits = [rng.randrange(10) for _ in range(size)]
    return ProblemInstance(SORTING, size, seed, digits, sorted(digits))


def _intersection_instance(size, seed, rng):
    overlap = round(rng.uniform(0.25, 0.75) * size)
    pool = rng.sample(range(2 * size), 2 * size - overlap)
    common, only_a, only_b = pool[:overlap], pool[overlap:size], pool[size:]
    set_a = common + only_a
    set_b = common + only_b
    rng.shuffle(set_a)
    rng.shuffle(set_b)
    members = set(set_b)
    truth = [x for x in set_a if x in members]
    return ProblemInstance(SET_INTERSECTION, size, seed, [set_a, set_b], truth)


def synthetic_passage(mentions, rng):
    """Passage of mentions/2 templated sentences naming two distinct countries each"""
    sentences = []
    for _ in range(mentions // 2):
        first, second = rng.sample(COUNTRIES, 2)
        sentences.append(rng.choice(_SENTENCE_TEMPLATES).format(a=first, b=second))
    return ' '.join(sentences)


def _keyword_instance(size, seed, rng):
    if size == FIXTURE:
        text = load_keyword_passage()
    else:
        text = synthetic_passage(size, rng)
    truth = count_countries(text)
    return ProblemInstance(KEYWORD_COUNTING, sum(truth.values()), seed, text, truth)


def generate_instance(use_case, size, seed):
    """
    Build a seeded problem instance with its ground truth

    Args:
        use_case: Use case id
        size: Problem size (32/64/128, an even mention count, or 'fixture')
        seed: Integer seed; identical arguments give identical instances

    Returns:
        ProblemInstance

    Raises:
        InvalidSize: size is not valid for the use case
    """
    UseCase(use_case, size)
    rng = random.Random(f"{use_case}:{size}:{seed}")
    if use_case == SORTING:
        return _sorting_instance(size, seed, rng)
    if use_case == SET_INTERSECTION:
        return _intersection_instance(size, seed, rng)
    if use_case == KEYWORD_COUNTING:
        return _keyword_instance(size, seed, rng)
    return ProblemInstance(DOCUMENT_MERGING, MERGE_SCORE_SCALE, seed, load_ndas(), None)


# GoT plans

def _scored(goo, source, scorer_id, keep, samples=1, scope=PREDECESSORS_ONLY):
    score = goo.add(SCORE, [source], samples=samples, scorer_id=scorer_id)
    return goo.add(KEEP_BEST_N, [score], n=keep, scope=scope)


def _merge_tree(goo, leaves, merge):
    """Pairwise merges level by level; an odd leftover moves up unmerged"""
    level = list(leaves)
    while len(level) > 1:
        final = len(level) == 2
        merged = [merge(goo, level[i], level[i + 1], final) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            merged.append(level[-1])
        level = merged
    return level[0]


def _sorting_got(size):
    parts = size // 16
    goo = GraphOfOperations()
    split = goo.add(GENERATE, k=1, prompt_id=f'split_prompt_{size}')
    leaves = []
    for part in range(parts):
        select = goo.add(SELECT, [split], part=part, of=parts)
        sort = goo.add(GENERATE, [select], k=5, prompt_id='sort_prompt')
        leaves.append(_scored(goo, sort, 'sorting_error', 1))

    def merge(goo, left, right, final):
        aggregate = goo.add(AGGREGATE, [left, right], n=10, prompt_id='merge_prompt')
        best = _scored(goo, aggregate, 'sorting_error', 1)
        improve = goo.add(IMPROVE, [best], k=10 if final else 5, prompt_id='improve_prompt')
        return _scored(goo, improve, 'sorting_error', 1)

    result = _merge_tree(goo, leaves, merge)
    goo.add(GROUND_TRUTH, [result], comparator_id='sorting_exact')
    return goo


def _intersection_got(size):
    parts = size // 16
    merge_n = 5 if size == 128 else 10
    goo = GraphOfOperations()
    split = goo.add(GENERATE, k=1, prompt_id=f'intersect_split_prompt_{size}')
    leaves = []
    for part in range(parts):
        select = goo.add(SELECT, [split], part=part, of=parts)
        intersect = goo.add(GENERATE, [select], k=5, prompt_id='intersect_prompt')
        leaves.append(_scored(goo, intersect, 'intersection_error', 1))

    def merge(goo, left, right, final):
        aggregate = goo.add(AGGREGATE, [left, right], n=merge_n, prompt_id='intersect_merge_prompt')
        return _scored(goo, aggregate, 'intersection_error', 1)

    result = _merge_tree(goo, leaves, merge)
    goo.add(GROUND_TRUTH, [result], comparator_id='intersection_exact')
    return goo


def _keyword_got(splitter, parts, count_k, merge_attempts, improve_attempts):
    """Split, count each part, then merge pairwise with local validation"""
    goo = GraphOfOperations()
    if splitter == 'sentences':
        split = goo.add(LOCAL_SPLIT, splitter_id='sentences', parts=parts)
    else:
        split = goo.add(GENERATE, k=1, prompt_id=splitter)
    leaves = []
    for part in range(parts):
        select = goo.add(SELECT, [split], part=part, of=parts)
        count = goo.add(GENERATE, [select], k=count_k, prompt_id='count_prompt')
        leaves.append(_scored(goo, count, 'keyword_error', 1))

    def merge(goo, left, right, final):
        aggregate = goo.add(AGGREGATE, [left, right], n=merge_attempts, prompt_id='merge_count_prompt')
        best = _scored(goo, aggregate, 'keyword_error', 1)
        fixed = goo.add(VALIDATE_AND_IMPROVE, [best], max_attempts=improve_attempts,
                        validator_id='keyword_merge', prompt_id='improve_merge_prompt')
        return _scored(goo, fixed, 'keyword_error', 1)

    result = _merge_tree(goo, leaves, merge)
    goo.add(GROUND_TRUTH, [result], comparator_id='keyword_exact')
    return goo


def _document_got(samples):
    goo = GraphOfOperations()
    merge = goo.add(GENERATE, k=5, prompt_id='nda_merge_prompt')
    best = _scored(goo, merge, 'merge_quality', 3, samples)
    aggregate = goo.add(AGGREGATE, [best], n=5, prompt_id='nda_aggregate_prompt')
    overall = _scored(goo, aggregate, 'merge_quality', 1, samples, CUMULATIVE_BEST)
    improve = goo.add(IMPROVE, [overall], k=10, prompt_id='nda_improve_prompt')
    _scored(goo, improve, 'merge_quality', 1, samples)
    return goo


def _keyword_parts(use_case, scheme):
    """Number of parts of a keyword split; gotx splits per sentence"""
    if scheme == GOT:
        return 4
    if scheme == GOT8:
        return 8
    if use_case.problem_size == FIXTURE:
        return len(split_sentences(load_keyword_passage()))
    return use_case.problem_size // 2


def build_got(use_case, size, scheme=GOT, params=None):
    """
    Build the Graph of Thoughts plan for a use case

    Args:
        use_case: Use case id
        size: Problem size
        scheme: 'got', or 'got8'/'gotx' for keyword counting
        params: Optional overrides (count_k, merge_attempts, improve_attempts)

    Returns:
        SchemeConfig

    Raises:
        UnsupportedConfiguration: no plan exists for the combination
    """
    params = dict(params or {})
    try:
        case = UseCase(use_case, size)
    except InvalidSize as e:
        raise UnsupportedConfiguration(str(e)) from e
    if scheme != GOT and use_case != KEYWORD_COUNTING:
        raise UnsupportedConfiguration(f"{scheme} is only defined for {KEYWORD_COUNTING}")

    if use_case == SORTING:
        goo = _sorting_got(size)
    elif use_case == SET_INTERSECTION:
        goo = _intersection_got(size)
    elif use_case == KEYWORD_COUNTING:
        parts = _keyword_parts(case, scheme)
        if scheme == GOT8 and size != FIXTURE and size < 16:
            raise UnsupportedConfiguration("got8 needs at least 16 mentions (8 sentences)")
        params.setdefault('count_k', CONFIG['keyword_count_samples'])
        params.setdefault('merge_attempts', CONFIG['merge_attempts'])
        params.setdefault('improve_attempts', CONFIG['improve_attempts'])
        splitter = {GOT: 'count_split_prompt', GOT8: 'count_split_prompt_8', GOTX: 'sentences'}[scheme]
        goo = _keyword_got(splitter, parts, params['count_k'], params['merge_attempts'],
                           params['improve_attempts'])
    else:
        goo = _document_got(params.setdefault('samples', 3))
    return SchemeConfig(scheme, case, goo, params)


# Baselines

def _baseline_params(scheme, params):
    params = dict(params or {})
    if scheme == COT_SC:
        params.setdefault('k', CONFIG['cot_sc_k'])
    elif scheme == TOT:
        params.setdefault('k', CONFIG['tot_k'])
        params.setdefault('levels', CONFIG['tot_levels'])
    elif scheme == TOT2:
        params.setdefault('k', CONFIG['tot2_k'])
        params.setdefault('levels', CONFIG['tot2_levels'])
    for name in ('k', 'levels'):
        if name in params and (not isinstance(params[name], int) or params[name] < 1):
            raise UnsupportedConfiguration(f"{name} must be an integer >= 1")
    return params


def build_baseline(scheme, use_case, size, params=None):
    """
    Build an IO, CoT, CoT-SC or ToT plan

    ToT levels after the first refine the retained thought with the
    improve prompt; each level keeps the best thought seen so far.
    Document merging has no ground truth, so its outputs are scored with
    the sampled LLM scorer instead.
    """
    if scheme not in BASELINES:
        raise UnsupportedConfiguration(f"Unknown baseline scheme: {scheme}")
    try:
        case = UseCase(use_case, size)
    except InvalidSize as e:
        raise UnsupportedConfiguration(str(e)) from e
    params = _baseline_params(scheme, params)
    io_prompt, chain_prompt, improve_prompt, scorer_id, comparator_id = _BASELINE_PROMPTS[use_case]
    samples = 3 if use_case == DOCUMENT_MERGING else 1

    goo = GraphOfOperations()
    if scheme in (IO, COT):
        last = goo.add(GENERATE, k=1, prompt_id=io_prompt if scheme == IO else chain_prompt)
        if comparator_id is None:
            last = goo.add(SCORE, [last], samples=samples, scorer_id=scorer_id)
    elif scheme == COT_SC:
        generate = goo.add(GENERATE, k=params['k'], prompt_id=chain_prompt)
        last = _scored(goo, generate, scorer_id, 1, samples)
    else:
        generate = goo.add(GENERATE, k=params['k'], prompt_id=io_prompt)
        last = _scored(goo, generate, scorer_id, 1, samples)
        for _ in range(params['levels'] - 1):
            improve = goo.add(IMPROVE, [last], k=params['k'], prompt_id=improve_prompt)
            last = _scored(goo, improve, scorer_id, 1, samples, CUMULATIVE_BEST)

    if comparator_id is not None:
        goo.add(GROUND_TRUTH, [last], comparator_id=comparator_id)
    return SchemeConfig(scheme, case, goo, params)


def build_scheme(scheme, use_case, size, params=None):
    if scheme in BASELINES:
        return build_baseline(scheme, use_case, size, params)
    if scheme in (GOT, GOT8, GOTX):
        return build_got(use_case, size, scheme, params)
    raise UnsupportedConfiguration(f"Unknown scheme: {scheme}")


def expected_llm_calls(config):
    """Static (min, max) LLM calls of a resolved scheme"""
    return call_bounds(config.goo, config.registry)
