#!/usr/bin/env python3
"""
Use Cases Module for Graph of Thoughts Runner
Per-task prompt handlers, scorers, validators, comparators and local splitters
"""

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Dict, Optional

import prompting
from errors import AllSamplesUnparseable, UnsupportedConfiguration
from scoring import (HIGHER_BETTER, LLM_ASSISTED, LOWER_BETTER, ScorerSpec,
                     intersection_error_scope, keyword_error, keyword_merge_validator,
                     llm_merge_score, merge_quality, sorting_error_scope)

logger = logging.getLogger(__name__)

SORTING = 'sorting'
SET_INTERSECTION = 'set_intersection'
KEYWORD_COUNTING = 'keyword_counting'
DOCUMENT_MERGING = 'document_merging'
USE_CASES = (SORTING, SET_INTERSECTION, KEYWORD_COUNTING, DOCUMENT_MERGING)

INPUT_CLASS = 'input'
PART_CLASS = 'part'

NDA_SCORE_SAMPLES = 3

COUNTRIES = (
    'Argentina', 'Australia', 'Austria', 'Belgium', 'Brazil', 'Canada', 'Chile', 'China',
    'Colombia', 'Cuba', 'Denmark', 'Egypt', 'Finland', 'France', 'Germany', 'Greece',
    'Hungary', 'India', 'Indonesia', 'Iran', 'Ireland', 'Italy', 'Japan', 'Kenya',
    'Mexico', 'Morocco', 'Netherlands', 'New Zealand', 'North Korea', 'Norway', 'Paraguay',
    'Peru', 'Poland', 'Portugal', 'Russia', 'Scotland', 'South Africa', 'South Korea',
    'Spain', 'Sweden', 'Switzerland', 'Thailand', 'Turkey', 'Ukraine', 'United Kingdom',
    'United States', 'Uruguay', 'Vietnam',
)

_COUNTRY_PATTERN = re.compile(
    r'\b(' + '|'.join(re.escape(c) for c in sorted(COUNTRIES, key=len, reverse=True)) + r')\b')
_SENTENCE_END = re.compile(r'(?<=[.!?])\s+')


def count_countries(text):
    """Frequency of every pooled country name in the text"""
    return dict(Counter(_COUNTRY_PATTERN.findall(text)))


def split_sentences(text):
    return [s for s in _SENTENCE_END.split(text.strip()) if s]


def array_split(items, parts):
    """Split items into `parts` contiguous groups whose sizes differ by at most one"""
    size, extra = divmod(len(items), parts)
    groups, start = [], 0
    for index in range(parts):
        end = start + size + (1 if index < extra else 0)
        groups.append(items[start:end])
        start = end
    return groups


def document_lines(document):
    return [line.strip() for line in document.splitlines() if line.strip()]


def merge_documents(documents):
    """Ordered union of the non-empty lines of several documents"""
    seen, lines = set(), []
    for document in documents:
        for line in document_lines(document):
            if line not in seen:
                seen.add(line)
                lines.append(line)
    return '\n'.join(lines)


@dataclass(frozen=True)
class Outcome:
    """Interpreted content of one LLM response (one per part for splits)"""
    content: Any
    reference: Any = None
    part: Optional[int] = None


@dataclass(frozen=True)
class PromptHandler:
    """
    Binds input thoughts into a template and interprets the response.

    bind(inputs, instance) returns the template bindings; interpret(text,
    inputs, instance) returns a list of Outcome and raises ParseFailure on
    malformed responses. arity is the number of outcomes per response.
    """
    template_id: str
    bind: Callable
    interpret: Callable
    arity: int = 1

    def render(self, inputs, instance):
        return prompting.render(self.template_id, self.bind(inputs, instance))


@dataclass(frozen=True)
class Scorer:
    spec: ScorerSpec
    evaluate: Callable

    def score(self, thought, instance, channel=None, op_id=None, samples=None):
        if thought.content is None:
            return self.spec.worst(instance.size)
        samples = samples or self.spec.samples
        return Fraction(self.evaluate(thought, instance, channel, op_id, samples))


@dataclass
class UseCaseRegistry:
    """Everything the engine resolves by id for one use case"""
    use_case: str
    polarity: str
    prompts: Dict[str, PromptHandler] = field(default_factory=dict)
    scorers: Dict[str, Scorer] = field(default_factory=dict)
    validators: Dict[str, Callable] = field(default_factory=dict)
    comparators: Dict[str, Callable] = field(default_factory=dict)
    splitters: Dict[str, Callable] = field(default_factory=dict)

    def resolves(self, kind, name):
        table = {'prompt': self.prompts, 'scorer': self.scorers, 'validator': self.validators,
                 'comparator': self.comparators, 'splitter': self.splitters}[kind]
        return name in table


# Sorting

def _sort_bind(inputs, instance):
    return {'input_list': prompting.format_digit_list(inputs[0].content)}


def _sort_interpret(text, inputs, instance):
    return [Outcome(prompting.parse_digit_list(text), reference=list(inputs[0].content))]


def _split_handler(template_id, arity, placeholder, source):
    def bind(inputs, instance):
        return {placeholder: prompting.format_digit_list(source(inputs[0]))}

    def interpret(text, inputs, instance):
        lists = prompting.parse_named_lists(text, arity)
        return [Outcome(values, reference=values, part=i) for i, values in enumerate(lists)]

    return PromptHandler(template_id, bind, interpret, arity)


def _merge_bind(inputs, instance):
    first, second = inputs[0].content, inputs[1].content
    return {
        'length': len(first),
        'length_combined': len(first) + len(second),
        'input_list1': prompting.format_digit_list(first),
        'input_list2': prompting.format_digit_list(second),
    }


def _concatenated_references(inputs):
    reference = []
    for thought in inputs:
        reference.extend(thought.reference)
    return reference


def _merge_interpret(text, inputs, instance):
    return [Outcome(prompting.parse_digit_list(text), reference=_concatenated_references(inputs))]


def _improve_sort_bind(inputs, instance):
    thought = inputs[0]
    return {
        'length': len(thought.reference),
        'input_list': prompting.format_digit_list(thought.reference),
        'sorted_list': prompting.format_digit_list(thought.content),
    }


def _keep_reference_interpret(parser):
    def interpret(text, inputs, instance):
        return [Outcome(parser(text), reference=inputs[-1].reference)]
    return interpret


def _sorting_compare(instance, thought):
    error = sorting_error_scope(instance.payload, thought.content)
    return thought.content == instance.truth, error


def sorting_registry():
    registry = UseCaseRegistry(SORTING, LOWER_BETTER)
    registry.prompts['sort_prompt'] = PromptHandler('sort_prompt', _sort_bind, _sort_interpret)
    registry.prompts['sort_prompt_cot'] = PromptHandler('sort_prompt_cot', _sort_bind, _sort_interpret)
    for size, arity in ((32, 2), (64, 4), (128, 8)):
        template_id = f'split_prompt_{size}'
        registry.prompts[template_id] = _split_handler(
            template_id, arity, 'input_list', lambda thought: thought.content)
    registry.prompts['merge_prompt'] = PromptHandler('merge_prompt', _merge_bind, _merge_interpret)
    registry.prompts['improve_prompt'] = PromptHandler(
        'improve_prompt', _improve_sort_bind, _keep_reference_interpret(prompting.parse_digit_list))
    registry.scorers['sorting_error'] = Scorer(
        ScorerSpec('sorting_error'),
        lambda t, instance, *_: sorting_error_scope(t.reference, t.content))
    registry.comparators['sorting_exact'] = _sorting_compare
    return registry


# Set intersection

def _second_set(thought):
    """The B-side list a thought asks to intersect with A"""
    if thought.thought_class == INPUT_CLASS:
        return list(thought.content[1])
    return list(thought.content)


def _intersect_bind(inputs, instance):
    return {
        'set1': prompting.format_digit_list(instance.payload[0]),
        'set2': prompting.format_digit_list(_second_set(inputs[0])),
    }


def _intersect_interpret(text, inputs, instance):
    return [Outcome(prompting.parse_digit_list(text), reference=_second_set(inputs[0]))]


def _intersect_merge_bind(inputs, instance):
    return {
        'input1': prompting.format_digit_list(inputs[0].content),
        'input2': prompting.format_digit_list(inputs[1].content),
    }


def _improve_intersect_bind(inputs, instance):
    thought = inputs[0]
    return {
        'set1': prompting.format_digit_list(instance.payload[0]),
        'set2': prompting.format_digit_list(thought.reference),
        'incorrect': prompting.format_digit_list(thought.content),
    }


def _intersection_compare(instance, thought):
    set_a, set_b = instance.payload
    content = thought.content
    verdict = len(set(content)) == len(content) and sorted(content) == sorted(instance.truth)
    return verdict, intersection_error_scope(set_a, set_b, content)


def intersection_registry():
    registry = UseCaseRegistry(SET_INTERSECTION, LOWER_BETTER)
    for template_id in ('intersect_prompt', 'intersect_prompt_cot'):
        registry.prompts[template_id] = PromptHandler(
            template_id, _intersect_bind, _intersect_interpret)
    for size, arity in ((32, 2), (64, 4), (128, 8)):
        template_id = f'intersect_split_prompt_{size}'
        registry.prompts[template_id] = _split_handler(template_id, arity, 'input', _second_set)
    registry.prompts['intersect_merge_prompt'] = PromptHandler(
        'intersect_merge_prompt', _intersect_merge_bind, _merge_interpret)
    registry.prompts['improve_intersect_prompt'] = PromptHandler(
        'improve_intersect_prompt', _improve_intersect_bind,
        _keep_reference_interpret(prompting.parse_digit_list))
    registry.scorers['intersection_error'] = Scorer(
        ScorerSpec('intersection_error'),
        lambda t, instance, *_: intersection_error_scope(
            instance.payload[0], t.reference, t.content))
    registry.comparators['intersection_exact'] = _intersection_compare
    return registry


# Keyword counting

def _count_bind(inputs, instance):
    return {'input_text': inputs[0].content}


def _count_interpret(text, inputs, instance):
    return [Outcome(prompting.parse_count_map(text), reference=inputs[0].content)]


def _paragraph_handler(template_id, arity):
    def interpret(text, inputs, instance):
        paragraphs = prompting.parse_paragraphs(text, arity)
        return [Outcome(p, reference=p, part=i) for i, p in enumerate(paragraphs)]
    return PromptHandler(template_id, _count_bind, interpret, arity)


def _merge_count_bind(inputs, instance):
    return {
        'dictionary_1': prompting.format_count_map(inputs[0].content),
        'dictionary_2': prompting.format_count_map(inputs[1].content),
    }


def _joined_text_references(inputs):
    return ' '.join(t.reference for t in inputs)


def _merge_count_interpret(text, inputs, instance):
    return [Outcome(prompting.parse_count_map(text), reference=_joined_text_references(inputs))]


def _improve_merge_bind(inputs, instance):
    *sources, candidate = inputs
    return {
        'dictionary_1': prompting.format_count_map(sources[0].content),
        'dictionary_2': prompting.format_count_map(sources[1].content),
        'dictionary_incorrect': prompting.format_count_map(candidate.content),
    }


def _improve_count_bind(inputs, instance):
    thought = inputs[0]
    return {
        'input_text': thought.reference,
        'dictionary_incorrect': prompting.format_count_map(thought.content),
    }


def _nonzero(counts):
    return {k: v for k, v in counts.items() if v}


def _keyword_compare(instance, thought):
    verdict = _nonzero(thought.content) == _nonzero(instance.truth)
    return verdict, keyword_error(thought.content, instance.truth)


def _sentence_splitter(text, parts):
    sentences = split_sentences(text)
    groups = array_split(sentences, min(parts, len(sentences)) or 1)
    return [' '.join(group) for group in groups]


def keyword_registry():
    registry = UseCaseRegistry(KEYWORD_COUNTING, LOWER_BETTER)
    for template_id in ('count_prompt', 'count_prompt_io'):
        registry.prompts[template_id] = PromptHandler(template_id, _count_bind, _count_interpret)
    registry.prompts['count_split_prompt'] = _paragraph_handler('count_split_prompt', 4)
    registry.prompts['count_split_prompt_8'] = _paragraph_handler('count_split_prompt_8', 8)
    registry.prompts['merge_count_prompt'] = PromptHandler(
        'merge_count_prompt', _merge_count_bind, _merge_count_interpret)
    registry.prompts['improve_merge_prompt'] = PromptHandler(
        'improve_merge_prompt', _improve_merge_bind,
        _keep_reference_interpret(prompting.parse_count_map))
    registry.prompts['improve_count_prompt'] = PromptHandler(
        'improve_count_prompt', _improve_count_bind,
        _keep_reference_interpret(prompting.parse_count_map))
    registry.scorers['keyword_error'] = Scorer(
        ScorerSpec('keyword_error'),
        lambda t, instance, *_: keyword_error(t.content, count_countries(t.reference)))
    registry.validators['keyword_merge'] = keyword_merge_validator
    registry.comparators['keyword_exact'] = _keyword_compare
    registry.splitters['sentences'] = _sentence_splitter
    return registry


# Document merging

def _doc_bindings(instance):
    return {f'doc{i}': doc for i, doc in enumerate(instance.payload, start=1)}


def _nda_merge_bind(inputs, instance):
    return _doc_bindings(instance)


def _nda_interpret(text, inputs, instance):
    return [Outcome(prompting.parse_tagged(text, 'Merged'))]


def format_summaries(texts):
    return '\n'.join(f'<S{i}>\n{text}\n</S{i}>' for i, text in enumerate(texts, start=1))


def _nda_aggregate_bind(inputs, instance):
    bindings = _doc_bindings(instance)
    bindings['num_ndas_summaries'] = len(inputs)
    bindings['summaries'] = format_summaries([t.content for t in inputs])
    return bindings


def _nda_improve_bind(inputs, instance):
    bindings = _doc_bindings(instance)
    bindings['s'] = inputs[0].content
    return bindings


def _merge_quality_evaluate(thought, instance, channel, op_id, samples):
    try:
        redundancy, retained = llm_merge_score(
            channel, instance.payload, thought.content, samples, op_id)
    except AllSamplesUnparseable as e:
        logger.warning("Op %s: scoring thought %s failed: %s", op_id, thought.id, e)
        return Fraction(0)
    return merge_quality(redundancy, retained)


def document_registry():
    registry = UseCaseRegistry(DOCUMENT_MERGING, HIGHER_BETTER)
    for template_id in ('nda_merge_prompt', 'nda_merge_prompt_cot'):
        registry.prompts[template_id] = PromptHandler(template_id, _nda_merge_bind, _nda_interpret)
    registry.prompts['nda_aggregate_prompt'] = PromptHandler(
        'nda_aggregate_prompt', _nda_aggregate_bind, _nda_interpret)
    registry.prompts['nda_improve_prompt'] = PromptHandler(
        'nda_improve_prompt', _nda_improve_bind, _nda_interpret)
    registry.scorers['merge_quality'] = Scorer(
        ScorerSpec('merge_quality', HIGHER_BETTER, LLM_ASSISTED, NDA_SCORE_SAMPLES),
        _merge_quality_evaluate)
    return registry


_BUILDERS = {
    SORTING: sorting_registry,
    SET_INTERSECTION: intersection_registry,
    KEYWORD_COUNTING: keyword_registry,
    DOCUMENT_MERGING: document_registry,
}


def get_registry(use_case):
    """Fresh registry for a use case id"""
    try:
        return _BUILDERS[use_case]()
    except KeyError:
        raise UnsupportedConfiguration(f"Unknown use case: {use_case}") from None
