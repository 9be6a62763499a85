#!/usr/bin/env python3
"""
Oracle Backend Module for Graph of Thoughts Runner
Mock LLM that solves each task exactly and injects seeded faults
"""

import json
import logging
import random
import re
from collections import Counter
from fractions import Fraction

import prompting
from errors import ContractViolation, ParseFailure
from llm_backend import CompletionResponse, LanguageModel, count_tokens
from usecases import array_split, count_countries, document_lines, merge_documents, split_sentences

logger = logging.getLogger(__name__)

DROP = 'drop'
DUPLICATE = 'duplicate'
SWAP = 'swap'
COUNT = 'count'
FAULT_KINDS = (DROP, DUPLICATE, SWAP, COUNT)

SPURIOUS_COUNTRY = 'Peru'

_EXAMPLES_END = re.compile(r'</Examples?>')


def _tail(prompt):
    """Prompt text after the last few-shot block"""
    matches = list(_EXAMPLES_END.finditer(prompt))
    return prompt[matches[-1].end():] if matches else prompt


def _last_list(text, label):
    matches = re.findall(rf'{re.escape(label)}\s*(\[[^\[\]]*\])', text)
    if not matches:
        raise ContractViolation(f"Oracle found no list after {label!r}")
    return prompting.parse_digit_list(matches[-1])


def _last_map(text, label):
    matches = re.findall(rf'{re.escape(label)}\s*(\{{[^{{}}]*\}})', text)
    if not matches:
        raise ContractViolation(f"Oracle found no map after {label!r}")
    return prompting.parse_count_map(matches[-1])


def _tagged_block(text, tag):
    match = re.search(rf'<{tag}>\n(.*?)\n</{tag}>', text, re.DOTALL)
    if not match:
        raise ContractViolation(f"Oracle found no <{tag}> block")
    return match.group(1)


def _documents(prompt):
    return [_tagged_block(prompt, f'Doc{i}') for i in range(1, 5)]


# Fault injection

def _fault_list(values, kind, rng):
    """Return a copy of values with one fault of the given kind applied"""
    values = list(values)
    if not values:
        return [rng.randrange(10)]
    if kind == COUNT:
        kind = rng.choice((DROP, DUPLICATE))
    if kind == SWAP:
        pairs = [i for i in range(len(values) - 1) if values[i] != values[i + 1]]
        if pairs:
            i = rng.choice(pairs)
            values[i], values[i + 1] = values[i + 1], values[i]
            return values
        kind = DROP
    index = rng.randrange(len(values))
    if kind == DROP:
        del values[index]
    else:
        values.insert(index, values[index])
    return values


def _fault_map(counts, kind, rng):
    counts = dict(counts)
    if not counts:
        return {SPURIOUS_COUNTRY: 1}
    keys = list(counts)
    if kind == COUNT:
        kind = rng.choice((DROP, DUPLICATE))
    if kind == SWAP:
        donors = [k for k in keys if counts[k] > 0]
        if len(keys) >= 2 and donors:
            donor = rng.choice(donors)
            receiver = rng.choice([k for k in keys if k != donor])
            counts[donor] -= 1
            counts[receiver] += 1
            if counts[donor] == 0:
                del counts[donor]
            return counts
        kind = DUPLICATE
    key = rng.choice(keys)
    if kind == DROP and counts[key] > 0:
        counts[key] -= 1
        if counts[key] == 0:
            del counts[key]
    else:
        counts[key] += 1
    return counts


def _fault_lines(lines, kind, rng):
    lines = list(lines)
    if kind == COUNT:
        kind = rng.choice((DROP, DUPLICATE))
    if kind == SWAP:
        pairs = [i for i in range(len(lines) - 1) if lines[i] != lines[i + 1]]
        if pairs:
            i = rng.choice(pairs)
            lines[i], lines[i + 1] = lines[i + 1], lines[i]
            return lines
        kind = DUPLICATE
    if kind == DROP and len(lines) > 1:
        del lines[rng.randrange(len(lines))]
        return lines
    index = rng.randrange(len(lines)) if lines else 0
    lines.insert(index, lines[index] if lines else '.')
    return lines


def _fault_score(value, rng):
    step = rng.choice((-1, 1))
    if not 0 <= value + step <= 10:
        step = -step
    return value + step


class OracleBackend(LanguageModel):
    """
    Task oracle standing in for the LLM.

    Each call draws from random.Random("<seed>:<prompt digest>:<sequence>");
    with probability error_rate one fault, drawn from `faults`, is applied
    to the exact answer. A fault always changes the answer.
    """

    supports_concurrency = True

    def __init__(self, seed=0, error_rate=0.0, faults=FAULT_KINDS):
        super().__init__()
        if not 0 <= error_rate <= 1:
            raise ValueError("error_rate must lie in [0, 1]")
        unknown = set(faults) - set(FAULT_KINDS)
        if unknown or not faults:
            raise ValueError(f"Unknown fault kinds: {sorted(unknown) or 'none given'}")
        self.seed = seed
        self.error_rate = error_rate
        self.faults = tuple(faults)
        self._routes = (
            ('Please score the merged NDA', self._score_nda),
            ('Combine the merged NDAs', self._aggregate_nda),
            ('Please improve the merged NDA', self._merge_nda),
            ('Merge the following 4 NDA documents', self._merge_nda),
            ('Split the following input text into', self._split_paragraphs),
            ('Split the following list of', self._split_list),
            ('The following two lists represent an unsorted list', self._improve_sort),
            ('Merge the following 2 sorted lists', self._merge_sorted),
            ('Sort the following list of numbers', self._sort),
            ('is meant to be the intersection', self._intersect),
            ('Find the intersection of two sets', self._intersect),
            ('Merge the following 2 lists into one list by appending', self._append),
            ('The following 2 dictionaries were combined', self._improve_merge_counts),
            ('Combine the following 2 dictionaries', self._merge_counts),
            ('was meant to hold the frequency', self._improve_count),
            ('Count the frequency of how many times each country', self._count),
        )

    def _rng(self, request, sample):
        return random.Random(f"{self.seed}:{request.digest()}:{request.sequence}:{sample}")

    def _fault(self, rng):
        """Fault kind to inject for this call, or None"""
        if rng.random() < self.error_rate:
            return rng.choice(self.faults)
        return None

    def _complete(self, request):
        prompt = request.prompt
        for phrase, handler in self._routes:
            if phrase in prompt:
                break
        else:
            raise ContractViolation("Oracle does not recognize the prompt")

        texts = []
        for sample in range(request.n):
            rng = self._rng(request, sample)
            fault = self._fault(rng)
            if fault:
                logger.debug("Injecting %s fault into call %s", fault, request.sequence)
            try:
                texts.append(handler(prompt, fault, rng))
            except ParseFailure as e:
                raise ContractViolation(f"Oracle cannot read its prompt: {e}") from e
        return CompletionResponse(
            texts=tuple(texts),
            prompt_tokens=count_tokens(prompt),
            response_tokens=sum(count_tokens(t) for t in texts),
        )

    # Sorting and intersection

    def _answer_list(self, values, fault, rng):
        if fault:
            values = _fault_list(values, fault, rng)
        return prompting.format_digit_list(values)

    def _sort(self, prompt, fault, rng):
        return self._answer_list(sorted(_last_list(_tail(prompt), 'Input:')), fault, rng)

    def _improve_sort(self, prompt, fault, rng):
        return self._sort(prompt, fault, rng)

    def _merge_sorted(self, prompt, fault, rng):
        tail = _tail(prompt)
        merged = sorted(_last_list(tail, '1.') + _last_list(tail, '2.'))
        return self._answer_list(merged, fault, rng)

    def _split_list(self, prompt, fault, rng):
        match = re.search(r'into (\d+) lists', prompt)
        if not match:
            raise ContractViolation("Split prompt without list count")
        lists = array_split(_last_list(_tail(prompt), 'Input:'), int(match.group(1)))
        if fault:
            index = rng.randrange(len(lists))
            lists[index] = _fault_list(lists[index], fault, rng)
        return prompting.format_named_lists(lists)

    def _intersect(self, prompt, fault, rng):
        tail = _tail(prompt)
        first = _last_list(tail, 'Input Set 1:')
        second = set(_last_list(tail, 'Input Set 2:'))
        return self._answer_list([x for x in first if x in second], fault, rng)

    def _append(self, prompt, fault, rng):
        tail = _tail(prompt)
        return self._answer_list(_last_list(tail, 'List 1:') + _last_list(tail, 'List 2:'),
                                 fault, rng)

    # Keyword counting

    def _answer_map(self, counts, fault, rng):
        if fault:
            counts = _fault_map(counts, fault, rng)
        return 'Output: ' + json.dumps(counts, ensure_ascii=False)

    def _input_text(self, prompt):
        tail = _tail(prompt)
        start = tail.rfind('Input: ')
        if start < 0:
            raise ContractViolation("Oracle found no input text")
        text = tail[start + len('Input: '):]
        return text.split('\nIncorrect Dictionary:')[0].strip()

    def _count(self, prompt, fault, rng):
        return self._answer_map(count_countries(self._input_text(prompt)), fault, rng)

    def _improve_count(self, prompt, fault, rng):
        return self._count(prompt, fault, rng)

    def _sum_maps(self, first, second):
        total = Counter(first)
        total.update(second)
        return dict(total)

    def _merge_counts(self, prompt, fault, rng):
        section = prompt.split('into a single dictionary:')[-1]
        maps = re.findall(r'\{[^{}]*\}', section)
        if len(maps) < 2:
            raise ContractViolation("Merge prompt without two dictionaries")
        first, second = (prompting.parse_count_map(m) for m in maps[:2])
        return self._answer_map(self._sum_maps(first, second), fault, rng)

    def _improve_merge_counts(self, prompt, fault, rng):
        tail = _tail(prompt)
        merged = self._sum_maps(_last_map(tail, 'Dictionary 1:'), _last_map(tail, 'Dictionary 2:'))
        return self._answer_map(merged, fault, rng)

    def _split_paragraphs(self, prompt, fault, rng):
        parts = int(re.search(r'into (\d+) paragraphs', prompt).group(1))
        sentences = split_sentences(self._input_text(prompt))
        if fault:
            sentences = _fault_lines(sentences, fault, rng)
        groups = array_split(sentences, parts)
        return prompting.format_paragraphs([' '.join(group) for group in groups])

    # Document merging

    def _answer_document(self, text, fault, rng):
        if fault:
            text = '\n'.join(_fault_lines(text.split('\n'), fault, rng))
        return f'<Merged>\n{text}\n</Merged>'

    def _merge_nda(self, prompt, fault, rng):
        return self._answer_document(merge_documents(_documents(prompt)), fault, rng)

    def _aggregate_nda(self, prompt, fault, rng):
        section = prompt.split('Here are the merged NDAs')[-1]
        summaries = [m.group(2) for m in re.finditer(r'<S(\d+)>\n(.*?)\n</S\1>', section, re.DOTALL)]
        if not summaries:
            raise ContractViolation("Aggregate prompt without summaries")
        return self._answer_document(merge_documents(summaries), fault, rng)

    def _score_nda(self, prompt, fault, rng):
        docs = _documents(prompt)
        candidate = document_lines(_tagged_block(prompt.split('Here is the merged NDA')[-1], 'S'))
        reference = set(document_lines(merge_documents(docs)))

        retained = Fraction(10 * len(reference & set(candidate)), len(reference)) if reference else Fraction(10)
        duplicates = len(candidate) - len(set(candidate))
        redundancy = Fraction(10) - Fraction(20 * duplicates, len(candidate)) if candidate else Fraction(10)
        redundancy = min(max(redundancy, Fraction(0)), Fraction(10))

        redundancy, retained = round(redundancy), round(retained)
        if fault:
            if rng.random() < 0.5:
                redundancy = _fault_score(redundancy, rng)
            else:
                retained = _fault_score(retained, rng)
        return (f'<Redundancy>{redundancy}</Redundancy>\n'
                f'<Retained>{retained}</Retained>')
