#!/usr/bin/env python3
"""
Prompting Module for Graph of Thoughts Runner
Template registry, prompt rendering and LLM response parsers
"""

import json
import logging
import os
import re
from dataclasses import dataclass
from fractions import Fraction
from string import Formatter
from typing import Optional, Tuple

from config import CONFIG
from errors import (ConfigError, MissingTag, NoListFound, NoMapFound, NonIntegerFrequency,
                    NonNumericScore, ParseFailure, UnboundPlaceholder, UnknownTemplate,
                    WrongArity)

logger = logging.getLogger(__name__)

EXAMPLES_PLACEHOLDER = 'examples'

_TEMPLATE_HEADER = re.compile(r'^---\s*template:\s*(?P<id>[\w.-]+)\s*;\s*placeholders:\s*(?P<names>[^-]*?)\s*---\s*$')
_FEW_SHOT_HEADER = re.compile(r'^---\s*few_shot:\s*(?P<id>[\w.-]+)\s*---\s*$')

_BRACKETED = re.compile(r'\[([^\[\]]*)\]')
_BRACED = re.compile(r'\{([^{}]*)\}')
_MAP_ENTRY = re.compile(r'"(?P<key>[^"]+)"\s*:\s*(?P<value>[^,}\n]*)')
_INTEGER = re.compile(r'^[+-]?\d+$')
_NUMBER = re.compile(r'^[+-]?(\d+(\.\d*)?|\.\d+)$')
_PARAGRAPH = re.compile(r'"Paragraph\s*\d+"\s*:\s*"((?:[^"\\]|\\.)*)"')


@dataclass(frozen=True)
class PromptTemplate:
    """A prompt stub with named placeholders and an optional few-shot block"""
    id: str
    body: str
    placeholders: Tuple[str, ...]
    few_shot: Optional[str] = None

    def fields(self):
        return {name for _, name, _, _ in Formatter().parse(self.body) if name}


def _split_front_matter(path, pattern):
    with open(path, 'r', encoding='utf-8') as f:
        text = f.read()
    header, _, body = text.partition('\n')
    match = pattern.match(header)
    if not match:
        raise ConfigError(f"Fixture {path} lacks a valid front-matter line")
    if body.endswith('\n'):
        body = body[:-1]
    return match, body


class TemplateRegistry:
    """
    Prompt templates and few-shot blocks loaded from fixture files.

    Templates live in <directory>/templates/<id>.txt and few-shot blocks in
    <directory>/few_shot/<id>.txt; alternative few-shot variants are stored
    as <id>.<variant>.txt next to the default block.
    """

    def __init__(self, directory=None):
        self.directory = directory or CONFIG['fixture_dir']
        self._templates = {}
        self._few_shots = {}
        self._load()

    def _load(self):
        template_dir = os.path.join(self.directory, 'templates')
        few_shot_dir = os.path.join(self.directory, 'few_shot')

        if os.path.isdir(few_shot_dir):
            for name in sorted(os.listdir(few_shot_dir)):
                if not name.endswith('.txt'):
                    continue
                match, body = _split_front_matter(os.path.join(few_shot_dir, name), _FEW_SHOT_HEADER)
                self._few_shots[name[:-len('.txt')]] = body
                if match.group('id') != name[:-len('.txt')].split('.')[0]:
                    raise ConfigError(f"Few-shot fixture {name} names {match.group('id')}")

        for name in sorted(os.listdir(template_dir)):
            if not name.endswith('.txt'):
                continue
            match, body = _split_front_matter(os.path.join(template_dir, name), _TEMPLATE_HEADER)
            template_id = match.group('id')
            declared = tuple(n.strip() for n in match.group('names').split(',') if n.strip())
            template = PromptTemplate(template_id, body, declared, self._few_shots.get(template_id))
            actual = template.fields() - {EXAMPLES_PLACEHOLDER}
            if actual != set(declared):
                raise ConfigError(
                    f"Template {template_id} declares {sorted(declared)} but uses {sorted(actual)}")
            self._templates[template_id] = template
        logger.debug("Loaded %s prompt templates from %s", len(self._templates), template_dir)

    def ids(self):
        return sorted(self._templates)

    def get(self, template_id):
        try:
            return self._templates[template_id]
        except KeyError:
            raise UnknownTemplate(f"No prompt template named {template_id}") from None

    def few_shot(self, template_id, variant=None):
        """Return the few-shot block for a template (or one of its variants)"""
        key = template_id if variant is None else f"{template_id}.{variant}"
        if key not in self._few_shots:
            raise UnknownTemplate(f"No few-shot block named {key}")
        return self._few_shots[key]

    def render(self, template_id, bindings, few_shot=None):
        """
        Substitute bindings into a template

        Args:
            template_id: Registered template id
            bindings: Mapping placeholder name -> text
            few_shot: Optional replacement for the default few-shot block

        Returns:
            The rendered prompt text
        """
        template = self.get(template_id)
        values = dict(bindings)
        if EXAMPLES_PLACEHOLDER in template.fields():
            block = few_shot if few_shot is not None else template.few_shot
            values[EXAMPLES_PLACEHOLDER] = block or ''
        missing = sorted(template.fields() - set(values))
        if missing:
            raise UnboundPlaceholder(f"Template {template_id} needs {', '.join(missing)}")
        return template.body.format(**values)


_registry = None


def get_registry():
    """Registry for the configured fixture directory, loaded on first use"""
    global _registry
    if _registry is None or _registry.directory != CONFIG['fixture_dir']:
        _registry = TemplateRegistry(CONFIG['fixture_dir'])
    return _registry


def render(template_id, bindings, few_shot=None):
    return get_registry().render(template_id, bindings, few_shot)


# Formatting

def format_digit_list(values):
    return '[' + ', '.join(str(v) for v in values) + ']'


def format_named_lists(lists):
    """Format k lists the way the split prompts ask for them"""
    rows = [f'    "List {i}": {format_digit_list(values)}' for i, values in enumerate(lists, start=1)]
    return '{\n' + ',\n'.join(rows) + '\n}'


def format_count_map(counts):
    return json.dumps(dict(counts), ensure_ascii=False)


def format_paragraphs(paragraphs):
    rows = [f'    "Paragraph {i}": {json.dumps(text, ensure_ascii=False)}'
            for i, text in enumerate(paragraphs, start=1)]
    return '{\n' + ',\n'.join(rows) + '\n}'


# Parsing

def _integer_lists(text):
    """All bracketed lists whose items are all integers, in order of appearance"""
    lists = []
    for match in _BRACKETED.finditer(text):
        items = [item.strip() for item in match.group(1).split(',')]
        if items == ['']:
            lists.append([])
        elif all(_INTEGER.match(item) for item in items):
            lists.append([int(item) for item in items])
    return lists


def parse_digit_list(text):
    """
    Extract the last bracketed integer list in a response

    Responses sometimes restate their input or prepend a "Reason: ..."
    paragraph, so the last list wins.

    Raises:
        NoListFound: the text holds no integer list
    """
    lists = _integer_lists(text)
    if not lists:
        raise NoListFound("No bracketed integer list in response")
    return lists[-1]


def parse_named_lists(text, k=2):
    """
    Extract k bracketed lists positionally, ignoring their labels

    Args:
        text: LLM response
        k: Number of lists the prompt asked for

    Returns:
        List of k integer lists (the last k when more are present)

    Raises:
        WrongArity: fewer than k lists
    """
    lists = _integer_lists(text)
    if len(lists) < k:
        raise WrongArity(f"Expected {k} lists, found {len(lists)}")
    return lists[-k:]


def parse_count_map(text):
    """
    Extract the last brace-delimited map of country -> integer

    Duplicate keys are summed.

    Raises:
        NoMapFound: no map in the text
        NonIntegerFrequency: an entry value is not an integer
    """
    for match in reversed(list(_BRACED.finditer(text))):
        inner = match.group(1)
        entries = list(_MAP_ENTRY.finditer(inner))
        if not entries and inner.strip():
            continue
        counts = {}
        for entry in entries:
            raw = entry.group('value').strip()
            if not _INTEGER.match(raw):
                raise NonIntegerFrequency(f"Frequency {raw!r} for {entry.group('key')!r} is not an integer")
            key = entry.group('key')
            counts[key] = counts.get(key, 0) + int(raw)
        return counts
    raise NoMapFound("No brace-delimited count map in response")


def parse_paragraphs(text, k=4):
    """Extract k "Paragraph i": "..." entries (the last k when more are present)"""
    paragraphs = []
    for match in _PARAGRAPH.finditer(text):
        try:
            paragraphs.append(json.loads('"' + match.group(1) + '"'))
        except json.JSONDecodeError:
            paragraphs.append(match.group(1))
    if len(paragraphs) < k:
        raise WrongArity(f"Expected {k} paragraphs, found {len(paragraphs)}")
    return paragraphs[-k:]


def parse_tagged(text, tag, numeric=False):
    """
    Return the content of the first well-formed <tag>...</tag> section

    Args:
        text: LLM response
        tag: Tag name without angle brackets
        numeric: Convert the content to a Fraction

    Raises:
        MissingTag: no such section
        NonNumericScore: numeric requested but content is not a number
    """
    match = re.search(rf'<{re.escape(tag)}>(.*?)</{re.escape(tag)}>', text, re.DOTALL)
    if not match:
        raise MissingTag(f"No <{tag}> section in response")
    content = match.group(1).strip()
    if not numeric:
        return content
    if not _NUMBER.match(content):
        raise NonNumericScore(f"<{tag}> holds {content!r}, not a number")
    return Fraction(content)


def parse_score_pair(text):
    """(redundancy, retained) from a scoring response, both in [0, 10]"""
    redundancy = parse_tagged(text, 'Redundancy', numeric=True)
    retained = parse_tagged(text, 'Retained', numeric=True)
    for value in (redundancy, retained):
        if not 0 <= value <= 10:
            raise ParseFailure(f"Score {value} outside [0, 10]")
    return redundancy, retained
