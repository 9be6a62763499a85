#!/usr/bin/env python3
"""
Prompting Tests for Graph of Thoughts Runner
Template fixtures, rendering and response parsers (including randomized round trips)
"""

import os
import random
from fractions import Fraction

import pytest

import prompting
from errors import (ConfigError, MissingTag, NoListFound, NoMapFound, NonIntegerFrequency,
                    NonNumericScore, ParseFailure, UnboundPlaceholder, UnknownTemplate,
                    WrongArity)
from prompting import (TemplateRegistry, format_count_map, format_digit_list, format_named_lists,
                       format_paragraphs, parse_count_map, parse_digit_list, parse_named_lists,
                       parse_paragraphs, parse_score_pair, parse_tagged)
from usecases import COUNTRIES

NOISE = ['', 'Reason: the list was sorted step by step.\n', 'Output: ', 'Here you go:\n\n']
GOLDEN_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'fixtures', 'golden')


def test_every_fixture_template_loads():
    registry = TemplateRegistry()
    ids = registry.ids()
    assert len(ids) == 26
    for template_id in ('sort_prompt', 'split_prompt_32', 'merge_prompt', 'improve_prompt',
                        'intersect_prompt', 'count_prompt', 'merge_count_prompt',
                        'improve_merge_prompt', 'nda_merge_prompt', 'nda_score_prompt'):
        assert template_id in ids


def test_render_substitutes_bindings_and_examples():
    text = prompting.render('sort_prompt', {'input_list': '[3, 1, 2]'})
    assert 'Sort the following list of numbers' in text
    assert 'Input: [3, 1, 2]' in text
    assert 'Input: [5, 1, 0, 1, 2, 0, 4, 8, 1, 9, 5, 1, 3, 3, 9, 7]' in text
    assert '{examples}' not in text


@pytest.mark.parametrize('template_id', ['sort_prompt', 'split_prompt_32', 'merge_prompt',
                                         'improve_prompt', 'count_prompt', 'count_split_prompt',
                                         'merge_count_prompt', 'improve_merge_prompt',
                                         'nda_merge_prompt', 'nda_aggregate_prompt',
                                         'nda_improve_prompt', 'nda_score_prompt'])
def test_render_matches_golden_prompt(template_id):
    template = prompting.get_registry().get(template_id)
    bindings = {name: f'<{name}>' for name in template.placeholders}
    with open(os.path.join(GOLDEN_DIR, f'{template_id}.txt'), 'r', encoding='utf-8', newline='') as f:
        expected = f.read()
    assert prompting.render(template_id, bindings) == expected


def test_render_with_alternative_few_shot_block():
    registry = prompting.get_registry()
    zero_shot = registry.few_shot('sort_prompt', 'zero_shot')
    text = prompting.render('sort_prompt', {'input_list': '[3, 1, 2]'}, few_shot=zero_shot)
    assert '[5, 1, 0, 1, 2' not in text
    with pytest.raises(UnknownTemplate):
        registry.few_shot('sort_prompt', 'missing')


def test_literal_braces_survive_rendering():
    text = prompting.render('count_split_prompt', {'input_text': 'Peru is far.'})
    assert '"Paragraph 1": "Some paragraph text ..."' in text
    assert text.count('{') == text.count('}')


def test_render_errors():
    with pytest.raises(UnknownTemplate):
        prompting.render('no_such_prompt', {})
    with pytest.raises(UnboundPlaceholder):
        prompting.render('merge_prompt', {'input_list1': '[1]'})


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding='utf-8')


def test_registry_rejects_missing_front_matter(tmp_path):
    _write(tmp_path / 'templates' / 'bad.txt', 'Sort {input_list}\n')
    with pytest.raises(ConfigError):
        TemplateRegistry(str(tmp_path))


def test_registry_rejects_undeclared_placeholders(tmp_path):
    _write(tmp_path / 'templates' / 'greet.txt',
           '--- template: greet; placeholders: name ---\nHello {name} from {place}\n')
    with pytest.raises(ConfigError):
        TemplateRegistry(str(tmp_path))


def test_registry_from_custom_directory(tmp_path):
    _write(tmp_path / 'templates' / 'greet.txt',
           '--- template: greet; placeholders: name ---\n{examples}Hello {name}\n')
    _write(tmp_path / 'few_shot' / 'greet.txt', '--- few_shot: greet ---\nHello Ada\n')
    registry = TemplateRegistry(str(tmp_path))
    assert registry.ids() == ['greet']
    assert registry.render('greet', {'name': 'Bob'}) == 'Hello AdaHello Bob'


# Parsers

def test_parse_digit_list_takes_the_last_list():
    assert parse_digit_list('Input: [3, 1]\nOutput: [1, 3]') == [1, 3]
    assert parse_digit_list('Output: []') == []
    assert parse_digit_list('[1, a] then [2, -4]') == [2, -4]
    with pytest.raises(NoListFound):
        parse_digit_list('no list here [a, b]')


def test_parse_named_lists():
    text = '{\n "List 1": [1, 2],\n "List 1": [3]\n}'
    assert parse_named_lists(text, 2) == [[1, 2], [3]]
    assert parse_named_lists('[9] [1] [2]', 2) == [[1], [2]]
    with pytest.raises(WrongArity):
        parse_named_lists('"List 1": [1]', 2)


def test_parse_count_map():
    assert parse_count_map('Output: {"Peru": 1, "Chile": 2}') == {'Peru': 1, 'Chile': 2}
    assert parse_count_map('{"Peru": 1, "Peru": 2}') == {'Peru': 3}
    assert parse_count_map('{}') == {}
    with pytest.raises(NonIntegerFrequency):
        parse_count_map('{"Peru": 1.5}')
    with pytest.raises(NoMapFound):
        parse_count_map('Peru: 1')


def test_parse_tagged_and_scores():
    assert parse_tagged('<Merged>\n text \n</Merged>', 'Merged') == 'text'
    assert parse_tagged('<Score>7.5</Score>', 'Score', numeric=True) == Fraction(15, 2)
    with pytest.raises(MissingTag):
        parse_tagged('<Merged>open only', 'Merged')
    with pytest.raises(NonNumericScore):
        parse_tagged('<Score>high</Score>', 'Score', numeric=True)
    assert parse_score_pair('<Redundancy>5</Redundancy> <Retained>10</Retained>') == (5, 10)
    with pytest.raises(ParseFailure):
        parse_score_pair('<Redundancy>12</Redundancy> <Retained>10</Retained>')


def test_parse_paragraphs():
    text = format_paragraphs(['One "quoted" part.', 'Two.'])
    assert parse_paragraphs(text, 2) == ['One "quoted" part.', 'Two.']
    with pytest.raises(WrongArity):
        parse_paragraphs(text, 4)


def test_digit_list_round_trips():
    rng = random.Random(21)
    for _ in range(1000):
        values = [rng.randrange(10) for _ in range(rng.randint(0, 40))]
        text = rng.choice(NOISE) + format_digit_list(values)
        assert parse_digit_list(text) == values


def test_named_list_round_trips():
    rng = random.Random(22)
    for _ in range(1000):
        k = rng.choice((2, 4, 8))
        lists = [[rng.randrange(10) for _ in range(rng.randint(0, 16))] for _ in range(k)]
        text = format_named_lists(lists)
        if rng.random() < 0.3:
            text = text.replace('"List 2"', '"List 1"')
        assert parse_named_lists(rng.choice(NOISE) + text, k) == lists


def test_count_map_round_trips():
    rng = random.Random(23)
    for _ in range(1000):
        counts = {name: rng.randint(0, 9) for name in rng.sample(COUNTRIES, rng.randint(0, 8))}
        text = rng.choice(NOISE) + format_count_map(counts)
        assert parse_count_map(text) == counts


def test_count_map_duplicate_keys_are_summed():
    rng = random.Random(24)
    for _ in range(1000):
        name = rng.choice(COUNTRIES)
        first, second = rng.randint(0, 9), rng.randint(0, 9)
        assert parse_count_map(f'{{"{name}": {first}, "{name}": {second}}}') == {name: first + second}


def test_tagged_round_trips():
    rng = random.Random(25)
    words = ['clause', 'party', 'shall', 'not', 'disclose', 'term', '1.', '(a)']
    for _ in range(1000):
        lines = [' '.join(rng.choice(words) for _ in range(rng.randint(1, 6)))
                 for _ in range(rng.randint(1, 5))]
        body = '\n'.join(lines)
        text = rng.choice(NOISE) + f'<Merged>\n{body}\n</Merged>'
        assert parse_tagged(text, 'Merged') == body.strip()
