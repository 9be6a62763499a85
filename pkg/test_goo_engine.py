#!/usr/bin/env python3
"""
Graph of Operations Tests for Graph of Thoughts Runner
Plan validation, plan documents, static call bounds and controlled execution
"""

import random
from fractions import Fraction

import pytest

from errors import (ConfigError, GooValidationError, MissingGroundTruth, TooFewInputs,
                    UnscoredThought)
from goo_engine import (AGGREGATE, CUMULATIVE_BEST, GENERATE, GROUND_TRUTH, IMPROVE, KEEP_BEST_N,
                        LOCAL_SPLIT, PREDECESSORS_ONLY, SCORE, SELECT, TRACE_FORMAT,
                        VALIDATE_AND_IMPROVE, GraphOfOperations, OperationSpec, call_bounds,
                        goo_from_document, goo_to_document, load_goo, run, save_goo, validate_goo)
from llm_backend import ScriptedBackend
from oracle import OracleBackend
from schemes import ProblemInstance, build_got, generate_instance
from scoring import HIGHER_BETTER
from thought_graph import EdgeKind
from usecases import KEYWORD_COUNTING, SORTING, Scorer, get_registry

SORT_INSTANCE = ProblemInstance(SORTING, 3, 0, [2, 1, 0], [0, 1, 2])


def _sampled_sort(k=3):
    goo = GraphOfOperations()
    generate = goo.add(GENERATE, k=k, prompt_id='sort_prompt')
    keep = goo.add(KEEP_BEST_N, [goo.add(SCORE, [generate], samples=1, scorer_id='sorting_error')],
                   n=1, scope=PREDECESSORS_ONLY)
    goo.add(GROUND_TRUTH, [keep], comparator_id='sorting_exact')
    return goo


# Plans

def test_add_hands_out_increasing_ids():
    goo = GraphOfOperations()
    assert goo.add(GENERATE, k=1, prompt_id='sort_prompt') == 0
    assert goo.add(SCORE, [0], samples=1, scorer_id='sorting_error') == 1
    assert goo.roots == [0] and goo.sinks == [1]
    assert goo.topological_order() == [0, 1]
    assert goo.ops[1].describe() == 'score(samples=1, scorer_id=sorting_error)'


def test_valid_plan_has_no_errors():
    assert validate_goo(_sampled_sort(), get_registry(SORTING)) == []


def test_empty_plan_is_invalid():
    assert validate_goo(GraphOfOperations()) == ["graph of operations has no operations"]


def test_structural_errors_are_reported():
    goo = GraphOfOperations([
        OperationSpec(0, 'teleport', {}),
        OperationSpec(1, GENERATE, {'k': 0}, (0,)),
        OperationSpec(2, KEEP_BEST_N, {'n': 1, 'scope': 'everything'}, (1,)),
        OperationSpec(3, SELECT, {'part': 2, 'of': 2}, (7,)),
    ])
    errors = validate_goo(goo)
    assert "op 0: unknown kind 'teleport'" in errors
    assert "op 1: generate needs parameter 'prompt_id'" in errors
    assert "op 1: k must be an integer >= 1" in errors
    assert "op 2: unknown keep scope 'everything'" in errors
    assert "op 3: part 2 outside 0..1" in errors
    assert "op 3: missing predecessor 7" in errors


def test_cycles_are_detected():
    goo = GraphOfOperations([
        OperationSpec(0, GENERATE, {'k': 1, 'prompt_id': 'sort_prompt'}, (2,)),
        OperationSpec(1, SCORE, {'samples': 1, 'scorer_id': 'sorting_error'}, (0,)),
        OperationSpec(2, KEEP_BEST_N, {'n': 1, 'scope': PREDECESSORS_ONLY}, (1,)),
    ])
    errors = validate_goo(goo)
    assert len(errors) == 1 and errors[0].startswith('cycle detected through ops')


def test_ground_truth_must_be_the_only_sink():
    goo = _sampled_sort()
    goo.add(SCORE, [0], samples=1, scorer_id='sorting_error')
    assert any('ground truth must be the only sink' in e for e in validate_goo(goo))


def test_registry_resolves_ids():
    goo = GraphOfOperations()
    goo.add(GENERATE, k=1, prompt_id='count_prompt')
    assert validate_goo(goo) == []
    assert validate_goo(goo, get_registry(SORTING)) == ["op 0: unknown prompt 'count_prompt'"]


def test_plan_documents_round_trip(tmp_path):
    goo = build_got(SORTING, 64).goo
    path = tmp_path / 'plan.json'
    save_goo(goo, str(path))
    assert load_goo(str(path)) == goo
    assert goo_from_document(goo_to_document(goo)) == goo


@pytest.mark.parametrize('document', [{'format': 'goo-v0', 'ops': []}, [],
                                      {'format': 'goo-v1', 'ops': [{'kind': GENERATE}]}])
def test_malformed_plan_documents(document):
    with pytest.raises(ConfigError):
        goo_from_document(document)


def test_load_goo_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_goo(str(tmp_path / 'absent.json'))


def test_call_bounds_of_a_small_plan():
    goo = GraphOfOperations()
    split = goo.add(GENERATE, k=1, prompt_id='split_prompt_32')
    left = goo.add(GENERATE, [goo.add(SELECT, [split], part=0, of=2)], k=5, prompt_id='sort_prompt')
    right = goo.add(GENERATE, [goo.add(SELECT, [split], part=1, of=2)], k=5, prompt_id='sort_prompt')
    goo.add(AGGREGATE, [left, right], n=3, prompt_id='merge_prompt')
    assert call_bounds(goo, get_registry(SORTING)) == (14, 14)


# Execution

def test_best_sample_wins_and_parse_failures_become_invalid_thoughts():
    backend = ScriptedBackend(sequence=['[0, 2]', 'I cannot sort this', '[0, 1, 2]'])
    result = run(_sampled_sort(), SORT_INSTANCE, backend, get_registry(SORTING))

    assert result.verdict is True and result.error == 0
    assert result.final_thought.content == [0, 1, 2]
    assert result.score == 0
    failed = [t for t in result.state.vertices.values() if t.valid is False]
    assert len(failed) == 1
    assert failed[0].content is None and failed[0].score == 3
    assert failed[0].raw == 'I cannot sort this'


def test_trace_and_ledger_match_the_backend():
    backend = ScriptedBackend(sequence=['[0, 1, 2]'] * 3)
    result = run(_sampled_sort(), SORT_INSTANCE, backend, get_registry(SORTING))
    assert result.calls == backend.calls == 3
    assert result.trace.calls_by_op() == {0: 3, 1: 0, 2: 0, 3: 0}
    assert len(result.ledger.entries) == 3
    assert result.ledger.subtotal(0)[0] == result.ledger.prompt_tokens
    lines = result.trace.to_lines().splitlines()
    assert len(lines) == 4
    assert f'"format": "{TRACE_FORMAT}"' in lines[0]
    assert 'wall_time' not in lines[0]
    assert 'wall_time' in result.trace.to_lines(include_timing=True)


def test_unparseable_final_thought_gets_worst_error():
    goo = GraphOfOperations()
    goo.add(GROUND_TRUTH, [goo.add(GENERATE, k=1, prompt_id='sort_prompt')],
            comparator_id='sorting_exact')
    result = run(goo, SORT_INSTANCE, ScriptedBackend(sequence=['no list']), get_registry(SORTING))
    assert result.verdict is False and result.error == 3


def test_cumulative_keep_retains_earlier_levels():
    goo = GraphOfOperations()
    generate = goo.add(GENERATE, k=2, prompt_id='sort_prompt')
    score = goo.add(SCORE, [generate], samples=1, scorer_id='sorting_error')
    best = goo.add(KEEP_BEST_N, [score], n=1, scope=PREDECESSORS_ONLY)
    improve = goo.add(IMPROVE, [best], k=2, prompt_id='improve_prompt')
    rescored = goo.add(SCORE, [improve], samples=1, scorer_id='sorting_error')
    overall = goo.add(KEEP_BEST_N, [rescored], n=1, scope=CUMULATIVE_BEST)
    goo.add(GROUND_TRUTH, [overall], comparator_id='sorting_exact')

    backend = ScriptedBackend(sequence=['[0, 2]', '[0, 1, 2]', '[0, 1]', '[2, 1, 0]'])
    result = run(goo, SORT_INSTANCE, backend, get_registry(SORTING))
    assert result.final_thought.id == 2
    assert result.verdict is True
    improvements = [t for t in result.state.vertices.values() if t.origin_op == improve]
    assert len(improvements) == 2
    assert all(result.state.reverse[t.id] == {2: EdgeKind.REFINE} for t in improvements)


def test_unparseable_sample_never_outranks_a_parsed_one():
    goo = GraphOfOperations()
    generate = goo.add(GENERATE, k=2, prompt_id='sort_prompt')
    best = goo.add(KEEP_BEST_N, [goo.add(SCORE, [generate], samples=1, scorer_id='sorting_error')],
                   n=1, scope=PREDECESSORS_ONLY)
    improve = goo.add(IMPROVE, [best], k=1, prompt_id='improve_prompt')
    rescored = goo.add(SCORE, [improve], samples=1, scorer_id='sorting_error')
    overall = goo.add(KEEP_BEST_N, [rescored], n=1, scope=PREDECESSORS_ONLY)
    goo.add(GROUND_TRUTH, [overall], comparator_id='sorting_exact')

    backend = ScriptedBackend(sequence=['I cannot sort', '[9, 8, 7, 6, 5, 4, 3]', '[0, 1, 2]'])
    result = run(goo, SORT_INSTANCE, backend, get_registry(SORTING))
    kept = result.state.get(result.trace.records[best].outputs[0])
    assert kept.content == [9, 8, 7, 6, 5, 4, 3] and kept.score == 16
    assert result.calls == 3
    assert result.verdict is True and result.error == 0


def test_unparseable_samples_rank_last_for_higher_better_scores():
    goo = GraphOfOperations()
    generate = goo.add(GENERATE, k=2, prompt_id='sort_prompt')
    goo.add(KEEP_BEST_N, [goo.add(SCORE, [generate], samples=1, scorer_id='sorting_error')],
            n=1, scope=PREDECESSORS_ONLY)
    registry = get_registry(SORTING)
    registry.polarity = HIGHER_BETTER
    backend = ScriptedBackend(sequence=['nothing to see', '[0, 1, 2]'])
    result = run(goo, SORT_INSTANCE, backend, registry)
    assert result.state.get(result.final_ids[0]).content == [0, 1, 2]


@pytest.mark.parametrize('factor', [Fraction(1, 7), Fraction(3), Fraction(1000)])
def test_keep_best_n_choice_survives_positive_score_scaling(factor):
    rng = random.Random(int(factor * 7))
    for _ in range(50):
        sequence = [str([rng.randint(0, 9) for _ in range(rng.randint(1, 5))]) for _ in range(5)]
        plain = run(_sampled_sort(5), SORT_INSTANCE, ScriptedBackend(sequence=list(sequence)),
                    get_registry(SORTING))

        registry = get_registry(SORTING)
        base = registry.scorers['sorting_error']
        registry.scorers['sorting_error'] = Scorer(
            base.spec, lambda *args, evaluate=base.evaluate: factor * evaluate(*args))
        scaled = run(_sampled_sort(5), SORT_INSTANCE, ScriptedBackend(sequence=list(sequence)),
                     registry)
        assert scaled.final_ids == plain.final_ids


def test_keep_best_n_requires_scores():
    goo = GraphOfOperations()
    goo.add(KEEP_BEST_N, [goo.add(GENERATE, k=2, prompt_id='sort_prompt')], n=1,
            scope=PREDECESSORS_ONLY)
    with pytest.raises(UnscoredThought):
        run(goo, SORT_INSTANCE, ScriptedBackend(sequence=['[0]'] * 2), get_registry(SORTING))


def test_aggregate_needs_two_inputs():
    goo = GraphOfOperations()
    goo.add(AGGREGATE, [goo.add(GENERATE, k=1, prompt_id='sort_prompt')], n=1,
            prompt_id='merge_prompt')
    with pytest.raises(TooFewInputs):
        run(goo, SORT_INSTANCE, ScriptedBackend(sequence=['[0]']), get_registry(SORTING))


def test_ground_truth_requires_truth():
    instance = ProblemInstance(SORTING, 3, 0, [2, 1, 0], None)
    with pytest.raises(MissingGroundTruth):
        run(_sampled_sort(1), instance, ScriptedBackend(sequence=['[0, 1, 2]']),
            get_registry(SORTING))


def test_invalid_plans_are_rejected_before_any_call():
    backend = ScriptedBackend(sequence=['[0]'])
    goo = GraphOfOperations([OperationSpec(0, GENERATE, {'k': 1, 'prompt_id': 'sort_prompt'}, (4,))])
    with pytest.raises(GooValidationError):
        run(goo, SORT_INSTANCE, backend, get_registry(SORTING))
    assert backend.calls == 0


def _keyword_merge_plan():
    goo = GraphOfOperations()
    split = goo.add(LOCAL_SPLIT, splitter_id='sentences', parts=2)
    counts = []
    for part in range(2):
        select = goo.add(SELECT, [split], part=part, of=2)
        counts.append(goo.add(GENERATE, [select], k=1, prompt_id='count_prompt'))
    merge = goo.add(AGGREGATE, counts, n=1, prompt_id='merge_count_prompt')
    fixed = goo.add(VALIDATE_AND_IMPROVE, [merge], max_attempts=2, validator_id='keyword_merge',
                    prompt_id='improve_merge_prompt')
    goo.add(GROUND_TRUTH, [fixed], comparator_id='keyword_exact')
    return goo


def test_validate_and_improve_repairs_an_invalid_merge():
    instance = ProblemInstance(KEYWORD_COUNTING, 2, 0, 'Peru is big. Chile is long.',
                               {'Peru': 1, 'Chile': 1})
    backend = ScriptedBackend(sequence=[
        '{"Peru": 1}', '{"Chile": 1}',
        '{"Peru": 1, "Chile": 2}',
        'Sorry, no dictionary.',
        'Output: {"Peru": 1, "Chile": 1}',
    ])
    result = run(_keyword_merge_plan(), instance, backend, get_registry(KEYWORD_COUNTING))

    assert result.calls == 5
    assert result.verdict is True and result.error == 0
    final = result.final_thought
    assert final.valid is True and final.content == {'Peru': 1, 'Chile': 1}
    failed_attempt = result.state.predecessors(final.id)
    assert len(failed_attempt) == 1
    assert result.state.get(failed_attempt[0]).content is None
    merged = result.state.predecessors(failed_attempt[0])
    assert result.state.get(merged[0]).valid is False
    parts = [t for t in result.state.vertices.values() if t.thought_class == 'part']
    assert sorted(t.content for t in parts) == ['Chile is long.', 'Peru is big.']


def test_valid_merge_is_passed_through():
    instance = ProblemInstance(KEYWORD_COUNTING, 2, 0, 'Peru is big. Chile is long.',
                               {'Peru': 1, 'Chile': 1})
    backend = ScriptedBackend(sequence=['{"Peru": 1}', '{"Chile": 1}', '{"Peru": 1, "Chile": 1}'])
    result = run(_keyword_merge_plan(), instance, backend, get_registry(KEYWORD_COUNTING))
    assert result.calls == 3
    assert result.final_thought.valid is True


def test_concurrent_dispatch_is_deterministic():
    config = build_got(SORTING, 32)
    instance = generate_instance(SORTING, 32, 5)
    registry = get_registry(SORTING)
    serial = run(config.goo, instance, OracleBackend(seed=5, error_rate=0.3), registry, window=1)
    parallel = run(config.goo, instance, OracleBackend(seed=5, error_rate=0.3), registry, window=4)
    assert serial.trace.to_lines() == parallel.trace.to_lines()
    assert serial.state.to_document() == parallel.state.to_document()
    assert serial.error == parallel.error
