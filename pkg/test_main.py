#!/usr/bin/env python3
"""
Runner Tests for Graph of Thoughts Runner
Run records, batches, summaries, comparisons and the command line
"""

import json
import os
from fractions import Fraction

import pytest

from config import CONFIG, get_cost_model
from errors import ConfigError, EmptyInput, MismatchedExperiments
from main import (BASELINE_ZERO, EXIT_BACKEND, EXIT_CONFIG, EXIT_OK, RunRecord, Summary, compare,
                  execute_run, format_delta, load_summary, main, nearest_rank, parse_backend_spec,
                  read_records, run_batch, summarize)
from oracle import OracleBackend
from schemes import FIXTURE, GOT, IO, TOT, build_baseline, build_scheme, generate_instance
from scoring import clip_error, sorting_error_scope
from usecases import DOCUMENT_MERGING, SORTING

SCRIPT = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'fixtures', 'scripts',
                      'sorting_io.json')


def _record(error, scheme=IO, size=32, cost='0', calls=1, **fields):
    return RunRecord(scheme=scheme, use_case=SORTING, size=size, seed=0, error_raw=error,
                     error_clipped=min(error, size), positive=max(size - error, 0),
                     verdict=error == 0, calls=calls, prompt_tokens=10, response_tokens=5,
                     cost=cost, **fields)


# Records and statistics

def test_record_lines_round_trip():
    record = _record(3, cost='1/3')
    line = record.to_line()
    assert line.endswith('\n')
    assert '"format": "runs-v1"' in line
    assert 'wall_time' not in line
    assert RunRecord.from_line(line) == record
    with pytest.raises(ConfigError):
        RunRecord.from_line('{"format": "runs-v0"}')


def test_nearest_rank():
    values = [1, 2, 3, 4]
    assert nearest_rank(values, Fraction(1, 4)) == 1
    assert nearest_rank(values, Fraction(1, 2)) == 2
    assert nearest_rank(values, Fraction(3, 4)) == 3
    assert nearest_rank([5], Fraction(1, 2)) == 5


def test_summarize_clipped_errors_and_costs():
    records = [_record(e, cost=c) for e, c in ((0, '1'), (4, '2'), (40, '3'), (1, '2'), (2, '2'))]
    summary = summarize(records)
    assert summary.metric == 'error'
    assert summary.runs == 5 and summary.failures == 0
    assert (summary.lower_quartile, summary.median, summary.upper_quartile) == (1, 2, 4)
    assert summary.mean_cost == 2 and summary.total_cost == 10
    assert summary.total_calls == 5


def test_summarize_rejects_empty_and_mixed_records():
    with pytest.raises(EmptyInput):
        summarize([])
    with pytest.raises(MismatchedExperiments):
        summarize([_record(0), _record(0, scheme=GOT)])


def test_summary_documents_round_trip():
    summary = summarize([_record(1, cost='1/3'), _record(2, cost='2/3')])
    assert Summary.from_document(json.loads(json.dumps(summary.to_document()))) == summary


def test_compare_relative_deltas():
    got = summarize([_record(1, scheme=GOT, cost='3')])
    tot = summarize([_record(4, scheme=TOT, cost='4')])
    deltas = compare(got, tot)
    assert deltas == {'median_delta': Fraction(-3, 4), 'cost_delta': Fraction(-1, 4)}
    assert format_delta(deltas['median_delta']) == '-75.0%'

    perfect = summarize([_record(0, scheme=TOT, cost='4')])
    assert compare(got, perfect)['median_delta'] == BASELINE_ZERO
    with pytest.raises(MismatchedExperiments):
        compare(got, summarize([_record(1, size=64)]))


# Backends

def test_backend_specs():
    assert isinstance(parse_backend_spec('mock-perfect')(3), OracleBackend)
    faulty = parse_backend_spec('mock-faulty:0.25:drop+swap')(1)
    assert faulty.error_rate == 0.25 and faulty.faults == ('drop', 'swap')
    assert parse_backend_spec('scripted:' + SCRIPT)(0).remaining() == 1


@pytest.mark.parametrize('spec', ['gpt-9', 'mock-faulty:abc', 'mock-faulty:1.5',
                                  'mock-faulty:0.1:melt', 'scripted:/no/such/file.json'])
def test_bad_backend_specs(spec):
    with pytest.raises(ConfigError):
        parse_backend_spec(spec)


# Batches

def test_batches_are_reproducible(tmp_path):
    config = build_scheme(GOT, SORTING, 32)
    factory = parse_backend_spec('mock-faulty:0.2')
    first, second = tmp_path / 'a.jsonl', tmp_path / 'b.jsonl'
    run_batch(config, 4, 10, factory, str(first))
    run_batch(config, 4, 10, factory, str(second), workers=2)
    assert first.read_text(encoding='utf-8') == second.read_text(encoding='utf-8')
    assert [r.seed for r in read_records(str(first))] == [10, 11, 12, 13]


def test_trace_calls_match_record_and_exact_cost(tmp_path, restore_config):
    restore_config['prompt_token_cost'] = '0.0015'
    restore_config['response_token_cost'] = '0.002'
    config = build_scheme(GOT, SORTING, 32)
    records = run_batch(config, 1, 0, parse_backend_spec('mock-perfect'),
                        trace_dir=str(tmp_path))
    record = records[0]
    trace = tmp_path / 'got-sorting-32-0.trace.jsonl'
    calls = sum(json.loads(line)['calls'] for line in trace.read_text(encoding='utf-8').splitlines())
    assert calls == record.calls == 31
    expected = (Fraction(record.prompt_tokens) * Fraction(15, 10000)
                + Fraction(record.response_tokens) * Fraction(2, 1000)) / 1000
    assert Fraction(record.cost) == expected


def test_budget_cap_skips_remaining_seeds(tmp_path, restore_config):
    restore_config['prompt_token_cost'] = '1'
    config = build_scheme(IO, SORTING, 32)
    out = tmp_path / 'runs.jsonl'
    records = run_batch(config, 5, 0, parse_backend_spec('mock-perfect'), str(out), workers=1,
                        max_cost=Fraction(0))
    assert len(records) == 1
    assert len(read_records(str(out))) == 1


def test_backend_failures_become_worst_case_records(tmp_path):
    script = tmp_path / 'empty.json'
    script.write_text(json.dumps({'format': 'script-v1', 'sequence': []}), encoding='utf-8')
    config = build_scheme(IO, SORTING, 32)
    record = execute_run(config, 0, parse_backend_spec(f'scripted:{script}'),
                         get_cost_model())
    assert record.failure == 'BackendFailure'
    assert record.error_raw == record.error_clipped == 32
    assert record.positive == 0 and record.verdict is False


def test_document_records_carry_scores():
    config = build_scheme(IO, DOCUMENT_MERGING, FIXTURE)
    records = run_batch(config, 2, 0, parse_backend_spec('mock-perfect'))
    assert all(r.score == '10' and r.error_raw == 0 for r in records)
    summary = summarize(records)
    assert summary.metric == 'score' and summary.median == 10


def test_run_batch_rejects_bad_arguments():
    config = build_scheme(IO, SORTING, 32)
    with pytest.raises(ConfigError):
        run_batch(config, 0, 0, parse_backend_spec('mock-perfect'))


@pytest.mark.parametrize('completed', [0, 1, 3])
def test_interrupted_batch_keeps_completed_records(tmp_path, completed):
    config = build_scheme(IO, SORTING, 32)
    perfect = parse_backend_spec('mock-perfect')

    def factory(seed):
        if seed == completed:
            raise KeyboardInterrupt
        return perfect(seed)

    out = tmp_path / 'runs.jsonl'
    with pytest.raises(KeyboardInterrupt):
        run_batch(config, 5, 0, factory, str(out), workers=1)
    records = read_records(str(out)) if out.exists() else []
    assert [r.seed for r in records] == list(range(completed))


@pytest.mark.slow
def test_degradation_ordering_under_faults():
    factory = parse_backend_spec('mock-faulty:0.3:drop+duplicate')
    medians = {}
    for name, config in (('got', build_scheme(GOT, SORTING, 32)),
                         ('tot', build_baseline(TOT, SORTING, 32, {'k': 10, 'levels': 3})),
                         ('io', build_scheme(IO, SORTING, 32))):
        medians[name] = summarize(run_batch(config, 100, 0, factory)).median
    assert medians['got'] <= medians['tot'] <= medians['io']


# Command line

def test_cli_run_summarize_and_compare(tmp_path, capsys):
    got_runs, io_runs = tmp_path / 'got.jsonl', tmp_path / 'io.jsonl'
    summary_path = tmp_path / 'io.summary.json'
    assert main(['run', '--scheme', 'got', '--usecase', 'sorting', '--size', '32',
                 '--samples', '2', '--out', str(got_runs)]) == EXIT_OK
    assert main(['run', '--scheme', 'io', '--usecase', 'sorting', '--size', '32',
                 '--samples', '2', '--backend', 'mock-faulty:1', '--out', str(io_runs),
                 '--summary', str(summary_path)]) == EXIT_OK
    assert len(read_records(str(got_runs))) == 2
    assert load_summary(str(summary_path)).runs == 2

    capsys.readouterr()
    assert main(['summarize', '--in', str(got_runs)]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)['median'] == '0'

    assert main(['compare', '--a', str(io_runs), '--b', str(got_runs)]) == EXIT_OK
    assert 'baseline zero' in capsys.readouterr().out


def test_cli_scripted_backend(tmp_path):
    out = tmp_path / 'runs.jsonl'
    assert main(['run', '--scheme', 'io', '--usecase', 'sorting', '--size', '32',
                 '--samples', '1', '--seed', '3', '--backend', f'scripted:{SCRIPT}',
                 '--out', str(out)]) == EXIT_OK
    record = read_records(str(out))[0]
    with open(SCRIPT, encoding='utf-8') as f:
        answer = json.loads(json.load(f)['sequence'][0])
    payload = generate_instance(SORTING, 32, 3).payload
    assert record.calls == 1
    assert record.error_clipped == clip_error(sorting_error_scope(payload, answer), 32).value


def test_cli_exit_codes(tmp_path):
    script = tmp_path / 'empty.json'
    script.write_text(json.dumps({'format': 'script-v1', 'sequence': []}), encoding='utf-8')
    base = ['run', '--scheme', 'io', '--usecase', 'sorting', '--samples', '1']
    assert main(base + ['--size', '48']) == EXIT_CONFIG
    assert main(base + ['--size', '32', '--backend', 'telepathy']) == EXIT_CONFIG
    assert main(base + ['--size', '32', '--backend', f'scripted:{script}']) == EXIT_BACKEND
    assert main(['run', '--scheme', 'got8', '--usecase', 'sorting', '--size', '32']) == EXIT_CONFIG


def test_cli_config_file(tmp_path):
    bad = tmp_path / 'config.json'
    bad.write_text('{"retry_budget": 0}', encoding='utf-8')
    assert main(['run', '--scheme', 'io', '--usecase', 'sorting', '--size', '32',
                 '--samples', '1', '--config', str(bad)]) == EXIT_CONFIG

    good = tmp_path / 'good.json'
    good.write_text('{"cot_sc_k": 2}', encoding='utf-8')
    out = tmp_path / 'runs.jsonl'
    assert main(['run', '--scheme', 'cot_sc', '--usecase', 'sorting', '--size', '32',
                 '--samples', '1', '--config', str(good), '--out', str(out)]) == EXIT_OK
    assert read_records(str(out))[0].calls == 2
    assert CONFIG['cot_sc_k'] == 2


def test_cli_topology(capsys):
    assert main(['topology', '--shape', 'hourglass', '--k', '2', '--depth', '3']) == EXIT_OK
    assert capsys.readouterr().out.splitlines() == ['scheme,k,N,latency,volume',
                                                    'hourglass,2,22,6,21']
    assert main(['topology', '--shape', 'multichain', '--k', '3', '--n', '8']) == EXIT_CONFIG


def test_cli_export_and_validate_goo(tmp_path, capsys):
    plan = tmp_path / 'plan.json'
    assert main(['export-goo', '--scheme', 'got', '--usecase', 'keyword_counting',
                 '--size', 'fixture', '--out', str(plan)]) == EXIT_OK
    assert main(['validate-goo', '--config', str(plan), '--usecase', 'keyword_counting']) == EXIT_OK
    assert 'no errors' in capsys.readouterr().out

    assert main(['validate-goo', '--config', str(plan), '--usecase', 'sorting']) == EXIT_CONFIG
    assert "unknown prompt 'count_split_prompt'" in capsys.readouterr().out

    broken = json.loads(plan.read_text(encoding='utf-8'))
    broken['ops'][0]['predecessors'] = [len(broken['ops']) - 1]
    plan.write_text(json.dumps(broken), encoding='utf-8')
    assert main(['validate-goo', '--config', str(plan)]) == EXIT_CONFIG
    assert 'cycle detected' in capsys.readouterr().out


def test_keyword_size_defaults_to_the_configured_mentions(tmp_path, restore_config):
    restore_config['keyword_size'] = 16
    plan = tmp_path / 'plan.json'
    assert main(['export-goo', '--scheme', 'got', '--usecase', 'keyword_counting',
                 '--out', str(plan)]) == EXIT_OK
    assert json.loads(plan.read_text(encoding='utf-8'))['size'] == 16
    assert main(['export-goo', '--scheme', 'io', '--usecase', 'sorting']) == EXIT_CONFIG
