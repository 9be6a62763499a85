#!/usr/bin/env python3
"""
Graph of Thoughts Runner
Run prompting schemes over seeded problem instances and summarize their errors and cost
"""

import argparse
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Optional

from config import CONFIG, get_cost_model, load_api_key, load_config_from_file
from errors import (BackendFailure, BudgetExceeded, ConfigError, EmptyInput, GooValidationError,
                    GoTError, InvalidParameters, InvalidSize, MismatchedExperiments,
                    UnsupportedConfiguration)
from goo_engine import Controller, load_goo, validate_goo
from llm_backend import HttpChatBackend, ScriptedBackend, total_cost
from metrics import Chain, Hourglass, KaryTree, MultiChain, default_rows, metrics_table
from oracle import FAULT_KINDS, OracleBackend
from schemes import FIXTURE, SCHEMES, build_scheme, generate_instance, parse_size
from scoring import clip_error, positive_score
from usecases import DOCUMENT_MERGING, KEYWORD_COUNTING, USE_CASES, get_registry

logger = logging.getLogger(__name__)

RECORD_FORMAT = 'runs-v1'
SUMMARY_FORMAT = 'summary-v1'

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3

BASELINE_ZERO = 'baseline zero'


@dataclass
class RunRecord:
    """Outcome of one seeded run"""
    scheme: str
    use_case: str
    size: int
    seed: int
    error_raw: int
    error_clipped: int
    positive: int
    verdict: Optional[bool]
    calls: int
    prompt_tokens: int
    response_tokens: int
    cost: str
    score: Optional[str] = None
    failure: Optional[str] = None
    wall_time: Optional[float] = None

    def to_line(self):
        document = {'format': RECORD_FORMAT}
        document.update({k: v for k, v in asdict(self).items()
                         if k != 'wall_time' or v is not None})
        return json.dumps(document, sort_keys=True) + '\n'

    @classmethod
    def from_line(cls, line):
        document = json.loads(line)
        if document.pop('format', None) != RECORD_FORMAT:
            raise ConfigError(f"Not a {RECORD_FORMAT} record: {line[:80]}")
        return cls(**document)


@dataclass
class Summary:
    scheme: str
    use_case: str
    size: int
    runs: int
    failures: int
    metric: str
    median: Fraction
    lower_quartile: Fraction
    upper_quartile: Fraction
    mean_cost: Fraction
    total_cost: Fraction
    total_calls: int

    def to_document(self):
        document = {'format': SUMMARY_FORMAT}
        for key, value in asdict(self).items():
            document[key] = str(value) if isinstance(value, Fraction) else value
        return document

    @classmethod
    def from_document(cls, document):
        if document.get('format') != SUMMARY_FORMAT:
            raise ConfigError(f"Not a {SUMMARY_FORMAT} document")
        values = {k: v for k, v in document.items() if k != 'format'}
        for key in ('median', 'lower_quartile', 'upper_quartile', 'mean_cost', 'total_cost'):
            values[key] = Fraction(values[key])
        return cls(**values)


# Backends

def parse_backend_spec(spec):
    """
    Turn a --backend value into a factory seed -> LanguageModel

    Accepted: mock-perfect, mock-faulty:<rate>[:<kind>+<kind>...],
    scripted:<path>, http.

    Raises:
        ConfigError: unknown spec, bad rate or fault kind, missing script or key
    """
    name, _, rest = spec.partition(':')
    if name == 'mock-perfect' and not rest:
        return lambda seed: OracleBackend(seed=seed)
    if name == 'mock-faulty':
        rate_text, _, kinds_text = rest.partition(':')
        try:
            rate = float(rate_text)
        except ValueError:
            raise ConfigError(f"Invalid fault rate in backend spec: {spec}") from None
        kinds = tuple(kinds_text.split('+')) if kinds_text else FAULT_KINDS
        if not 0 <= rate <= 1 or set(kinds) - set(FAULT_KINDS):
            raise ConfigError(f"Fault rate must lie in [0, 1] and kinds in {FAULT_KINDS}: {spec}")
        return lambda seed: OracleBackend(seed=seed, error_rate=rate, faults=kinds)
    if name == 'scripted' and rest:
        if not os.path.exists(rest):
            raise ConfigError(f"Script not found: {rest}")
        return lambda seed: ScriptedBackend.from_file(rest)
    if name == 'http' and not rest:
        api_key, organization = load_api_key()
        return lambda seed: HttpChatBackend(api_key, organization)
    raise ConfigError(f"Unknown backend: {spec}")


# Batches

def _failure_record(config, seed, size, backend, ledger, cost_model, error):
    cost = total_cost(ledger, cost_model)
    return RunRecord(
        scheme=config.scheme, use_case=config.use_case.id, size=size, seed=seed,
        error_raw=size, error_clipped=size, positive=0, verdict=False,
        calls=backend.calls, prompt_tokens=ledger.prompt_tokens,
        response_tokens=ledger.response_tokens, cost=str(cost),
        score='0' if config.use_case.id == DOCUMENT_MERGING else None,
        failure=type(error).__name__,
    )


def execute_run(config, seed, backend_factory, cost_model, trace_dir=None):
    """
    Run one seeded instance; any GoTError becomes a worst-case record

    Returns:
        RunRecord
    """
    started = time.perf_counter()
    instance = generate_instance(config.use_case.id, config.use_case.problem_size, seed)
    backend = backend_factory(seed)
    controller = Controller(config.goo, instance, backend, get_registry(config.use_case.id), seed)
    try:
        result = controller.run()
    except GoTError as e:
        logger.warning("Run %s/%s seed %s failed: %s", config.scheme, config.use_case.id, seed, e)
        return _failure_record(config, seed, instance.size, backend, controller.ledger,
                               cost_model, e)

    if trace_dir:
        os.makedirs(trace_dir, exist_ok=True)
        name = f"{config.scheme}-{config.use_case.id}-{config.use_case.problem_size}-{seed}.trace.jsonl"
        with open(os.path.join(trace_dir, name), 'w', encoding='utf-8') as f:
            f.write(result.trace.to_lines(CONFIG['record_wall_time']))

    size = instance.size
    if config.use_case.id == DOCUMENT_MERGING:
        score = result.score if result.score is not None else Fraction(0)
        raw, verdict, score_text = 0, None, str(score)
    else:
        raw = size if result.error is None else result.error
        verdict, score_text = result.verdict, None

    record = RunRecord(
        scheme=config.scheme, use_case=config.use_case.id, size=size, seed=seed,
        error_raw=raw, error_clipped=clip_error(raw, size).value,
        positive=positive_score(raw, size), verdict=verdict, calls=result.calls,
        prompt_tokens=result.ledger.prompt_tokens, response_tokens=result.ledger.response_tokens,
        cost=str(total_cost(result.ledger, cost_model)), score=score_text,
    )
    if CONFIG['record_wall_time']:
        record.wall_time = round(time.perf_counter() - started, 6)
    logger.info("Run %s/%s seed %s: error %s, %s calls", config.scheme, config.use_case.id,
                seed, record.error_clipped if score_text is None else score_text, record.calls)
    return record


def _check_budget(spent, max_cost):
    if max_cost is not None and spent > max_cost:
        raise BudgetExceeded(f"Batch cost {spent} exceeds the cap {max_cost}")


def run_batch(config, samples, seed0, backend_factory, out_path=None, workers=None,
              max_cost=None, trace_dir=None):
    """
    Run seeds seed0 .. seed0+samples-1 and persist one record per run

    Records are appended to out_path in seed order as soon as they are
    known, so an interrupted batch leaves only complete records behind.

    Args:
        config: SchemeConfig
        samples: Number of seeds
        seed0: First seed
        backend_factory: seed -> LanguageModel
        out_path: Optional runs-v1 output file (appended)
        workers: Runs executed concurrently (defaults to CONFIG)
        max_cost: Optional Fraction cap; remaining seeds are skipped once exceeded
        trace_dir: Optional directory for per-run trace files

    Returns:
        List of RunRecord

    Raises:
        ConfigError: samples < 1 or the plan does not validate
    """
    if samples < 1:
        raise ConfigError("samples must be >= 1")
    errors = validate_goo(config.goo, config.registry)
    if errors:
        raise ConfigError("; ".join(errors))
    workers = workers or CONFIG['batch_workers']
    cost_model = get_cost_model()
    seeds = list(range(seed0, seed0 + samples))

    records = []
    spent = Fraction(0)
    out = open(out_path, 'a', encoding='utf-8') if out_path else None
    try:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for start in range(0, len(seeds), workers):
                chunk = seeds[start:start + workers]
                batch = pool.map(lambda s: execute_run(config, s, backend_factory, cost_model,
                                                       trace_dir), chunk)
                for record in batch:
                    records.append(record)
                    spent += Fraction(record.cost)
                    if out:
                        out.write(record.to_line())
                        out.flush()
                try:
                    _check_budget(spent, max_cost)
                except BudgetExceeded as e:
                    skipped = len(seeds) - len(records)
                    if skipped:
                        logger.warning("%s; skipping %s remaining seeds", e, skipped)
                    break
    finally:
        if out:
            out.close()
    return records


def read_records(path):
    with open(path, 'r', encoding='utf-8') as f:
        return [RunRecord.from_line(line) for line in f if line.strip()]


# Statistics

def nearest_rank(sorted_values, fraction):
    """Smallest value with at least `fraction` of the data at or below it"""
    rank = max(math.ceil(Fraction(fraction) * len(sorted_values)), 1)
    return sorted_values[rank - 1]


def summarize(records):
    """
    Median and quartiles (nearest rank) of clipped error, plus cost and calls

    Document merging summarizes merge-quality scores instead of errors.

    Raises:
        EmptyInput: no records
        MismatchedExperiments: records of different schemes, use cases or sizes
    """
    if not records:
        raise EmptyInput("Cannot summarize an empty record list")
    keys = {(r.scheme, r.use_case, r.size) for r in records}
    if len(keys) != 1:
        raise MismatchedExperiments(f"Records mix experiments: {sorted(keys)}")
    scheme, use_case, size = keys.pop()

    if use_case == DOCUMENT_MERGING:
        metric = 'score'
        values = sorted(Fraction(r.score or '0') for r in records)
    else:
        metric = 'error'
        values = sorted(Fraction(r.error_clipped) for r in records)
    costs = [Fraction(r.cost) for r in records]
    return Summary(
        scheme=scheme, use_case=use_case, size=size, runs=len(records),
        failures=sum(1 for r in records if r.failure), metric=metric,
        median=nearest_rank(values, Fraction(1, 2)),
        lower_quartile=nearest_rank(values, Fraction(1, 4)),
        upper_quartile=nearest_rank(values, Fraction(3, 4)),
        mean_cost=sum(costs) / len(costs), total_cost=sum(costs),
        total_calls=sum(r.calls for r in records),
    )


def _relative(value, baseline):
    if baseline == 0:
        return BASELINE_ZERO
    return (value - baseline) / baseline


def compare(summary_a, summary_b):
    """
    Relative median and mean-cost deltas of summary_a against summary_b

    Returns:
        Dict with 'median_delta' and 'cost_delta' (Fraction or "baseline zero")

    Raises:
        MismatchedExperiments: different use case or size
    """
    if (summary_a.use_case, summary_a.size) != (summary_b.use_case, summary_b.size):
        raise MismatchedExperiments(
            f"Cannot compare {summary_a.use_case}/{summary_a.size} "
            f"with {summary_b.use_case}/{summary_b.size}")
    return {
        'median_delta': _relative(summary_a.median, summary_b.median),
        'cost_delta': _relative(summary_a.mean_cost, summary_b.mean_cost),
    }


def format_delta(delta):
    if delta == BASELINE_ZERO:
        return delta
    return f"{float(delta) * 100:+.1f}%"


def load_summary(path):
    """A summary-v1 document, or a runs-v1 file summarized on the fly"""
    with open(path, 'r', encoding='utf-8') as f:
        text = f.read()
    try:
        document = json.loads(text)
    except json.JSONDecodeError:
        document = None
    if isinstance(document, dict) and document.get('format') == SUMMARY_FORMAT:
        return Summary.from_document(document)
    return summarize([RunRecord.from_line(line) for line in text.splitlines() if line.strip()])


# Command line

def _scheme_params(args):
    params = {}
    if args.k is not None:
        params['k'] = args.k
    if args.levels is not None:
        params['levels'] = args.levels
    if args.merge_attempts is not None:
        params['merge_attempts'] = args.merge_attempts
    return params


def _size(args):
    """--size, or the use case's default when omitted"""
    if args.size is not None:
        return parse_size(args.size)
    if args.usecase == KEYWORD_COUNTING:
        return CONFIG['keyword_size']
    if args.usecase == DOCUMENT_MERGING:
        return FIXTURE
    raise ConfigError(f"--size is required for {args.usecase}")


def cmd_run(args):
    config = build_scheme(args.scheme, args.usecase, _size(args), _scheme_params(args))
    backend_factory = parse_backend_spec(args.backend)
    try:
        max_cost = None if args.max_cost is None else Fraction(args.max_cost)
    except ValueError:
        raise ConfigError(f"Invalid --max-cost: {args.max_cost}") from None
    records = run_batch(config, args.samples, args.seed, backend_factory, args.out, args.workers,
                        max_cost, args.trace_dir)
    summary = summarize(records)
    document = summary.to_document()
    if args.summary:
        with open(args.summary, 'w', encoding='utf-8') as f:
            json.dump(document, f, indent=2)
    print(json.dumps(document, indent=2))
    if any(r.failure == BackendFailure.__name__ for r in records):
        return EXIT_BACKEND
    return EXIT_OK


def cmd_summarize(args):
    document = summarize(read_records(args.input)).to_document()
    if args.out:
        with open(args.out, 'w', encoding='utf-8') as f:
            json.dump(document, f, indent=2)
    print(json.dumps(document, indent=2))
    return EXIT_OK


def cmd_compare(args):
    summary_a, summary_b = load_summary(args.a), load_summary(args.b)
    deltas = compare(summary_a, summary_b)
    print(f"{summary_a.scheme} vs {summary_b.scheme} ({summary_a.use_case}, size {summary_a.size})")
    print(f"  median {summary_a.metric}: {format_delta(deltas['median_delta'])}")
    print(f"  mean cost: {format_delta(deltas['cost_delta'])}")
    return EXIT_OK


def _shape(args):
    if args.shape == 'chain':
        return Chain(args.n)
    if args.shape == 'multichain':
        return MultiChain(args.k, args.n)
    if args.shape == 'tree':
        return KaryTree(args.k, args.depth)
    return Hourglass(args.k, args.depth)


def cmd_topology(args):
    rows = default_rows(args.k, args.depth) if args.shape == 'table' else [(args.shape, _shape(args))]
    sys.stdout.write(metrics_table(rows))
    return EXIT_OK


def cmd_validate_goo(args):
    goo = load_goo(args.goo_path)
    registry = get_registry(args.usecase) if args.usecase else None
    errors = validate_goo(goo, registry)
    if errors:
        for error in errors:
            print(f"error: {error}")
        return EXIT_CONFIG
    print(f"{args.goo_path}: {len(goo)} operations, no errors")
    return EXIT_OK


def cmd_export_goo(args):
    config = build_scheme(args.scheme, args.usecase, _size(args), _scheme_params(args))
    text = json.dumps(config.to_document(), indent=2)
    if args.out:
        with open(args.out, 'w', encoding='utf-8') as f:
            f.write(text + '\n')
    else:
        print(text)
    return EXIT_OK


def _add_scheme_arguments(parser):
    parser.add_argument('--scheme', choices=SCHEMES, required=True)
    parser.add_argument('--usecase', choices=USE_CASES, required=True)
    parser.add_argument('--size', help="32, 64, 128, a mention count or 'fixture' "
                        "(keyword counting defaults to the configured mention count)")
    parser.add_argument('--k', type=int, help="Samples per level (cot_sc, tot, tot2)")
    parser.add_argument('--levels', type=int, help="ToT levels")
    parser.add_argument('--merge-attempts', type=int, help="Keyword merge attempts per merge")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--log-level', default=None, help="Logging level (default from config)")
    parser = argparse.ArgumentParser(description="Graph of Thoughts runner")
    commands = parser.add_subparsers(dest='command', required=True)

    run_parser = commands.add_parser('run', parents=[common], help="Run a batch of seeded instances")
    _add_scheme_arguments(run_parser)
    run_parser.add_argument('--samples', type=int, default=CONFIG['samples'])
    run_parser.add_argument('--seed', type=int, default=0, help="First seed")
    run_parser.add_argument('--backend', default='mock-perfect',
                            help="mock-perfect | mock-faulty:<rate>[:<kinds>] | scripted:<file> | http")
    run_parser.add_argument('--out', help="runs-v1 output file (appended)")
    run_parser.add_argument('--summary', help="Write the summary document here")
    run_parser.add_argument('--max-cost', help="Skip remaining seeds once the batch costs more")
    run_parser.add_argument('--workers', type=int, default=None, help="Concurrent runs")
    run_parser.add_argument('--trace-dir', help="Write one trace-v1 file per run here")
    run_parser.add_argument('--config', dest='config_file', help="JSON config file merged into the defaults")
    run_parser.set_defaults(handler=cmd_run)

    summarize_parser = commands.add_parser('summarize', parents=[common], help="Summarize a runs-v1 file")
    summarize_parser.add_argument('--in', dest='input', required=True)
    summarize_parser.add_argument('--out')
    summarize_parser.set_defaults(handler=cmd_summarize)

    compare_parser = commands.add_parser('compare', parents=[common], help="Relative deltas of two experiments")
    compare_parser.add_argument('--a', required=True, help="Summary or runs file")
    compare_parser.add_argument('--b', required=True, help="Baseline summary or runs file")
    compare_parser.set_defaults(handler=cmd_compare)

    topology_parser = commands.add_parser('topology', parents=[common], help="Latency and volume of scheme topologies")
    topology_parser.add_argument('--shape', choices=('chain', 'multichain', 'tree', 'hourglass', 'table'),
                                 default='table')
    topology_parser.add_argument('--k', type=int, default=2)
    topology_parser.add_argument('--n', type=int, default=8, help="Thoughts (chain, multichain)")
    topology_parser.add_argument('--depth', type=int, default=3, help="Depth (tree, hourglass, table)")
    topology_parser.set_defaults(handler=cmd_topology)

    validate_parser = commands.add_parser('validate-goo', parents=[common], help="Validate a goo-v1 document")
    validate_parser.add_argument('--config', dest='goo_path', required=True, help="goo-v1 document")
    validate_parser.add_argument('--usecase', choices=USE_CASES, help="Also resolve ids")
    validate_parser.set_defaults(handler=cmd_validate_goo)

    export_parser = commands.add_parser('export-goo', parents=[common], help="Write a scheme's goo-v1 document")
    _add_scheme_arguments(export_parser)
    export_parser.add_argument('--out')
    export_parser.set_defaults(handler=cmd_export_goo)
    return parser


def main(argv=None):
    """Main entry point; returns the process exit code"""
    parser = build_parser()
    args = parser.parse_args(argv)
    config_file = getattr(args, 'config_file', None)
    try:
        if config_file:
            load_config_from_file(config_file)
        logging.basicConfig(
            level=getattr(logging, (args.log_level or CONFIG['log_level']).upper(), logging.INFO),
            format='%(asctime)s %(levelname)s %(name)s: %(message)s',
        )
        return args.handler(args)
    except (ConfigError, GooValidationError, UnsupportedConfiguration, InvalidSize,
            InvalidParameters, EmptyInput, MismatchedExperiments) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendFailure as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_BACKEND
    except KeyboardInterrupt:
        print("\nRun terminated by user", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
