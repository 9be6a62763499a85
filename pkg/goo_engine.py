#!/usr/bin/env python3
"""
Graph of Operations Engine for Graph of Thoughts Runner
Static operation plans, validation, controlled execution and execution traces
"""

import itertools
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import networkx as nx

from config import CONFIG
from errors import (ConfigError, GooValidationError, MissingGroundTruth, ParseFailure,
                    TooFewInputs, UnscoredThought)
from llm_backend import CompletionRequest, CostLedger
from scoring import LLM_ASSISTED, LOWER_BETTER
from thought_graph import EdgeKind, GraphDelta, ReasoningState, Thought, apply_delta

logger = logging.getLogger(__name__)

GOO_FORMAT = 'goo-v1'
TRACE_FORMAT = 'trace-v1'

# Operation kinds
GENERATE = 'generate'
AGGREGATE = 'aggregate'
IMPROVE = 'improve'
SCORE = 'score'
VALIDATE_AND_IMPROVE = 'validate_and_improve'
KEEP_BEST_N = 'keep_best_n'
GROUND_TRUTH = 'ground_truth'
SELECT = 'select'
LOCAL_SPLIT = 'local_split'

# KeepBestN scopes
PREDECESSORS_ONLY = 'predecessors'
CUMULATIVE_BEST = 'cumulative'

INPUT_CLASS = 'input'
SOLUTION_CLASS = 'solution'
PART_CLASS = 'part'

_REQUIRED_PARAMS = {
    GENERATE: ('k', 'prompt_id'),
    AGGREGATE: ('n', 'prompt_id'),
    IMPROVE: ('k', 'prompt_id'),
    SCORE: ('samples', 'scorer_id'),
    VALIDATE_AND_IMPROVE: ('max_attempts', 'validator_id', 'prompt_id'),
    KEEP_BEST_N: ('n', 'scope'),
    GROUND_TRUTH: ('comparator_id',),
    SELECT: ('part', 'of'),
    LOCAL_SPLIT: ('splitter_id', 'parts'),
}
_COUNT_PARAMS = ('k', 'n', 'samples', 'max_attempts', 'of', 'parts')
_REFERENCE_PARAMS = {
    'prompt_id': 'prompt',
    'scorer_id': 'scorer',
    'validator_id': 'validator',
    'comparator_id': 'comparator',
    'splitter_id': 'splitter',
}


@dataclass(frozen=True)
class OperationSpec:
    """One node of a graph of operations"""
    id: int
    kind: str
    params: Dict[str, Any] = field(default_factory=dict)
    predecessors: Tuple[int, ...] = ()

    def describe(self):
        args = ', '.join(f'{k}={v}' for k, v in sorted(self.params.items()))
        return f'{self.kind}({args})'


class GraphOfOperations:
    """
    Static execution plan: operations keyed by id, wired by predecessor lists.

    Operations are added with add(), which hands out increasing ids, so a
    plan reads top to bottom in the order it was built.
    """

    def __init__(self, ops=None):
        self.ops = {}
        for op in ops or ():
            self.ops[op.id] = op

    def add(self, kind, predecessors=(), **params):
        op_id = max(self.ops) + 1 if self.ops else 0
        self.ops[op_id] = OperationSpec(op_id, kind, dict(params), tuple(predecessors))
        return op_id

    def __len__(self):
        return len(self.ops)

    @property
    def roots(self):
        return [op_id for op_id, op in sorted(self.ops.items()) if not op.predecessors]

    @property
    def sinks(self):
        used = {p for op in self.ops.values() for p in op.predecessors}
        return [op_id for op_id in sorted(self.ops) if op_id not in used]

    def digraph(self):
        graph = nx.DiGraph()
        graph.add_nodes_from(self.ops)
        for op in self.ops.values():
            graph.add_edges_from((p, op.id) for p in op.predecessors if p in self.ops)
        return graph

    def topological_order(self):
        """Deterministic topological order (smallest ready id first)"""
        return list(nx.lexicographical_topological_sort(self.digraph()))

    def __eq__(self, other):
        return isinstance(other, GraphOfOperations) and self.ops == other.ops


def validate_goo(goo, registry=None):
    """
    Check a graph of operations for structural errors

    Args:
        goo: GraphOfOperations
        registry: Optional use-case registry used to resolve prompt, scorer,
            validator, comparator and splitter ids

    Returns:
        List of error messages; empty when the plan is valid
    """
    errors = []
    if not goo.ops:
        return ["graph of operations has no operations"]

    for op_id, op in sorted(goo.ops.items()):
        if op.kind not in _REQUIRED_PARAMS:
            errors.append(f"op {op_id}: unknown kind {op.kind!r}")
            continue
        for name in _REQUIRED_PARAMS[op.kind]:
            if name not in op.params:
                errors.append(f"op {op_id}: {op.kind} needs parameter {name!r}")
        for name in _COUNT_PARAMS:
            value = op.params.get(name)
            if name in op.params and (not isinstance(value, int) or isinstance(value, bool) or value < 1):
                errors.append(f"op {op_id}: {name} must be an integer >= 1")
        if op.kind == KEEP_BEST_N and op.params.get('scope') not in (PREDECESSORS_ONLY, CUMULATIVE_BEST):
            errors.append(f"op {op_id}: unknown keep scope {op.params.get('scope')!r}")
        if op.kind == SELECT and isinstance(op.params.get('of'), int):
            part = op.params.get('part')
            if not isinstance(part, int) or not 0 <= part < op.params['of']:
                errors.append(f"op {op_id}: part {part!r} outside 0..{op.params['of'] - 1}")
        if registry is not None:
            for name, kind in _REFERENCE_PARAMS.items():
                if name in op.params and not registry.resolves(kind, op.params[name]):
                    errors.append(f"op {op_id}: unknown {kind} {op.params[name]!r}")
        for predecessor in op.predecessors:
            if predecessor not in goo.ops:
                errors.append(f"op {op_id}: missing predecessor {predecessor}")

    graph = goo.digraph()
    if not nx.is_directed_acyclic_graph(graph):
        cycle = [source for source, _ in nx.find_cycle(graph)]
        errors.append(f"cycle detected through ops {cycle}")
        return errors

    truth_ops = [op_id for op_id, op in goo.ops.items() if op.kind == GROUND_TRUTH]
    if truth_ops:
        sinks = goo.sinks
        if len(sinks) != 1 or sinks[0] not in truth_ops or len(truth_ops) != 1:
            errors.append(f"op {truth_ops[0]}: ground truth must be the only sink (sinks: {sinks})")
    return errors


# Declarative plan documents

def goo_to_document(goo):
    return {
        'format': GOO_FORMAT,
        'ops': [
            {'id': op.id, 'kind': op.kind, 'params': dict(op.params),
             'predecessors': list(op.predecessors)}
            for _, op in sorted(goo.ops.items())
        ],
    }


def goo_from_document(document):
    """
    Build a GraphOfOperations from a goo-v1 document

    Raises:
        ConfigError: wrong format tag or malformed op entries
    """
    if not isinstance(document, dict) or document.get('format') != GOO_FORMAT:
        raise ConfigError(f"Not a {GOO_FORMAT} document")
    ops = []
    for entry in document.get('ops', []):
        try:
            ops.append(OperationSpec(int(entry['id']), entry['kind'], dict(entry.get('params', {})),
                                     tuple(int(p) for p in entry.get('predecessors', []))))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"Malformed operation entry {entry!r}: {e}") from e
    return GraphOfOperations(ops)


def load_goo(path):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            document = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read plan {path}: {e}") from e
    return goo_from_document(document)


def save_goo(goo, path):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(goo_to_document(goo), f, indent=2)


def call_bounds(goo, registry):
    """
    Static (min, max) number of LLM calls of a plan

    Assumes every response parses. ValidateAndImprove contributes nothing to
    the minimum and max_attempts per input thought to the maximum.
    """
    flow = {}
    pool = 0
    low = high = 0
    for op_id in goo.topological_order():
        op = goo.ops[op_id]
        params = op.params
        inputs = sum(flow[p] for p in op.predecessors) if op.predecessors else 1
        calls = 0
        if op.kind in (GENERATE, IMPROVE):
            calls = inputs * params['k']
            outputs = calls * registry.prompts[params['prompt_id']].arity
        elif op.kind == AGGREGATE:
            calls = params['n'] if inputs >= 2 else 0
            outputs = calls
        elif op.kind == SCORE:
            if registry.scorers[params['scorer_id']].spec.kind == LLM_ASSISTED:
                calls = inputs * params['samples']
            outputs = inputs
        elif op.kind == VALIDATE_AND_IMPROVE:
            high += inputs * params['max_attempts']
            outputs = inputs
        elif op.kind == KEEP_BEST_N:
            candidates = inputs + (pool if params['scope'] == CUMULATIVE_BEST else 0)
            outputs = min(params['n'], candidates)
            pool += outputs
        elif op.kind == SELECT:
            outputs = inputs // params['of']
        elif op.kind == LOCAL_SPLIT:
            outputs = inputs * params['parts']
        else:
            outputs = inputs
        flow[op_id] = outputs
        low += calls
        high += calls
    return low, high


# Execution

@dataclass
class OperationRecord:
    op_id: int
    kind: str
    inputs: Tuple[int, ...]
    outputs: Tuple[int, ...]
    calls: int = 0
    prompt_tokens: int = 0
    response_tokens: int = 0
    wall_time: float = 0.0

    def to_document(self, include_timing=False):
        document = {
            'format': TRACE_FORMAT,
            'op': self.op_id,
            'kind': self.kind,
            'inputs': list(self.inputs),
            'outputs': list(self.outputs),
            'calls': self.calls,
            'prompt_tokens': self.prompt_tokens,
            'response_tokens': self.response_tokens,
        }
        if include_timing:
            document['wall_time'] = round(self.wall_time, 6)
        return document


@dataclass
class ExecutionTrace:
    records: List[OperationRecord] = field(default_factory=list)

    @property
    def total_calls(self):
        return sum(r.calls for r in self.records)

    def calls_by_op(self):
        return {r.op_id: r.calls for r in self.records}

    def to_lines(self, include_timing=False):
        """trace-v1 JSON lines; wall time only on request"""
        return ''.join(json.dumps(r.to_document(include_timing), sort_keys=True) + '\n'
                       for r in self.records)


@dataclass
class RunResult:
    """Final state, trace and accounting of one execution"""
    state: ReasoningState
    trace: ExecutionTrace
    ledger: CostLedger
    final_ids: List[int]
    seed: int = 0
    verdict: Optional[bool] = None
    error: Optional[int] = None

    @property
    def calls(self):
        return self.trace.total_calls

    @property
    def final_thought(self):
        return self.state.get(self.final_ids[0]) if self.final_ids else None

    @property
    def score(self):
        thought = self.final_thought
        return None if thought is None else thought.score


class OperationChannel:
    """
    Backend access for one operation.

    Requests are stamped with the operation id and a run-wide sequence
    number before dispatch; responses are accounted in dispatch order.
    """

    def __init__(self, backend, ledger, op_id, sequence, window=1):
        self.backend = backend
        self.ledger = ledger
        self.op_id = op_id
        self.window = window
        self._sequence = sequence
        self.calls = 0
        self.prompt_tokens = 0
        self.response_tokens = 0

    def _stamp(self, request):
        return replace(request, op_id=self.op_id, sequence=next(self._sequence))

    def _account(self, response):
        self.ledger.record(self.op_id, response.prompt_tokens, response.response_tokens)
        self.calls += 1
        self.prompt_tokens += response.prompt_tokens
        self.response_tokens += response.response_tokens

    def query(self, request):
        response = self.backend.query(self._stamp(request))
        self._account(response)
        return response

    def dispatch(self, prompts):
        """Send one request per prompt and return the response texts in order"""
        requests = [self._stamp(CompletionRequest.from_prompt(p, op_id=self.op_id)) for p in prompts]
        if self.backend.supports_concurrency and self.window > 1 and len(requests) > 1:
            with ThreadPoolExecutor(max_workers=min(self.window, len(requests))) as pool:
                responses = list(pool.map(self.backend.query, requests))
        else:
            responses = [self.backend.query(r) for r in requests]
        for response in responses:
            self._account(response)
        return [r.texts[0] for r in responses]


class Controller:
    """
    Executes a graph of operations against a fresh reasoning state.

    The controller owns the state exclusively and is not shareable across
    threads mid-run; only the requests of a single operation may be in
    flight concurrently.
    """

    def __init__(self, goo, instance, backend, registry, seed=0, window=None):
        self.goo = goo
        self.instance = instance
        self.backend = backend
        self.registry = registry
        self.seed = seed
        self.window = window or CONFIG['concurrency_window']
        self.state = ReasoningState()
        self.trace = ExecutionTrace()
        self.ledger = CostLedger()
        self.verdict = None
        self.error = None
        self._sequence = itertools.count()
        self._next_id = 0
        self._pending = {}
        self._pending_edges = []
        self._retained = []
        self._outputs = {}

    # Thought bookkeeping

    def _spawn(self, op_id, content, parents, edge_kind, thought_class=SOLUTION_CLASS,
               part=None, reference=None, raw=None, valid=None):
        thought = Thought(id=self._next_id, content=content, thought_class=thought_class,
                          valid=valid, origin_op=op_id, creation_index=self._next_id,
                          part=part, reference=reference, raw=raw)
        self._next_id += 1
        self._pending[thought.id] = thought
        self._pending_edges.extend((p.id, thought.id, edge_kind) for p in parents)
        return thought

    def _annotate(self, thought_id, **changes):
        if thought_id in self._pending:
            self._pending[thought_id] = replace(self._pending[thought_id], **changes)
            return self._pending[thought_id]
        return self.state.annotate(thought_id, **changes)

    def _commit(self):
        delta = GraphDelta(v_plus=tuple(self._pending.values()), e_plus=tuple(self._pending_edges))
        self.state = apply_delta(self.state, delta)
        self._pending = {}
        self._pending_edges = []

    def _usable(self, spec, inputs):
        usable = [t for t in inputs if t.content is not None]
        if len(usable) < len(inputs):
            logger.warning("Op %s: skipping %s input thoughts without content",
                           spec.id, len(inputs) - len(usable))
        return usable

    def _interpret(self, spec, handler, text, inputs, parents, edge_kind, default_part):
        """Turn one response into thoughts; unparseable responses become invalid thoughts"""
        thought_class = PART_CLASS if handler.arity > 1 else SOLUTION_CLASS
        try:
            outcomes = handler.interpret(text, inputs, self.instance)
            valid = True
        except ParseFailure as e:
            logger.warning("Op %s: unparseable response (%s)", spec.id, e)
            outcomes = [None] * handler.arity
            valid = False

        thoughts = []
        for index, outcome in enumerate(outcomes):
            if outcome is None:
                part = index if handler.arity > 1 else default_part
                thoughts.append(self._spawn(spec.id, None, parents, edge_kind, thought_class,
                                            part=part, raw=text, valid=False))
                continue
            part = outcome.part if outcome.part is not None else default_part
            thoughts.append(self._spawn(spec.id, outcome.content, parents, edge_kind, thought_class,
                                        part=part, reference=outcome.reference, raw=text,
                                        valid=valid))
        return thoughts

    # Operations

    def exec_generate(self, spec, inputs, channel):
        """k new thoughts per usable input (refine edges for improvement)"""
        handler = self.registry.prompts[spec.params['prompt_id']]
        edge_kind = EdgeKind.REFINE if spec.kind == IMPROVE else EdgeKind.GENERATE
        owners, prompts = [], []
        for thought in self._usable(spec, inputs):
            prompt = handler.render([thought], self.instance)
            for _ in range(spec.params['k']):
                owners.append(thought)
                prompts.append(prompt)

        outputs = []
        for owner, text in zip(owners, channel.dispatch(prompts)):
            outputs.extend(self._interpret(spec, handler, text, [owner], [owner], edge_kind, owner.part))
        return outputs

    exec_improve = exec_generate

    def exec_aggregate(self, spec, inputs, channel):
        """n candidate aggregations, each with edges from every input"""
        if len(inputs) < 2:
            raise TooFewInputs(f"Op {spec.id}: aggregation needs 2 inputs, got {len(inputs)}")
        if any(t.content is None for t in inputs):
            logger.warning("Op %s: an input thought has no content, nothing to aggregate", spec.id)
            return []
        handler = self.registry.prompts[spec.params['prompt_id']]
        prompt = handler.render(inputs, self.instance)
        outputs = []
        for text in channel.dispatch([prompt] * spec.params['n']):
            outputs.extend(self._interpret(spec, handler, text, inputs, inputs,
                                           EdgeKind.AGGREGATE, None))
        return outputs

    def exec_score(self, spec, inputs, channel):
        scorer = self.registry.scorers[spec.params['scorer_id']]
        return [
            self._annotate(t.id, score=scorer.score(t, self.instance, channel, spec.id,
                                                   spec.params['samples']))
            for t in inputs
        ]

    def exec_keep_best_n(self, spec, inputs, channel):
        """
        Retain the n best thoughts

        Lower scores win for lower-better use cases, higher scores otherwise;
        ties go to the earlier thought. Thoughts without parsed content rank
        after every parsed thought whatever their score. The cumulative scope
        also considers every thought retained by earlier KeepBestN operations.

        Raises:
            UnscoredThought: a candidate has no score
        """
        candidates = list(inputs)
        if spec.params['scope'] == CUMULATIVE_BEST:
            seen = {t.id for t in candidates}
            candidates.extend(self.state.get(i) for i in self._retained if i not in seen)
        for thought in candidates:
            if thought.score is None:
                raise UnscoredThought(f"Op {spec.id}: thought {thought.id} has no score")

        if self.registry.polarity == LOWER_BETTER:
            ranked = sorted(candidates, key=lambda t: (t.content is None, t.score, t.creation_index))
        else:
            ranked = sorted(candidates, key=lambda t: (t.content is None, -t.score, t.creation_index))
        kept = ranked[:spec.params['n']]
        self._retained.extend(t.id for t in kept if t.id not in self._retained)
        return kept

    def exec_validate_and_improve(self, spec, inputs, channel):
        """
        Validate each candidate locally and improve invalid ones

        Args:
            spec: OperationSpec with max_attempts, validator_id and prompt_id
            inputs: Aggregated candidate thoughts
            channel: OperationChannel of this operation

        Returns:
            One thought per input: the candidate itself when valid, otherwise
            the last improvement attempt
        """
        validator = self.registry.validators[spec.params['validator_id']]
        handler = self.registry.prompts[spec.params['prompt_id']]
        outputs = []
        for candidate in inputs:
            sources = [self.state.get(p) for p in self.state.predecessors(candidate.id)
                       if self.state.reverse[candidate.id][p] is EdgeKind.AGGREGATE]
            if candidate.content is None or len(sources) < 2:
                logger.warning("Op %s: thought %s cannot be validated", spec.id, candidate.id)
                outputs.append(self._annotate(candidate.id, valid=False))
                continue
            parts = [s.content for s in sources]
            if validator(parts, candidate.content):
                outputs.append(self._annotate(candidate.id, valid=True))
                continue

            current = basis = self._annotate(candidate.id, valid=False)
            for attempt in range(spec.params['max_attempts']):
                text = channel.dispatch([handler.render(sources + [basis], self.instance)])[0]
                attempt_thought = self._interpret(spec, handler, text, sources + [basis], [current],
                                                  EdgeKind.REFINE, candidate.part)[0]
                fixed = attempt_thought.content is not None and validator(parts, attempt_thought.content)
                current = self._annotate(attempt_thought.id, valid=fixed)
                if current.content is not None:
                    basis = current
                logger.debug("Op %s: improvement %s/%s of thought %s %s", spec.id, attempt + 1,
                             spec.params['max_attempts'], candidate.id, 'fixed' if fixed else 'failed')
                if fixed:
                    break
            outputs.append(current)
        return outputs

    def exec_ground_truth(self, spec, inputs, channel):
        """Annotate final thoughts with exact-match verdict and final error"""
        if getattr(self.instance, 'truth', None) is None:
            raise MissingGroundTruth("The problem instance carries no ground truth")
        comparator = self.registry.comparators[spec.params['comparator_id']]
        outputs = []
        for thought in inputs:
            if thought.content is None:
                verdict, error = False, self.instance.size
            else:
                verdict, error = comparator(self.instance, thought)
            outputs.append(self._annotate(thought.id, verdict=verdict, error=error))
        if outputs:
            self.verdict, self.error = outputs[0].verdict, outputs[0].error
        else:
            logger.warning("Op %s: no thought reached the ground truth check", spec.id)
            self.verdict, self.error = False, self.instance.size
        return outputs

    def exec_select(self, spec, inputs, channel):
        return [t for t in inputs if t.part == spec.params['part']]

    def exec_local_split(self, spec, inputs, channel):
        splitter = self.registry.splitters[spec.params['splitter_id']]
        outputs = []
        for thought in self._usable(spec, inputs):
            for index, piece in enumerate(splitter(thought.content, spec.params['parts'])):
                outputs.append(self._spawn(spec.id, piece, [thought], EdgeKind.GENERATE, PART_CLASS,
                                           part=index, reference=piece, valid=True))
        return outputs

    # Driver

    def _inputs(self, spec, root):
        if not spec.predecessors:
            return [root]
        ids = []
        for predecessor in spec.predecessors:
            ids.extend(i for i in self._outputs[predecessor] if i not in ids)
        return [self.state.get(i) for i in ids]

    def run(self):
        """
        Execute every operation in topological order

        Returns:
            RunResult

        Raises:
            GooValidationError: the plan is invalid
            BackendFailure: the backend gave up
        """
        errors = validate_goo(self.goo, self.registry)
        if errors:
            raise GooValidationError(errors)

        root = self._spawn(None, self.instance.payload, [], EdgeKind.GENERATE, INPUT_CLASS,
                           reference=self.instance.payload, valid=True)
        self._commit()

        order = self.goo.topological_order()
        for op_id in order:
            spec = self.goo.ops[op_id]
            inputs = self._inputs(spec, self.state.get(root.id))
            channel = OperationChannel(self.backend, self.ledger, op_id, self._sequence, self.window)
            started = time.perf_counter()
            outputs = getattr(self, f'exec_{spec.kind}')(spec, inputs, channel)
            self._commit()
            self._outputs[op_id] = [t.id for t in outputs]
            self.trace.records.append(OperationRecord(
                op_id=op_id, kind=spec.kind, inputs=tuple(t.id for t in inputs),
                outputs=tuple(self._outputs[op_id]), calls=channel.calls,
                prompt_tokens=channel.prompt_tokens, response_tokens=channel.response_tokens,
                wall_time=time.perf_counter() - started,
            ))
            logger.debug("Op %s %s: %s inputs -> %s outputs, %s calls", op_id, spec.describe(),
                         len(inputs), len(outputs), channel.calls)

        return RunResult(state=self.state, trace=self.trace, ledger=self.ledger,
                         final_ids=list(self._outputs[order[-1]]), seed=self.seed,
                         verdict=self.verdict, error=self.error)


def run(goo, instance, backend, registry, seed=0, window=None):
    """Execute a plan for one problem instance (see Controller)"""
    return Controller(goo, instance, backend, registry, seed, window).run()
