#!/usr/bin/env python3
"""
LLM Backend Module for Graph of Thoughts Runner
Chat-completion requests, scripted and HTTP backends, token counting and cost accounting
"""

import hashlib
import json
import logging
import threading
from collections import deque
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import List, Optional, Tuple

import requests
from tenacity import (Retrying, before_sleep_log, retry_if_exception_type,
                      stop_after_attempt, wait_exponential)

from config import CONFIG
from errors import BackendFailure, ContractViolation

logger = logging.getLogger(__name__)

SCRIPT_FORMAT = 'script-v1'


def prompt_digest(text):
    """sha256 hex digest of a prompt, the key of scripted responses"""
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def count_tokens(text):
    """Deterministic token estimate: ceil(utf-8 bytes / 4)"""
    return (len(text.encode('utf-8')) + 3) // 4


@dataclass(frozen=True)
class CompletionRequest:
    """
    One chat-completion query.

    op_id and sequence are filled in by the engine at dispatch time; mock
    backends derive their randomness from the sequence number so that
    concurrent dispatch stays deterministic.
    """
    messages: Tuple[Tuple[str, str], ...]
    temperature: float = 1.0
    max_tokens: int = 1024
    n: int = 1
    stop: Optional[Tuple[str, ...]] = None
    op_id: Optional[int] = None
    sequence: Optional[int] = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not self.messages:
            raise ValueError("a request needs at least one message")

    @classmethod
    def from_prompt(cls, prompt, n=1, op_id=None, temperature=None, max_tokens=None):
        """Single user-message request using the configured sampling settings"""
        return cls(
            messages=(('user', prompt),),
            temperature=CONFIG['temperature'] if temperature is None else temperature,
            max_tokens=CONFIG['max_tokens'] if max_tokens is None else max_tokens,
            n=n,
            op_id=op_id,
        )

    @property
    def prompt(self):
        """Text of the last user message"""
        for role, text in reversed(self.messages):
            if role == 'user':
                return text
        return self.messages[-1][1]

    def digest(self):
        return prompt_digest(self.prompt)


@dataclass(frozen=True)
class CompletionResponse:
    texts: Tuple[str, ...]
    prompt_tokens: int = 0
    response_tokens: int = 0


@dataclass(frozen=True)
class CostModel:
    """Prices in currency per 1000 tokens, kept as exact fractions"""
    prompt_token_cost: Fraction = Fraction(0)
    response_token_cost: Fraction = Fraction(0)

    def __post_init__(self):
        for name in ('prompt_token_cost', 'response_token_cost'):
            value = getattr(self, name)
            if not isinstance(value, Fraction):
                value = Fraction(str(value))
                object.__setattr__(self, name, value)
            if value < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class CostLedger:
    """Per-call token records of one run"""
    entries: List[Tuple[Optional[int], int, int]] = field(default_factory=list)
    prompt_tokens: int = 0
    response_tokens: int = 0

    def __post_init__(self):
        self._lock = threading.Lock()

    def record(self, op_id, prompt_tokens, response_tokens):
        with self._lock:
            self.entries.append((op_id, prompt_tokens, response_tokens))
            self.prompt_tokens += prompt_tokens
            self.response_tokens += response_tokens

    def subtotal(self, op_id):
        """(prompt_tokens, response_tokens) recorded for one operation"""
        prompt = sum(p for op, p, _ in self.entries if op == op_id)
        response = sum(r for op, _, r in self.entries if op == op_id)
        return prompt, response

    def merge(self, other):
        for entry in other.entries:
            self.record(*entry)
        return self


def total_cost(ledger, model):
    """Exact cost of every ledger entry under a cost model"""
    cost = Fraction(0)
    for _, prompt_tokens, response_tokens in ledger.entries:
        cost += (prompt_tokens * model.prompt_token_cost
                 + response_tokens * model.response_token_cost) / 1000
    return cost


class LanguageModel:
    """
    Base class for backends.

    Subclasses implement _complete(request) and return a CompletionResponse;
    query() counts the call and enforces the n-texts contract.
    """

    supports_concurrency = False

    def __init__(self):
        self.calls = 0
        self._counter_lock = threading.Lock()

    def _next_call(self):
        with self._counter_lock:
            index = self.calls
            self.calls += 1
            return index

    def query(self, request):
        """
        Answer a completion request

        Args:
            request: CompletionRequest

        Returns:
            CompletionResponse with exactly request.n texts

        Raises:
            BackendFailure: the backend gave up
            ContractViolation: fewer texts than requested
        """
        index = self._next_call()
        if request.sequence is None:
            request = replace(request, sequence=index)
        response = self._complete(request)
        if len(response.texts) < request.n:
            raise ContractViolation(
                f"Backend returned {len(response.texts)} texts for n={request.n}")
        if len(response.texts) > request.n:
            response = replace(response, texts=tuple(response.texts[:request.n]))
        return response

    def _complete(self, request):
        raise NotImplementedError


class ScriptedBackend(LanguageModel):
    """
    Replays pinned responses.

    Responses keyed by prompt digest are consumed first (in order per
    digest); anything else comes from the shared sequence.
    """

    def __init__(self, by_digest=None, sequence=None):
        super().__init__()
        self._by_digest = {k: deque(v) for k, v in (by_digest or {}).items()}
        self._sequence = deque(sequence or [])
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path):
        """Load a script-v1 JSON fixture"""
        try:
            with open(path, 'r', encoding='utf-8') as f:
                document = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise BackendFailure(f"Cannot load script {path}: {e}") from e
        if document.get('format') != SCRIPT_FORMAT:
            raise BackendFailure(f"Script {path} is not in {SCRIPT_FORMAT} format")
        return cls(document.get('by_digest'), document.get('sequence'))

    def remaining(self):
        return len(self._sequence) + sum(len(q) for q in self._by_digest.values())

    def _complete(self, request):
        digest = request.digest()
        texts = []
        with self._lock:
            for _ in range(request.n):
                queue = self._by_digest.get(digest)
                if queue:
                    texts.append(queue.popleft())
                elif self._sequence:
                    texts.append(self._sequence.popleft())
                else:
                    raise BackendFailure(f"Script exhausted at prompt {digest[:12]}")
        return CompletionResponse(
            texts=tuple(texts),
            prompt_tokens=count_tokens(request.prompt),
            response_tokens=sum(count_tokens(t) for t in texts),
        )


class _TransientError(Exception):
    """Failure worth retrying (connection problems, 429, 5xx)"""


class HttpChatBackend(LanguageModel):
    """Chat-completion client over requests with tenacity retries"""

    supports_concurrency = True

    def __init__(self, api_key, organization=None, model=None, url=None, timeout=None,
                 retry_budget=None, backoff_base=None, backoff_max=None, session=None):
        super().__init__()
        self.api_key = api_key
        self.organization = organization
        self.model = model or CONFIG['model_name']
        self.url = url or CONFIG['api_url']
        self.timeout = timeout or CONFIG['request_timeout']
        self.retry_budget = retry_budget or CONFIG['retry_budget']
        self.context_tokens = CONFIG['context_tokens']
        self.backoff_base = CONFIG['backoff_base_seconds'] if backoff_base is None else backoff_base
        self.backoff_max = CONFIG['backoff_max_seconds'] if backoff_max is None else backoff_max
        self.session = session or requests.Session()

    def _headers(self):
        headers = {
            'Authorization': f'Bearer {self.api_key}',
            'Content-Type': 'application/json',
        }
        if self.organization:
            headers['OpenAI-Organization'] = self.organization
        return headers

    def _payload(self, request):
        prompt_tokens = sum(count_tokens(text) for _, text in request.messages)
        room = self.context_tokens - prompt_tokens
        if room < 1:
            raise BackendFailure(f"Prompt of {prompt_tokens} tokens does not fit the "
                                 f"{self.context_tokens}-token context")
        payload = {
            'model': self.model,
            'messages': [{'role': role, 'content': text} for role, text in request.messages],
            'temperature': request.temperature,
            'max_tokens': min(request.max_tokens, room),
            'n': request.n,
        }
        if request.stop:
            payload['stop'] = list(request.stop)
        return payload

    def _post_once(self, payload):
        try:
            response = self.session.post(self.url, json=payload, headers=self._headers(),
                                         timeout=self.timeout)
        except (requests.ConnectionError, requests.Timeout) as e:
            raise _TransientError(f"Connection error: {e}") from e

        code = response.status_code
        if code == 429 or code >= 500:
            raise _TransientError(f"HTTP Error {code}")
        if code == 401:
            raise BackendFailure(
                f"Authentication failed - check {CONFIG['api_key_env']}")
        if code == 403:
            raise BackendFailure("Access denied")
        if code == 404:
            raise BackendFailure(f"Endpoint or model not found: {self.url} ({self.model})")
        if code >= 400:
            raise BackendFailure(f"HTTP Error {code}: {response.text[:200]}")

        try:
            return response.json()
        except ValueError as e:
            raise BackendFailure(f"Invalid JSON response: {e}") from e

    def _complete(self, request):
        payload = self._payload(request)
        retrying = Retrying(
            stop=stop_after_attempt(self.retry_budget + 1),
            wait=wait_exponential(multiplier=self.backoff_base, max=self.backoff_max),
            retry=retry_if_exception_type(_TransientError),
            before_sleep=before_sleep_log(logger, logging.WARNING),
            reraise=True,
        )
        try:
            body = retrying(self._post_once, payload)
        except _TransientError as e:
            raise BackendFailure(
                f"Request failed after {self.retry_budget} retries: {e}") from e

        try:
            texts = tuple(choice['message']['content'] or '' for choice in body['choices'])
        except (KeyError, TypeError) as e:
            raise BackendFailure(f"Unexpected response shape: {e}") from e

        usage = body.get('usage') or {}
        prompt_tokens = usage.get('prompt_tokens')
        response_tokens = usage.get('completion_tokens')
        if prompt_tokens is None:
            prompt_tokens = sum(count_tokens(text) for _, text in request.messages)
        if response_tokens is None:
            response_tokens = sum(count_tokens(t) for t in texts)
        return CompletionResponse(texts=texts, prompt_tokens=prompt_tokens,
                                  response_tokens=response_tokens)
