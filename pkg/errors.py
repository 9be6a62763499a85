#!/usr/bin/env python3
"""
Errors Module for Graph of Thoughts Runner
Exception hierarchy shared by the graph, engine, backends, parsers and CLI
"""


class GoTError(Exception):
    """Base class for every error raised by this package"""


# Reasoning graph

class InconsistentDelta(GoTError):
    """A graph delta removes or connects vertices that do not exist"""


class UnknownThought(GoTError):
    """A thought id is not part of the reasoning state"""


# Graph of operations

class GooValidationError(GoTError):
    """A graph of operations failed validation"""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors) or "invalid graph of operations")


class TooFewInputs(GoTError):
    """An aggregation received fewer than two input thoughts"""


class UnscoredThought(GoTError):
    """KeepBestN was asked to rank a thought that has no score"""


class MissingGroundTruth(GoTError):
    """The problem instance carries no precomputed solution"""


# LLM backend

class BackendFailure(GoTError):
    """The language model could not be queried within the retry budget"""


class ContractViolation(GoTError):
    """A backend answered with fewer texts than requested, or could not answer"""


# Prompting and parsing

class UnknownTemplate(GoTError):
    """No prompt template is registered under the requested id"""


class UnboundPlaceholder(GoTError):
    """A template placeholder has no binding at render time"""


class ParseFailure(GoTError):
    """An LLM response could not be parsed into thought content"""


class NoListFound(ParseFailure):
    """No bracketed integer list in the response"""


class WrongArity(ParseFailure):
    """The response holds fewer lists or paragraphs than expected"""


class NoMapFound(ParseFailure):
    """No brace-delimited count map in the response"""


class NonIntegerFrequency(ParseFailure):
    """A count map entry has a non-integer value"""


class MissingTag(ParseFailure):
    """A required <tag>...</tag> section is absent"""


class NonNumericScore(ParseFailure):
    """A tagged score section does not hold a number"""


# Scoring

class OutOfRangeScore(GoTError):
    """A merge-quality sample lies outside [0, 10]"""


class AllSamplesUnparseable(GoTError):
    """Every LLM scoring sample failed to parse"""


# Schemes and metrics

class UnsupportedConfiguration(GoTError):
    """No plan exists for the requested scheme, use case and size"""


class InvalidSize(GoTError):
    """The problem size is not valid for the use case"""


class InvalidParameters(GoTError):
    """Topology parameters are out of range or inconsistent"""


# Configuration and CLI

class ConfigError(GoTError):
    """Configuration is malformed or inconsistent"""


class EmptyInput(GoTError):
    """Summaries need at least one record"""


class MismatchedExperiments(GoTError):
    """Two summaries do not describe the same use case and size"""


class BudgetExceeded(GoTError):
    """The accumulated cost of a batch passed the configured cap"""
