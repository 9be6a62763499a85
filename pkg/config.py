#!/usr/bin/env python3
"""
Configuration Module for Graph of Thoughts Runner
Centralized defaults for LLM requests, retries, pricing and experiments
"""

import json
import logging
import os
from fractions import Fraction

from dotenv import load_dotenv

from errors import ConfigError

logger = logging.getLogger(__name__)

# LLM Request Settings
DEFAULT_TEMPERATURE = 1.0
CONTEXT_TOKENS = 4096        # 4k context window
RESPONSE_MAX_TOKENS = 1024
MODEL_NAME = 'gpt-3.5-turbo'
API_URL = 'https://api.openai.com/v1/chat/completions'
API_KEY_ENV = 'OPENAI_API_KEY'
ORGANIZATION_ENV = 'OPENAI_ORGANIZATION'

# Retry Settings
RETRY_BUDGET = 3             # retries per request after the first attempt
BACKOFF_BASE_SECONDS = 1
BACKOFF_MAX_SECONDS = 30
REQUEST_TIMEOUT = 120        # seconds

# Concurrency Settings
CONCURRENCY_WINDOW = 4       # in-flight requests per operation
BATCH_WORKERS = 1            # runs executed in parallel within a batch

# Pricing (currency per 1000 tokens); zero unless configured
PROMPT_TOKEN_COST = '0'
RESPONSE_TOKEN_COST = '0'

# Experiment Defaults
DEFAULT_SAMPLES = 100
COT_SC_K = 10
TOT_K = 20
TOT_LEVELS = 4               # 80 responses
TOT2_K = 10
TOT2_LEVELS = 6              # 60 responses
KEYWORD_SIZE = 32            # country mentions per passage
KEYWORD_COUNT_SAMPLES = 10
MERGE_ATTEMPTS = 1
IMPROVE_ATTEMPTS = 3         # ValidateAndImprove budget per merge

# Files
FIXTURE_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'fixtures')
RECORD_WALL_TIME = False     # wall time breaks byte-identical traces
LOG_LEVEL = 'INFO'

# Configuration dictionary for easy access
CONFIG = {
    'temperature': DEFAULT_TEMPERATURE,
    'context_tokens': CONTEXT_TOKENS,
    'max_tokens': RESPONSE_MAX_TOKENS,
    'model_name': MODEL_NAME,
    'api_url': API_URL,
    'api_key_env': API_KEY_ENV,
    'organization_env': ORGANIZATION_ENV,
    'retry_budget': RETRY_BUDGET,
    'backoff_base_seconds': BACKOFF_BASE_SECONDS,
    'backoff_max_seconds': BACKOFF_MAX_SECONDS,
    'request_timeout': REQUEST_TIMEOUT,
    'concurrency_window': CONCURRENCY_WINDOW,
    'batch_workers': BATCH_WORKERS,
    'prompt_token_cost': PROMPT_TOKEN_COST,
    'response_token_cost': RESPONSE_TOKEN_COST,
    'samples': DEFAULT_SAMPLES,
    'cot_sc_k': COT_SC_K,
    'tot_k': TOT_K,
    'tot_levels': TOT_LEVELS,
    'tot2_k': TOT2_K,
    'tot2_levels': TOT2_LEVELS,
    'keyword_size': KEYWORD_SIZE,
    'keyword_count_samples': KEYWORD_COUNT_SAMPLES,
    'merge_attempts': MERGE_ATTEMPTS,
    'improve_attempts': IMPROVE_ATTEMPTS,
    'fixture_dir': FIXTURE_DIR,
    'record_wall_time': RECORD_WALL_TIME,
    'log_level': LOG_LEVEL,
}


def load_config_from_file(config_file='config.json'):
    """
    Load configuration from JSON file if it exists

    Args:
        config_file: Path to configuration file

    Returns:
        Updated CONFIG dictionary

    Raises:
        ConfigError: the file exists but is not a JSON object, or fails validation
    """
    if not os.path.exists(config_file):
        return CONFIG

    try:
        with open(config_file, 'r', encoding='utf-8') as f:
            user_config = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        logger.error("Error loading config file %s: %s", config_file, e)
        raise ConfigError(f"Cannot read config file {config_file}: {e}") from e

    if not isinstance(user_config, dict):
        raise ConfigError(f"Config file {config_file} must hold a JSON object")

    unknown = sorted(set(user_config) - set(CONFIG))
    if unknown:
        logger.warning("Ignoring unknown config keys: %s", ", ".join(unknown))
    merged = dict(CONFIG)
    merged.update({k: v for k, v in user_config.items() if k in CONFIG})

    is_valid, message = validate_config(merged)
    if not is_valid:
        raise ConfigError(message)

    CONFIG.update(merged)
    logger.info("Loaded configuration from %s", config_file)
    return CONFIG


def save_config_to_file(config_file='config.json'):
    """
    Save current configuration to JSON file

    Args:
        config_file: Path to configuration file
    """
    try:
        with open(config_file, 'w', encoding='utf-8') as f:
            json.dump(CONFIG, f, indent=2)
        logger.info("Configuration saved to %s", config_file)
        return True
    except OSError as e:
        logger.error("Error saving config file: %s", e)
        return False


def _as_fraction(value):
    try:
        return Fraction(str(value))
    except (ValueError, ZeroDivisionError):
        return None


def validate_config(config=None):
    """
    Validate request, retry, concurrency and pricing settings

    Args:
        config: Mapping to check (defaults to CONFIG)

    Returns:
        Tuple of (is_valid, message)
    """
    config = CONFIG if config is None else config

    if not isinstance(config.get('temperature'), (int, float)) or config['temperature'] < 0:
        return False, "temperature must be a number >= 0"
    for key in ('context_tokens', 'max_tokens', 'retry_budget', 'concurrency_window',
                'batch_workers'):
        value = config.get(key)
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            return False, f"{key} must be an integer >= 1"
    for key in ('prompt_token_cost', 'response_token_cost'):
        price = _as_fraction(config.get(key))
        if price is None or price < 0:
            return False, f"{key} must be a non-negative number"
    if config.get('backoff_base_seconds', 0) < 0:
        return False, "backoff_base_seconds must be >= 0"
    return True, None


def load_api_key(dotenv_path=None):
    """
    Read the API key and organization from the environment (and a .env file)

    Returns:
        Tuple of (api_key, organization); organization may be None

    Raises:
        ConfigError: the API key variable is unset
    """
    load_dotenv(dotenv_path)
    api_key = os.getenv(CONFIG['api_key_env'])
    if not api_key:
        raise ConfigError(f"Environment variable {CONFIG['api_key_env']} is not set")
    return api_key, os.getenv(CONFIG['organization_env']) or None


def get_cost_model():
    """Build a CostModel from the configured per-1000-token prices"""
    from llm_backend import CostModel

    return CostModel(
        prompt_token_cost=_as_fraction(CONFIG['prompt_token_cost']),
        response_token_cost=_as_fraction(CONFIG['response_token_cost']),
    )
