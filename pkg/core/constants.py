"""
Harness-wide constants for the consultation-map retrieval-control harness.

This module contains all thresholds, caps and default paths used
throughout the harness, centralized for easy maintenance.
"""

import os

# App metadata
APP_NAME = "Consultation Map Harness"
APP_VERSION = "1.0.0"

# Stopping rule
THETA_E = 0.85  # Element coverage threshold
THETA_EV = 0.70  # Evidence validity coverage threshold
DELTA = 0.05  # Marginal-gain threshold for the low-gain stop
R_MAX = 7  # Round budget

# Matching
LINK_THRESHOLD = 0.25  # Minimum match score for an evidence-element link (inclusive)
LEGAL_TERM_FLOOR = 0.6  # Score granted when a legal term occurs verbatim

# Retrieval caps per action
RETRIEVAL_CAPS = {
    "statute": 3,
    "case": 2,
    "web": 2,
}

# Action space
RETRIEVE_STATUTE = "retrieve_statute"
RETRIEVE_CASE = "retrieve_case"
SEARCH_WEB = "search_web"
EXTRACT_FACT = "extract_fact"
REQUEST_CLARIFICATION = "request_clarification"
GENERATE_CONCLUSION = "generate_conclusion"
ACTIONS = (
    RETRIEVE_STATUTE,
    RETRIEVE_CASE,
    SEARCH_WEB,
    EXTRACT_FACT,
    REQUEST_CLARIFICATION,
    GENERATE_CONCLUSION,
)
RETRIEVAL_ACTIONS = {
    RETRIEVE_STATUTE: "statute",
    RETRIEVE_CASE: "case",
    SEARCH_WEB: "web",
}

# Requirement kind -> action used by the rule policy
REQUIREMENT_ACTIONS = {
    "statute": RETRIEVE_STATUTE,
    "case": RETRIEVE_CASE,
    "fact": REQUEST_CLARIFICATION,
    "any": RETRIEVE_STATUTE,
}

# Support statuses
UNSUPPORTED = "unsupported"
PARTIALLY_SUPPORTED = "partially_supported"
FULLY_SUPPORTED = "fully_supported"

# Stop reasons
STOP_THRESHOLD = "threshold"
STOP_LOW_GAIN = "low_gain"
STOP_BUDGET = "budget"
STOP_CONCLUSION = "conclusion_action"

# Selectors
ORACLE_CONCLUSION_GATE = 0.7  # Oracle emits generate_conclusion only at EC >= this
FRUITLESS_ATTEMPTS = 2  # Rule policy moves on after this many fruitless rounds
SELECTOR_TEMPERATURE = 0.3
SELECTOR_RETRIES = 2  # Retries after the first failed request
SELECTOR_TIMEOUT = 30  # Seconds per HTTP request
SELECTOR_MAX_IN_FLIGHT = 4  # Concurrent external calls across parallel runs

# System kinds
MAP_RULE = "map_rule"
MAP_ORACLE = "map_oracle"
MAP_EXTERNAL = "map_external"
MAP_NO_THRESHOLD_STOP = "map_no_threshold_stop"
MAP_NO_GRAPH = "map_no_graph"
FIXED_N = "fixed_n"

# Baselines
NO_GRAPH_ROUNDS = 3  # Case retrieval rounds of the no-graph ablation

# Experiments
DEFAULT_DELTAS = (0.0, 0.01, 0.03, 0.05, 0.08)
DEFAULT_BUDGETS = (1, 2, 3, 5, 7)
DEFAULT_SEEDS = (42, 7, 21, 84)
DEFAULT_SEEDED_PILOT_SIZE = 30
STRATIFIED_SUBSET_SIZE = 20

# Files
DATA_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data")
CORPUS_FILE = os.path.join(DATA_DIR, "corpus.yaml")
SYNONYMS_FILE = os.path.join(DATA_DIR, "synonyms.yaml")
TEMPLATES_FILE = os.path.join(DATA_DIR, "templates.yaml")
CANONICAL_PILOT_FILE = os.path.join(DATA_DIR, "pilot_canonical.yaml")
PILOT_LOCK_FILE = os.path.join(DATA_DIR, "pilot.lock")
SETTINGS_FILE = "harness_config.json"
DEFAULT_OUTPUT_DIR = "runs"

# Recent outputs
MAX_RECENT_OUTPUTS = 10  # Maximum number of output directories to remember

# Exit codes
EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
