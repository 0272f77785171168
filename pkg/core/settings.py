"""
Harness settings: data paths, parallelism and selector connection details.

Persisted to a JSON file; environment variables override the selector
endpoint and key.
"""

import json
import logging
import os

from core.constants import (
    CANONICAL_PILOT_FILE,
    CORPUS_FILE,
    DEFAULT_OUTPUT_DIR,
    MAX_RECENT_OUTPUTS,
    SELECTOR_MAX_IN_FLIGHT,
    SELECTOR_TIMEOUT,
    SETTINGS_FILE,
    SYNONYMS_FILE,
    TEMPLATES_FILE,
)

logger = logging.getLogger(__name__)

ENV_ENDPOINT = "SELECTOR_ENDPOINT"
ENV_API_KEY = "SELECTOR_API_KEY"


class HarnessSettings:
    """
    Manages harness settings and the list of recently written output directories.

    Missing or unreadable settings files fall back to defaults.
    """

    def __init__(self, settings_file=SETTINGS_FILE, environ=None):
        """
        Initialize settings from file and environment.

        Args:
            settings_file (str): Path to JSON settings file
            environ (dict): Environment mapping, os.environ when omitted
        """
        self.settings_file = settings_file
        self.environ = os.environ if environ is None else environ
        self.settings = self.load_settings()
        self.recent_outputs = list(self.settings.get("recent_outputs", []))

    @staticmethod
    def defaults():
        return {
            "corpus": CORPUS_FILE,
            "synonyms": SYNONYMS_FILE,
            "templates": TEMPLATES_FILE,
            "pilot": CANONICAL_PILOT_FILE,
            "output_dir": DEFAULT_OUTPUT_DIR,
            "jobs": 1,
            "selector_endpoint": "",
            "selector_api_key": "",
            "selector_timeout": SELECTOR_TIMEOUT,
            "selector_max_in_flight": SELECTOR_MAX_IN_FLIGHT,
            "recent_outputs": [],
        }

    def load_settings(self):
        """
        Load settings from JSON file merged over the defaults.

        Returns:
            dict: Settings dictionary

        Notes:
            Unknown keys in the file are kept so newer files still load.
        """
        settings = self.defaults()
        if os.path.exists(self.settings_file):
            try:
                with open(self.settings_file, "r", encoding="utf-8") as file:
                    loaded = json.load(file)
                if isinstance(loaded, dict):
                    settings.update(loaded)
                else:
                    logger.warning("Ignoring %s: top level is not an object", self.settings_file)
            except (json.JSONDecodeError, OSError) as e:
                logger.warning("Ignoring unreadable settings file %s: %s", self.settings_file, e)
        return settings

    def save_settings(self):
        """Persist current settings (environment overrides are not written)."""
        self.settings["recent_outputs"] = self.recent_outputs
        with open(self.settings_file, "w", encoding="utf-8") as file:
            json.dump(self.settings, file, indent=4)

    def get(self, key, default=None):
        return self.settings.get(key, default)

    @property
    def selector_endpoint(self):
        return self.environ.get(ENV_ENDPOINT) or self.settings.get("selector_endpoint") or ""

    @property
    def selector_api_key(self):
        return self.environ.get(ENV_API_KEY) or self.settings.get("selector_api_key") or None

    @property
    def jobs(self):
        try:
            return max(1, int(self.settings.get("jobs", 1)))
        except (TypeError, ValueError):
            return 1

    def add_recent_output(self, path):
        """
        Add output directory to the recent list (maximum MAX_RECENT_OUTPUTS entries).

        Args:
            path (str): Directory written by a harness command
        """
        if path in self.recent_outputs:
            self.recent_outputs.remove(path)
        self.recent_outputs.insert(0, path)
        self.recent_outputs = self.recent_outputs[:MAX_RECENT_OUTPUTS]
