"""
HTTP client for external (model-backed) action selectors.

Sends the serialized selector state to SELECTOR_ENDPOINT and parses the
four-field reply {action, reasoning, target_element, query}. Token counts
and wall-clock latency of the last call are kept on the selector so the
controller can copy them into the round record.
"""

from __future__ import annotations

import json
import logging
import threading
import time

import requests

from core.constants import (
    SELECTOR_MAX_IN_FLIGHT,
    SELECTOR_RETRIES,
    SELECTOR_TEMPERATURE,
    SELECTOR_TIMEOUT,
)
from core.errors import SelectorProtocolError, SelectorUnavailableError
from core.policy import Selector, SelectorDecision

logger = logging.getLogger(__name__)

REPLY_FIELDS = ("action", "reasoning", "target_element", "query")
TOKEN_HEADER = "X-Token-Count"


def parse_reply(raw):
    """
    Turn a raw reply body into a validated SelectorDecision.

    Args:
        raw (str): Response body

    Raises:
        SelectorProtocolError: If the body is not a JSON object with exactly
            the four reply fields, a field has the wrong type (action and
            reasoning are strings, target_element and query strings or
            null), or the decision breaks its invariants
    """
    try:
        body = json.loads(raw)
    except (json.JSONDecodeError, TypeError) as e:
        raise SelectorProtocolError(f"reply is not JSON: {e}", raw) from e
    if not isinstance(body, dict):
        raise SelectorProtocolError("reply is not a JSON object", raw)
    missing = [name for name in REPLY_FIELDS if name not in body]
    extra = [name for name in body if name not in REPLY_FIELDS]
    if missing or extra:
        raise SelectorProtocolError(
            f"reply fields wrong (missing: {missing or 'none'}, unexpected: {extra or 'none'})", raw
        )
    wrong = [name for name in ("action", "reasoning") if not isinstance(body[name], str)]
    wrong += [name for name in ("target_element", "query") if body[name] is not None and not isinstance(body[name], str)]
    if wrong:
        raise SelectorProtocolError(f"reply fields have wrong types: {wrong}", raw)
    decision = SelectorDecision(
        action=body["action"],
        reasoning=body["reasoning"],
        target_element=body["target_element"] or None,
        query=body["query"] or None,
    )
    try:
        return decision.validate()
    except ValueError as e:
        raise SelectorProtocolError(str(e), raw) from e


class ExternalSelector(Selector):
    """
    Selector backed by a remote endpoint.

    Transport failures and 5xx responses are retried; after the last retry
    a SelectorUnavailableError is raised. Concurrent calls across parallel
    runs are capped by a shared semaphore.
    """

    name = "external"
    _slots = {}
    _slots_lock = threading.Lock()

    def __init__(self, endpoint, api_key=None, timeout=SELECTOR_TIMEOUT, retries=SELECTOR_RETRIES,
                 temperature=SELECTOR_TEMPERATURE, max_in_flight=SELECTOR_MAX_IN_FLIGHT):
        if not endpoint:
            raise SelectorUnavailableError("no selector endpoint configured (set SELECTOR_ENDPOINT)")
        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout = timeout
        self.retries = retries
        self.temperature = temperature
        self._local = threading.local()
        with self._slots_lock:
            self._slot = self._slots.setdefault((endpoint, max_in_flight), threading.BoundedSemaphore(max_in_flight))

    @property
    def last_usage(self):
        return getattr(self._local, "usage", None)

    def _headers(self):
        headers = {"Content-Type": "application/json", "Accept": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def select(self, state):
        payload = state.to_payload()
        if self.temperature is not None:
            payload["temperature"] = self.temperature

        last_error = None
        for attempt in range(self.retries + 1):
            try:
                with self._slot:
                    # latency excludes the wait for a free slot
                    started = time.perf_counter()
                    response = requests.post(self.endpoint, json=payload, headers=self._headers(), timeout=self.timeout)
                    latency = time.perf_counter() - started
            except requests.RequestException as e:
                last_error = e
                logger.warning("Selector request failed (attempt %d/%d): %s", attempt + 1, self.retries + 1, e)
                continue
            if response.status_code >= 500:
                last_error = f"HTTP {response.status_code}"
                logger.warning("Selector returned HTTP %d (attempt %d/%d)",
                               response.status_code, attempt + 1, self.retries + 1)
                continue
            if response.status_code >= 400:
                raise SelectorProtocolError(f"selector rejected the request: HTTP {response.status_code}", response.text)

            decision = parse_reply(response.text)
            tokens = response.headers.get(TOKEN_HEADER)
            self._local.usage = {
                "tokens": int(tokens) if tokens and tokens.isdigit() else None,
                "latency_s": latency,
            }
            logger.debug("External decision at round %d: %s", state.round, decision.action)
            return decision

        raise SelectorUnavailableError(
            f"selector at {self.endpoint} unavailable after {self.retries + 1} attempts: {last_error}"
        )


def external_select(endpoint, state, api_key=None, **kwargs):
    """One-shot call of an external selector."""
    return ExternalSelector(endpoint, api_key, **kwargs).select(state)
