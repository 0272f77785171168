"""
Unit tests for core.selector_client module.

Run with: python -m unittest tests.test_selector_client
"""

import json
import unittest
from unittest import mock

import requests

from core.constants import CORPUS_FILE, MAP_EXTERNAL, SYNONYMS_FILE, TEMPLATES_FILE
from core.controller import SystemConfig, run_case
from core.corpus import load_corpus
from core.dataset import Case, load_templates
from core.errors import RunError, SelectorProtocolError, SelectorUnavailableError
from core.policy import ScriptedSelector, SelectorDecision, SelectorState
from core.selector_client import ExternalSelector, external_select, parse_reply

ENDPOINT = "http://selector.test/decide"


def reply(action, target=None, query=None, reasoning="because"):
    return json.dumps({"action": action, "reasoning": reasoning, "target_element": target, "query": query})


def response(body, status=200, tokens=None):
    resp = mock.Mock()
    resp.status_code = status
    resp.text = body
    resp.headers = {"X-Token-Count": str(tokens)} if tokens is not None else {}
    return resp


def empty_state():
    return SelectorState("query", 0, 0.0, 1.0, (("i", "Issue"),), ())


class TestParseReply(unittest.TestCase):
    """Test suite for reply parsing."""

    def test_valid_reply(self):
        """Test that a well-formed reply becomes a decision."""
        decision = parse_reply(reply("retrieve_statute", "wa-1", "unpaid wages"))
        self.assertEqual(decision, SelectorDecision("retrieve_statute", "because", "wa-1", "unpaid wages"))

    def test_missing_field_keeps_raw(self):
        """Test that a reply without a field raises with the raw payload attached."""
        raw = json.dumps({"action": "generate_conclusion", "reasoning": "done", "target_element": None})
        with self.assertRaises(SelectorProtocolError) as ctx:
            parse_reply(raw)
        self.assertEqual(ctx.exception.raw, raw)

    def test_extra_field_rejected(self):
        """Test that an unexpected field is a protocol error."""
        body = json.loads(reply("generate_conclusion"))
        body["confidence"] = 0.9
        with self.assertRaises(SelectorProtocolError):
            parse_reply(json.dumps(body))

    def test_not_json(self):
        """Test that a non-JSON body is a protocol error."""
        with self.assertRaises(SelectorProtocolError) as ctx:
            parse_reply("I think you should retrieve statutes")
        self.assertIn("retrieve statutes", ctx.exception.raw)

    def test_invalid_decision(self):
        """Test that a retrieval reply without a query is a protocol error."""
        with self.assertRaises(SelectorProtocolError):
            parse_reply(reply("retrieve_case", "wa-1", None))

    def test_wrong_field_types(self):
        """Test that wrongly typed fields are protocol errors carrying the raw payload."""
        bodies = [
            {"action": "retrieve_statute", "reasoning": "r", "target_element": "wa-1", "query": 5},
            {"action": "retrieve_statute", "reasoning": "r", "target_element": ["wa-1"], "query": "wages"},
            {"action": ["generate_conclusion"], "reasoning": "r", "target_element": None, "query": None},
            {"action": "generate_conclusion", "reasoning": None, "target_element": None, "query": None},
        ]
        for body in bodies:
            raw = json.dumps(body)
            with self.subTest(body=body):
                with self.assertRaises(SelectorProtocolError) as ctx:
                    parse_reply(raw)
                self.assertEqual(ctx.exception.raw, raw)


@mock.patch("core.selector_client.requests.post")
class TestExternalSelector(unittest.TestCase):
    """Test suite for the HTTP selector with a stubbed transport."""

    def test_no_endpoint(self, post):
        """Test that a missing endpoint fails fast."""
        with self.assertRaises(SelectorUnavailableError):
            ExternalSelector("")
        post.assert_not_called()

    def test_request_payload_and_usage(self, post):
        """Test the request body fields and recorded token usage."""
        post.return_value = response(reply("generate_conclusion"), tokens=321)
        selector = ExternalSelector(ENDPOINT, api_key="secret")
        decision = selector.select(empty_state())
        self.assertEqual(decision.action, "generate_conclusion")
        _, kwargs = post.call_args
        self.assertEqual(
            list(kwargs["json"]),
            ["user_query", "round", "ec", "evc", "issues", "elements", "evidence", "goals", "temperature"],
        )
        self.assertEqual(kwargs["json"]["temperature"], 0.3)
        self.assertEqual(kwargs["headers"]["Authorization"], "Bearer secret")
        self.assertEqual(selector.last_usage["tokens"], 321)
        self.assertGreaterEqual(selector.last_usage["latency_s"], 0.0)

    def test_latency_excludes_slot_wait(self, post):
        """Test that time spent waiting for an in-flight slot is not recorded as latency."""
        clock = [100.0]

        def wait_for_slot():
            clock[0] += 5.0

        def answer(*args, **kwargs):
            clock[0] += 0.5
            return response(reply("generate_conclusion"))

        post.side_effect = answer
        selector = ExternalSelector(ENDPOINT)
        slot = mock.MagicMock()
        slot.__enter__.side_effect = wait_for_slot
        slot.__exit__.return_value = False
        selector._slot = slot
        with mock.patch("core.selector_client.time.perf_counter", side_effect=lambda: clock[0]):
            selector.select(empty_state())
        self.assertAlmostEqual(selector.last_usage["latency_s"], 0.5)

    def test_retries_transport_errors(self, post):
        """Test that a transport error is retried."""
        post.side_effect = [requests.ConnectionError("down"), response(reply("generate_conclusion"))]
        decision = ExternalSelector(ENDPOINT, retries=2).select(empty_state())
        self.assertEqual(decision.action, "generate_conclusion")
        self.assertEqual(post.call_count, 2)

    def test_gives_up_after_retries(self, post):
        """Test that repeated 5xx responses end in SelectorUnavailableError."""
        post.return_value = response("oops", status=503)
        with self.assertRaises(SelectorUnavailableError):
            ExternalSelector(ENDPOINT, retries=2).select(empty_state())
        self.assertEqual(post.call_count, 3)

    def test_client_error_not_retried(self, post):
        """Test that a 4xx response is a protocol error without retries."""
        post.return_value = response("bad request", status=400)
        with self.assertRaises(SelectorProtocolError):
            external_select(ENDPOINT, empty_state())
        self.assertEqual(post.call_count, 1)


@mock.patch("core.selector_client.requests.post")
class TestReplayConformance(unittest.TestCase):
    """A stub endpoint replaying a decision list matches the scripted selector."""

    @classmethod
    def setUpClass(cls):
        """Load corpus, schema and a wage-arrears case."""
        cls.corpus = load_corpus(CORPUS_FILE, SYNONYMS_FILE)
        cls.schema = load_templates(TEMPLATES_FILE)["wage_arrears"].schema
        cls.case = Case(
            id="replay-001",
            case_type="wage_arrears",
            user_query="My employer owes me unpaid wages.",
            ground_truth_elements=tuple(cls.schema.element_ids),
            key_statutes=("st-101",),
            clarifications=("I worked there for two years.",),
        )
        cls.system = SystemConfig("external", MAP_EXTERNAL)
        cls.decisions = [
            SelectorDecision("retrieve_statute", "statutes first", "wa-1", "unpaid wages"),
            SelectorDecision("retrieve_case", "then cases", "wa-1", "attendance records"),
            SelectorDecision("request_clarification", "ask the user", "wa-2", None),
            SelectorDecision("generate_conclusion", "enough", None, None),
        ]

    @staticmethod
    def _strip_usage(trace):
        data = trace.to_dict()
        for record in data["rounds"]:
            record.pop("tokens", None)
            record.pop("latency_s", None)
        return data

    def test_replay_matches_scripted(self, post):
        """Test that external and scripted runs of the same decisions produce identical traces."""
        post.side_effect = [
            response(reply(d.action, d.target_element, d.query, d.reasoning), tokens=100)
            for d in self.decisions
        ]
        external = run_case(self.case, self.schema, self.corpus, self.system, ExternalSelector(ENDPOINT))
        scripted = run_case(self.case, self.schema, self.corpus, self.system, ScriptedSelector(self.decisions))

        self.assertEqual(self._strip_usage(external), self._strip_usage(scripted))
        self.assertEqual(external.rounds_executed, 3)
        self.assertEqual(external.tokens_total, 300)
        self.assertEqual(external.stop_reason, "conclusion_action")
        self.assertEqual(len(external.graph.facts), 1)

    def test_malformed_reply_aborts_run(self, post):
        """Test that a protocol error mid-run surfaces as RunError with the partial trace."""
        post.side_effect = [
            response(reply("retrieve_statute", "wa-1", "unpaid wages")),
            response("{\"action\": \"retrieve_case\"}"),
        ]
        with self.assertRaises(RunError) as ctx:
            run_case(self.case, self.schema, self.corpus, self.system, ExternalSelector(ENDPOINT))
        self.assertIsInstance(ctx.exception.__cause__, SelectorProtocolError)
        self.assertEqual(ctx.exception.trace.rounds_executed, 1)

    def test_wrongly_typed_target_aborts_run(self, post):
        """Test that a list-valued target surfaces as RunError, not a crash in the loop."""
        body = json.dumps({"action": "retrieve_statute", "reasoning": "r",
                           "target_element": ["wa-1"], "query": "unpaid wages"})
        post.return_value = response(body)
        with self.assertRaises(RunError) as ctx:
            run_case(self.case, self.schema, self.corpus, self.system, ExternalSelector(ENDPOINT))
        self.assertIsInstance(ctx.exception.__cause__, SelectorProtocolError)
        self.assertEqual(ctx.exception.__cause__.raw, body)
        self.assertEqual(ctx.exception.trace.rounds_executed, 0)


if __name__ == "__main__":
    unittest.main()
