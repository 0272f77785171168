"""
Unit tests for core.policy module.

Run with: python -m unittest tests.test_policy
"""

import random
import unittest

from core.constants import (
    ACTIONS,
    FULLY_SUPPORTED,
    GENERATE_CONCLUSION,
    ORACLE_CONCLUSION_GATE,
    PARTIALLY_SUPPORTED,
    REQUEST_CLARIFICATION,
    RETRIEVAL_ACTIONS,
    RETRIEVE_CASE,
    RETRIEVE_STATUTE,
    UNSUPPORTED,
)
from core.policy import (
    ElementView,
    HardNoStopSelector,
    HistoryEntry,
    OracleSelector,
    RequirementView,
    RuleSelector,
    ScriptedSelector,
    Selector,
    SelectorDecision,
    SelectorState,
    conclusion,
    hard_no_stop_wrap,
    merge_usage,
    oracle_select,
    rule_select,
)

SYNONYMS = {"contribution base": ("assessable wage base",)}


def element(element_id, satisfied=(), kinds=("statute", "case"), keywords=None):
    requirements = tuple(
        RequirementView(kind, (f"{element_id} {kind} term",), i in satisfied)
        for i, kind in enumerate(kinds)
    )
    done = sum(1 for r in requirements if r.satisfied)
    if done == len(requirements):
        status = FULLY_SUPPORTED
    elif done:
        status = PARTIALLY_SUPPORTED
    else:
        status = UNSUPPORTED
    return ElementView(
        id=element_id,
        label=f"Label {element_id}",
        status=status,
        keywords=keywords or (f"{element_id} keyword",),
        missing_evidence=(f"missing {element_id}",),
        requirements=requirements,
    )


def state(elements, history=(), allow_conclusion=True, round_index=0):
    covered = sum(1 for el in elements if el.status == FULLY_SUPPORTED)
    return SelectorState(
        user_query="query",
        round=round_index,
        ec=covered / len(elements),
        evc=1.0,
        issues=(("issue", "Issue"),),
        elements=tuple(elements),
        history=tuple(history),
        allow_conclusion=allow_conclusion,
    )


class TestDecision(unittest.TestCase):
    """Test suite for SelectorDecision validation."""

    def test_retrieval_requires_query_and_target(self):
        """Test that retrieval actions without query or target are invalid."""
        with self.assertRaises(ValueError):
            SelectorDecision(RETRIEVE_STATUTE, "r", "e1", "  ").validate()
        with self.assertRaises(ValueError):
            SelectorDecision(RETRIEVE_CASE, "r", None, "q").validate()

    def test_conclusion_carries_nothing(self):
        """Test that a conclusion with a target is invalid."""
        with self.assertRaises(ValueError):
            SelectorDecision(GENERATE_CONCLUSION, "r", "e1", None).validate()
        self.assertIs(conclusion().validate().action, GENERATE_CONCLUSION)

    def test_unknown_action(self):
        """Test that an action outside the action space is invalid."""
        with self.assertRaises(ValueError):
            SelectorDecision("browse", "r", "e1", "q").validate()

    def test_non_string_fields(self):
        """Test that wrongly typed fields are invalid."""
        with self.assertRaises(ValueError):
            SelectorDecision(RETRIEVE_STATUTE, "r", "e1", 5).validate()
        with self.assertRaises(ValueError):
            SelectorDecision(RETRIEVE_STATUTE, "r", ["e1"], "q").validate()
        with self.assertRaises(ValueError):
            SelectorDecision(GENERATE_CONCLUSION, None).validate()

    def test_merge_usage(self):
        """Test that usage of two calls is summed and missing values are skipped."""
        self.assertEqual(merge_usage({"tokens": 100, "latency_s": 0.5}, {"tokens": 40, "latency_s": 0.25}),
                         {"tokens": 140, "latency_s": 0.75})
        self.assertEqual(merge_usage({"tokens": None, "latency_s": 0.5}, {"tokens": None, "latency_s": 0.5}),
                         {"tokens": None, "latency_s": 1.0})
        self.assertEqual(merge_usage(None, {"tokens": 7, "latency_s": 0.1}), {"tokens": 7, "latency_s": 0.1})
        self.assertIsNone(merge_usage(None, None))


class TestRuleSelect(unittest.TestCase):
    """Test suite for the deterministic rule policy."""

    def test_first_unresolved_first_requirement(self):
        """Test target and action for a fresh state."""
        decision = rule_select(state([element("e1"), element("e2")]))
        self.assertEqual((decision.action, decision.target_element), (RETRIEVE_STATUTE, "e1"))
        self.assertEqual(decision.query, "Label e1 missing e1")

    def test_case_requirement_after_statute(self):
        """Test that a satisfied statute requirement moves the action to case retrieval."""
        decision = rule_select(state([element("e1", satisfied=(0,)), element("e2")]))
        self.assertEqual((decision.action, decision.target_element), (RETRIEVE_CASE, "e1"))

    def test_fact_requirement_asks_for_clarification(self):
        """Test that a fact requirement maps to request_clarification."""
        decision = rule_select(state([element("e1", kinds=("fact",))])).validate()
        self.assertEqual(decision.action, REQUEST_CLARIFICATION)
        self.assertIsNone(decision.query)

    def test_advances_after_two_fruitless_rounds(self):
        """Test that two fruitless rounds on one element move to the next unresolved one."""
        elements = [element("e1"), element("e2"), element("e3")]
        one = [HistoryEntry("e1", False)]
        two = one + [HistoryEntry("e1", False)]
        self.assertEqual(rule_select(state(elements, one)).target_element, "e1")
        self.assertEqual(rule_select(state(elements, two)).target_element, "e2")

    def test_fruitful_round_resets_streak(self):
        """Test that a fruitful round keeps the target."""
        elements = [element("e1", satisfied=(0,)), element("e2")]
        history = [HistoryEntry("e1", False), HistoryEntry("e1", True)]
        self.assertEqual(rule_select(state(elements, history)).target_element, "e1")

    def test_cycles_past_resolved_elements(self):
        """Test cyclic advance wraps around and skips resolved elements."""
        elements = [element("e1"), element("e2", satisfied=(0, 1)), element("e3")]
        history = [HistoryEntry("e3", False), HistoryEntry("e3", False)]
        self.assertEqual(rule_select(state(elements, history)).target_element, "e1")

    def test_concludes_when_all_covered(self):
        """Test the conclusion once every element is fully supported."""
        decision = rule_select(state([element("e1", satisfied=(0, 1))]))
        self.assertEqual(decision.action, GENERATE_CONCLUSION)

    def test_conclusion_disallowed_keeps_retrieving(self):
        """Test the statute fallback on the first element when conclusions are forbidden."""
        decision = rule_select(state([element("e1", satisfied=(0, 1))], allow_conclusion=False))
        self.assertEqual((decision.action, decision.target_element), (RETRIEVE_STATUTE, "e1"))


class TestOracleSelect(unittest.TestCase):
    """Test suite for the oracle policy."""

    def test_targets_most_unsatisfied(self):
        """Test that the element with most unsatisfied requirements wins, ties in schema order."""
        elements = [element("e1", satisfied=(0,)), element("e2"), element("e3")]
        decision = oracle_select(state(elements), synonyms=SYNONYMS)
        self.assertEqual(decision.target_element, "e2")

    def test_expands_query_with_synonyms(self):
        """Test that the query carries the requirement keyword and its variants."""
        spec = ElementView(
            "s1", "Contribution", UNSUPPORTED, ("social insurance",), ("missing",),
            (RequirementView("statute", ("contribution base",), False),),
        )
        decision = oracle_select(state([spec]), synonyms=SYNONYMS)
        self.assertEqual(decision.query, "contribution base assessable wage base")
        self.assertEqual(decision.action, RETRIEVE_STATUTE)

    def test_concludes_at_gate(self):
        """Test that the oracle concludes once EC reaches the gate."""
        elements = [element(f"e{i}", satisfied=(0, 1)) for i in range(7)] + [element("e7"), element("e8"), element("e9")]
        self.assertEqual(oracle_select(state(elements)).action, GENERATE_CONCLUSION)
        self.assertNotEqual(oracle_select(state(elements[:6] + elements[7:])).action, GENERATE_CONCLUSION)

    def test_no_stop_fallback(self):
        """Test the statute fallback with nothing unresolved and conclusions forbidden."""
        decision = oracle_select(state([element("e1", satisfied=(0, 1))], allow_conclusion=False))
        self.assertEqual((decision.action, decision.target_element), (RETRIEVE_STATUTE, "e1"))
        self.assertIn("e1 keyword", decision.query)


class TestDecisionProperties(unittest.TestCase):
    """Randomised invariants over rule and oracle decisions."""

    def test_random_states(self):
        """Test field invariants and the oracle conclusion gate on random states."""
        rng = random.Random(7)
        for _ in range(300):
            elements = []
            for i in range(rng.randint(1, 6)):
                kinds = tuple(rng.choice(("statute", "case", "fact", "any")) for _ in range(rng.randint(1, 3)))
                satisfied = tuple(j for j in range(len(kinds)) if rng.random() < 0.5)
                elements.append(element(f"e{i}", satisfied, kinds))
            history = [HistoryEntry(rng.choice(elements).id, rng.random() < 0.3) for _ in range(rng.randint(0, 4))]
            s = state(elements, history, allow_conclusion=rng.random() < 0.8)
            unresolved_ids = {el.id for el in s.unresolved}

            for decision in (rule_select(s), oracle_select(s, synonyms=SYNONYMS)):
                decision.validate()
                self.assertIn(decision.action, ACTIONS)
                if not s.allow_conclusion:
                    self.assertNotEqual(decision.action, GENERATE_CONCLUSION)
                if decision.action in RETRIEVAL_ACTIONS and unresolved_ids:
                    self.assertIn(decision.target_element, unresolved_ids)

            if oracle_select(s).action == GENERATE_CONCLUSION:
                self.assertGreaterEqual(s.ec, ORACLE_CONCLUSION_GATE)
            if rule_select(s).action == GENERATE_CONCLUSION:
                self.assertFalse(unresolved_ids)


class _AlwaysConclude(Selector):
    name = "always"

    def __init__(self):
        self.calls = []

    def select(self, state):
        self.calls.append(state.allow_conclusion)
        self.last_usage = {"tokens": 10, "latency_s": 0.5}
        return conclusion()


class TestSelectors(unittest.TestCase):
    """Test suite for the selector classes."""

    def test_rule_and_oracle_wrappers(self):
        """Test that the selector classes delegate to the policy functions."""
        s = state([element("e1"), element("e2")])
        self.assertEqual(RuleSelector().select(s), rule_select(s))
        self.assertEqual(OracleSelector(synonyms=SYNONYMS).select(s), oracle_select(s, synonyms=SYNONYMS))

    def test_scripted_replays_then_concludes(self):
        """Test that the scripted selector replays by round and concludes when exhausted."""
        script = [SelectorDecision(RETRIEVE_CASE, "r", "e1", "q")]
        selector = ScriptedSelector(script)
        self.assertEqual(selector.select(state([element("e1")], round_index=0)), script[0])
        self.assertEqual(selector.select(state([element("e1")], round_index=1)).action, GENERATE_CONCLUSION)

    def test_hard_no_stop_retries_then_falls_back(self):
        """Test that early conclusions are replaced by a retrieval action."""
        inner = _AlwaysConclude()
        selector = HardNoStopSelector(inner, r_max=3)
        decision = selector.select(state([element("e1"), element("e2")], round_index=1))
        self.assertEqual(inner.calls, [True, False])
        self.assertEqual((decision.action, decision.target_element), (RETRIEVE_STATUTE, "e1"))
        self.assertEqual(selector.name, "always-hard-no-stop")

    def test_hard_no_stop_allows_conclusion_at_budget(self):
        """Test that the wrapper passes a conclusion through once the budget is spent."""
        selector = hard_no_stop_wrap(_AlwaysConclude(), r_max=3)
        decision = selector.select(state([element("e1")], round_index=3))
        self.assertEqual(decision.action, GENERATE_CONCLUSION)

    def test_hard_no_stop_sums_usage(self):
        """Test that usage of the refused call and the retry is added up."""
        selector = HardNoStopSelector(_AlwaysConclude(), r_max=3)
        selector.select(state([element("e1")], round_index=0))
        self.assertEqual(selector.last_usage, {"tokens": 20, "latency_s": 1.0})
        selector.select(state([element("e1")], round_index=3))
        self.assertEqual(selector.last_usage, {"tokens": 10, "latency_s": 0.5})


if __name__ == "__main__":
    unittest.main()
