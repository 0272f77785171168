"""
Unit tests for core.controller module.

Run with: python -m unittest tests.test_controller
"""

import unittest

from core.constants import (
    CANONICAL_PILOT_FILE,
    CORPUS_FILE,
    GENERATE_CONCLUSION,
    MAP_NO_GRAPH,
    STOP_BUDGET,
    STOP_LOW_GAIN,
    STOP_THRESHOLD,
    SYNONYMS_FILE,
    TEMPLATES_FILE,
)
from core.controller import (
    StopConfig,
    SystemConfig,
    run_case,
    run_fixed_n,
    run_no_graph,
    run_no_threshold_stop,
    run_system,
    system_from_name,
)
from core.corpus import load_corpus
from core.dataset import load_manifest, load_templates
from core.errors import RunError, UsageError
from core.policy import ScriptedSelector, SelectorDecision
from core.trace_io import trace_line


class ControllerTestCase(unittest.TestCase):
    """Shared fixtures: shipped corpus, templates and canonical pilot."""

    @classmethod
    def setUpClass(cls):
        cls.corpus = load_corpus(CORPUS_FILE, SYNONYMS_FILE)
        cls.templates = load_templates(TEMPLATES_FILE)
        cls.manifest = load_manifest(CANONICAL_PILOT_FILE, cls.templates)

    def first_case(self, case_type):
        case = next(c for c in self.manifest.cases if c.case_type == case_type)
        return case, self.templates[case_type].schema

    def assert_run_properties(self, trace, stop=None):
        """Append-only evidence, monotone EC and EVC, consistent stop reason and final metrics."""
        stop = stop or StopConfig()
        trace.graph.check_integrity()
        evidence_counts = [len(s.evidence_added) for s in trace.snapshots]
        self.assertEqual(sum(evidence_counts), trace.evidence_total)
        ecs = [r.coverage.ec for r in trace.rounds]
        self.assertEqual(ecs, sorted(ecs))
        evcs = [r.coverage.evc for r in trace.rounds]
        self.assertEqual(evcs, sorted(evcs))
        # snapshot i is taken at the end of round i
        self.assertEqual(len(trace.snapshots), len(trace.rounds) + 1)
        for snapshot, record in zip(trace.snapshots[1:], trace.rounds):
            self.assertEqual(snapshot.element_coverage, record.coverage.ec)
        if trace.rounds:
            self.assertEqual(trace.final, trace.rounds[-1].coverage)
        self.assertEqual(trace.rounds_executed, trace.graph.round)

        if trace.stop_reason == STOP_THRESHOLD:
            self.assertGreaterEqual(trace.final.ec, stop.theta_e)
            self.assertGreaterEqual(trace.final.evc, stop.theta_ev)
        elif trace.stop_reason == STOP_LOW_GAIN:
            self.assertTrue(all(r.marginal_gain < stop.delta for r in trace.rounds[-2:]))
            self.assertGreaterEqual(len(trace.rounds), 2)
        elif trace.stop_reason == STOP_BUDGET:
            self.assertEqual(trace.rounds_executed, stop.r_max)


class TestRuleRuns(ControllerTestCase):
    """Test suite for the rule-policy control loop."""

    def test_routine_case_covered_in_four_rounds(self):
        """Test a routine case: all elements covered after four rounds, threshold stop."""
        case, schema = self.first_case("contract_breach")
        trace = run_case(case, schema, self.corpus, system_from_name("rule"))
        self.assert_run_properties(trace)
        self.assertEqual(trace.stop_reason, "threshold")
        self.assertEqual((trace.final.ec, trace.final.evc), (1.0, 1.0))
        self.assertEqual((trace.rounds_executed, trace.evidence_total), (4, 9))
        self.assertIsNone(trace.conclusion)

    def test_hard_case_exhausts_budget(self):
        """Test a social-insurance case: no element covered, budget stop, all evidence linked."""
        case, schema = self.first_case("social_insurance")
        trace = run_case(case, schema, self.corpus, system_from_name("rule"))
        self.assert_run_properties(trace)
        self.assertEqual(trace.stop_reason, "budget")
        self.assertEqual((trace.final.ec, trace.final.evc), (0.0, 1.0))
        self.assertEqual((trace.rounds_executed, trace.evidence_total), (7, 21))

    def test_no_threshold_stop_matches_rule(self):
        """Test that disabling the threshold stop changes only the stop reason."""
        case, schema = self.first_case("work_injury")
        rule = run_case(case, schema, self.corpus, system_from_name("rule"))
        free = run_no_threshold_stop(case, schema, self.corpus)
        self.assertEqual([r.to_dict() for r in rule.rounds], [r.to_dict() for r in free.rounds])
        self.assertEqual(rule.final, free.final)
        self.assertEqual(free.stop_reason, "conclusion_action")
        self.assertIn("Covered elements:", free.conclusion)

    def test_no_threshold_stop_outlasts_eager_threshold(self):
        """Test that disabling the stop rule runs past a threshold that fires early."""
        case, schema = self.first_case("wage_arrears")
        eager_stop = StopConfig(theta_e=0.5)
        eager = run_case(case, schema, self.corpus, system_from_name("rule", eager_stop))
        free = run_no_threshold_stop(case, schema, self.corpus)
        self.assert_run_properties(eager, eager_stop)
        self.assertEqual(eager.stop_reason, "threshold")
        self.assertEqual(free.stop_reason, "conclusion_action")
        self.assertLess(eager.rounds_executed, free.rounds_executed)
        self.assertEqual(free.rounds_executed, 4)
        self.assertEqual([r.to_dict() for r in eager.rounds],
                         [r.to_dict() for r in free.rounds[:eager.rounds_executed]])

    def test_live_delta_stops_early(self):
        """Test that a large delta triggers the low-gain stop after two rounds."""
        case, schema = self.first_case("wage_arrears")
        stop = StopConfig(delta=0.99)
        trace = run_case(case, schema, self.corpus, system_from_name("rule", stop))
        self.assert_run_properties(trace, stop)
        self.assertEqual(trace.stop_reason, "low_gain")
        self.assertEqual(trace.rounds_executed, 2)
        self.assertTrue(all(r.marginal_gain < 0.99 for r in trace.rounds[-2:]))

    def test_budget_of_one(self):
        """Test that r_max = 1 allows exactly one round."""
        case, schema = self.first_case("contract_breach")
        trace = run_case(case, schema, self.corpus, system_from_name("rule", StopConfig(r_max=1)))
        self.assertEqual((trace.rounds_executed, trace.stop_reason, trace.evidence_total), (1, "budget", 3))

    def test_byte_identical_reruns(self):
        """Test that repeated deterministic runs serialize identically."""
        case, schema = self.first_case("year_end_bonus")
        first = trace_line(run_case(case, schema, self.corpus, system_from_name("rule")))
        second = trace_line(run_case(case, schema, self.corpus, system_from_name("rule")))
        self.assertEqual(first, second)


class TestOracleRuns(ControllerTestCase):
    """Test suite for the oracle policy and the hard-no-stop wrapper."""

    def test_wage_case_three_rounds(self):
        """Test that the oracle covers a wage-arrears case in three rounds."""
        case, schema = self.first_case("wage_arrears")
        trace = run_case(case, schema, self.corpus, system_from_name("oracle"))
        self.assert_run_properties(trace)
        self.assertEqual(trace.final.ec, 1.0)
        self.assertEqual((trace.rounds_executed, trace.evidence_total), (3, 6))

    def test_hard_case_covered_in_two_rounds(self):
        """Test that synonym expansion covers a non-compete case at budget 2."""
        case, schema = self.first_case("non_compete")
        trace = run_case(case, schema, self.corpus, system_from_name("oracle"))
        self.assertEqual(trace.final.ec, 1.0)
        self.assertEqual(trace.rounds_executed, 2)

    def test_hard_no_stop_consumes_budget(self):
        """Test that hard-no-stop runs every round and retrieves three statutes each."""
        case, schema = self.first_case("social_insurance")
        system = system_from_name("oracle", StopConfig(r_max=5), hard_no_stop=True)
        trace = run_case(case, schema, self.corpus, system)
        self.assert_run_properties(trace, system.stop)
        self.assertEqual((trace.rounds_executed, trace.evidence_total), (5, 15))
        self.assertEqual(trace.stop_reason, "budget")
        self.assertNotIn(GENERATE_CONCLUSION, [r.decision.action for r in trace.rounds])

    def test_rule_hard_no_stop_on_routine_case(self):
        """Test that the wrapped rule policy keeps retrieving after full coverage until the budget."""
        case, schema = self.first_case("contract_breach")
        plain = run_case(case, schema, self.corpus, system_from_name("rule"))
        forced = run_case(case, schema, self.corpus, system_from_name("rule", hard_no_stop=True))
        self.assertEqual((plain.rounds_executed, forced.rounds_executed), (4, 7))
        self.assertEqual(forced.stop_reason, "budget")
        self.assertEqual(forced.final.ec, 1.0)
        self.assertGreaterEqual(forced.evidence_total, plain.evidence_total)
        self.assertNotIn(GENERATE_CONCLUSION, [r.decision.action for r in forced.rounds])
        self.assertEqual([r.decision for r in plain.rounds], [r.decision for r in forced.rounds[:4]])


class TestScriptedRuns(ControllerTestCase):
    """Test suite for fact actions through a scripted selector."""

    def test_clarification_and_fact_extraction(self):
        """Test that fact actions consume rounds, add facts and yield zero gain."""
        case, schema = self.first_case("contract_breach")
        script = [
            SelectorDecision("request_clarification", "ask", schema.element_ids[0]),
            SelectorDecision("extract_fact", "read", schema.element_ids[0]),
        ]
        trace = run_case(case, schema, self.corpus, system_from_name("rule"), ScriptedSelector(script))
        self.assertEqual(trace.rounds_executed, 2)
        self.assertEqual([r.marginal_gain for r in trace.rounds], [0.0, 0.0])
        facts = [f.text for f in trace.graph.facts.values()]
        self.assertEqual(facts[0], case.clarifications[0])
        self.assertGreater(len(facts), 1)
        self.assertEqual(trace.evidence_total, 0)
        # two zero-gain rounds trip the low-gain stop before the script runs out
        self.assertEqual(trace.stop_reason, "low_gain")

    def test_wrongly_typed_decision_aborts_run(self):
        """Test that a decision with a list-valued target raises RunError with the partial trace."""
        case, schema = self.first_case("wage_arrears")
        script = [
            SelectorDecision("retrieve_statute", "r", schema.element_ids[0], "unpaid wages"),
            SelectorDecision("retrieve_statute", "r", [schema.element_ids[0]], "unpaid wages"),
        ]
        with self.assertRaises(RunError) as ctx:
            run_case(case, schema, self.corpus, system_from_name("rule"), ScriptedSelector(script))
        self.assertEqual(ctx.exception.trace.rounds_executed, 1)


class TestBaselines(ControllerTestCase):
    """Test suite for the fixed-N and no-graph baselines."""

    def test_fixed_n_alternates(self):
        """Test Fixed-3: statute, case, statute; EC reported as zero."""
        case, schema = self.first_case("wage_arrears")
        trace = run_fixed_n(case, schema, self.corpus, 3)
        self.assertEqual([r.decision.action for r in trace.rounds],
                         ["retrieve_statute", "retrieve_case", "retrieve_statute"])
        self.assertEqual(trace.evidence_total, 8)
        self.assertEqual((trace.final.ec, trace.final.evc), (0.0, 1.0))
        self.assertEqual(trace.stop_reason, "budget")
        self.assertTrue(all(el.support_status == "unsupported" for el in trace.graph.elements.values()))

    def test_no_graph_three_case_rounds(self):
        """Test the no-graph ablation: three case rounds queried with the user's words."""
        case, schema = self.first_case("work_injury")
        trace = run_no_graph(case, self.corpus, schema)
        self.assertEqual(trace.rounds_executed, 3)
        self.assertEqual(trace.evidence_total, 6)
        self.assertEqual(trace.final.ec, 0.0)
        self.assertTrue(all(r.decision.query == case.user_query for r in trace.rounds))

    def test_run_system_dispatch(self):
        """Test dispatch by system kind."""
        case, schema = self.first_case("wage_arrears")
        trace = run_system(case, schema, self.corpus, system_from_name("fixed-5"))
        self.assertEqual((trace.system_name, trace.rounds_executed, trace.evidence_total), ("fixed-5", 5, 13))

    def test_baselines_rejected_by_run_case(self):
        """Test that run_case refuses baseline systems."""
        case, schema = self.first_case("wage_arrears")
        with self.assertRaises(UsageError):
            run_case(case, schema, self.corpus, SystemConfig("no-graph", MAP_NO_GRAPH))


class TestSystemConfig(unittest.TestCase):
    """Test suite for system and stop configuration."""

    def test_system_names(self):
        """Test the short system names."""
        self.assertEqual(system_from_name("fixed-7").n, 7)
        self.assertEqual(system_from_name("Oracle").selector_kind, "oracle")
        self.assertFalse(system_from_name("no-threshold-stop").uses_stop_rule)
        with self.assertRaises(UsageError):
            system_from_name("bm25")

    def test_invalid_stop_config(self):
        """Test range checks on the stopping parameters."""
        with self.assertRaises(UsageError):
            StopConfig(theta_e=0.0)
        with self.assertRaises(UsageError):
            StopConfig(r_max=0)
        with self.assertRaises(UsageError):
            SystemConfig("fixed-0", "fixed_n", n=0)


if __name__ == "__main__":
    unittest.main()
