"""
Retrieval-control loop with adaptive stopping, plus the baseline controllers.

At each round top the controller checks the stopping rule

    (EC >= theta_e and EVC >= theta_ev)
    or (MG[t-1] < delta and MG[t] < delta, t >= 2)
    or t = r_max

before asking the selector for an action. Fixed-N and no-graph baselines
retrieve on a fixed schedule and are aligned against the schema only to
report EVC.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import List, Optional

from core.constants import (
    DELTA,
    EXTRACT_FACT,
    FIXED_N,
    GENERATE_CONCLUSION,
    MAP_EXTERNAL,
    MAP_NO_GRAPH,
    MAP_NO_THRESHOLD_STOP,
    MAP_ORACLE,
    MAP_RULE,
    NO_GRAPH_ROUNDS,
    R_MAX,
    REQUEST_CLARIFICATION,
    RETRIEVAL_ACTIONS,
    RETRIEVE_CASE,
    RETRIEVE_STATUTE,
    STOP_BUDGET,
    STOP_CONCLUSION,
    STOP_LOW_GAIN,
    STOP_THRESHOLD,
    THETA_E,
    THETA_EV,
)
from core.errors import HarnessError, RunError, UsageError
from core.map_graph import ConsultationMap, EvidenceNode, summarize_conclusion
from core.matching import (
    CoverageSnapshot,
    align_round,
    coverage_snapshot,
    evidence_validity_coverage,
    marginal_gain,
)
from core.policy import (
    HardNoStopSelector,
    HistoryEntry,
    OracleSelector,
    RuleSelector,
    SelectorDecision,
    build_state,
)

logger = logging.getLogger(__name__)

SYSTEM_KINDS = (MAP_RULE, MAP_ORACLE, MAP_EXTERNAL, MAP_NO_THRESHOLD_STOP, MAP_NO_GRAPH, FIXED_N)
_SENTENCE_END = re.compile(r"(?<=[.?!])\s+")


# ======================================================================
# Configuration and trace types
# ======================================================================

@dataclass(frozen=True)
class StopConfig:
    theta_e: float = THETA_E
    theta_ev: float = THETA_EV
    delta: float = DELTA
    r_max: int = R_MAX

    def __post_init__(self):
        for name in ("theta_e", "theta_ev"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise UsageError(f"{name} must be in (0, 1], got {value}")
        if not 0 <= self.delta <= 1:
            raise UsageError(f"delta must be in [0, 1], got {self.delta}")
        if self.r_max < 1:
            raise UsageError(f"r_max must be at least 1, got {self.r_max}")


@dataclass(frozen=True)
class SystemConfig:
    name: str
    kind: str
    stop: StopConfig = field(default_factory=StopConfig)
    n: int = 0
    policy: str = "rule"  # selector behind map_no_threshold_stop
    hard_no_stop: bool = False

    def __post_init__(self):
        if self.kind not in SYSTEM_KINDS:
            raise UsageError(f"unknown system kind '{self.kind}'")
        if self.kind == FIXED_N and self.n < 1:
            raise UsageError("fixed_n systems need n >= 1")

    @property
    def selector_kind(self):
        if self.kind == MAP_ORACLE:
            return "oracle"
        if self.kind == MAP_EXTERNAL:
            return "external"
        if self.kind == MAP_NO_THRESHOLD_STOP:
            return self.policy
        return "rule"

    @property
    def uses_stop_rule(self):
        return self.kind != MAP_NO_THRESHOLD_STOP and not self.hard_no_stop


@dataclass
class RoundRecord:
    round: int
    decision: SelectorDecision
    evidence_added: int
    marginal_gain: float
    coverage: CoverageSnapshot
    tokens: Optional[int] = None
    latency_s: Optional[float] = None

    def to_dict(self):
        record = {
            "round": self.round,
            "decision": self.decision.to_dict(),
            "evidence_added": self.evidence_added,
            "marginal_gain": round(self.marginal_gain, 6),
            "coverage": self.coverage.to_dict(),
        }
        if self.tokens is not None:
            record["tokens"] = self.tokens
        if self.latency_s is not None:
            record["latency_s"] = round(self.latency_s, 3)
        return record


@dataclass
class RunTrace:
    case_id: str
    case_type: str
    system_name: str
    rounds: List[RoundRecord] = field(default_factory=list)
    stop_reason: Optional[str] = None
    final: CoverageSnapshot = CoverageSnapshot(0.0, 1.0, 0)
    evidence_total: int = 0
    snapshots: list = field(default_factory=list)
    duplicates: list = field(default_factory=list)
    conclusion: Optional[str] = None
    graph: Optional[ConsultationMap] = field(default=None, repr=False, compare=False)

    @property
    def rounds_executed(self):
        return len(self.rounds)

    @property
    def tokens_total(self):
        values = [r.tokens for r in self.rounds if r.tokens is not None]
        return sum(values) if values else None

    @property
    def latency_total(self):
        values = [r.latency_s for r in self.rounds if r.latency_s is not None]
        return sum(values) if values else None

    def to_dict(self, include_map=True):
        """Canonical field order for byte-stable trace files."""
        record = {
            "case_id": self.case_id,
            "case_type": self.case_type,
            "system": self.system_name,
            "stop_reason": self.stop_reason,
            "final": self.final.to_dict(),
            "evidence_total": self.evidence_total,
            "rounds": [r.to_dict() for r in self.rounds],
            "snapshots": [s.to_dict() for s in self.snapshots],
            "duplicates": [list(d) for d in self.duplicates],
            "conclusion": self.conclusion,
        }
        if include_map and self.graph is not None:
            record["map"] = self.graph.to_dict()
        return record


# ======================================================================
# Helpers
# ======================================================================

def _evidence_nodes(hits):
    return [
        EvidenceNode(id=doc.id, source_kind=doc.kind, text=doc.text, relevance_score=score, title=doc.title)
        for doc, score in hits
    ]


def _satisfied_count(graph, element_id):
    if element_id not in graph.elements:
        return 0
    return sum(1 for req in graph.elements[element_id].requirements if req.satisfied)


def _dialogue_sentences(case, delivered):
    texts = [case.user_query, *case.clarifications[:delivered]]
    sentences = []
    for text in texts:
        sentences.extend(s.strip() for s in _SENTENCE_END.split(text) if s.strip())
    return sentences


def default_selector(system: SystemConfig, schema, corpus):
    """Rule or oracle selector for a system; external selectors are built by the caller."""
    kind = system.selector_kind
    if kind == "oracle":
        selector = OracleSelector(schema, corpus.synonyms)
    elif kind == "rule":
        selector = RuleSelector(schema)
    else:
        raise UsageError(f"system '{system.name}' needs an external selector instance")
    if system.hard_no_stop:
        selector = HardNoStopSelector(selector, system.stop.r_max)
    return selector


# ======================================================================
# Adaptive loop
# ======================================================================

def _stop_reason(graph, gains, stop: StopConfig, use_stop_rule):
    snapshot = coverage_snapshot(graph)
    if use_stop_rule:
        if snapshot.ec >= stop.theta_e and snapshot.evc >= stop.theta_ev:
            return STOP_THRESHOLD
        if graph.round >= 2 and gains[-1] < stop.delta and gains[-2] < stop.delta:
            return STOP_LOW_GAIN
    if graph.round >= stop.r_max:
        return STOP_BUDGET
    return None


def _execute(decision, graph, case, corpus, dialogue):
    """Carry out one non-conclusion decision; returns the new evidence ids and fact ids."""
    if decision.action in RETRIEVAL_ACTIONS:
        hits = corpus.retrieve_scored(decision.query or "", RETRIEVAL_ACTIONS[decision.action],
                                      exclude=graph.evidence.keys())
        return graph.add_evidence(_evidence_nodes(hits), graph.round), []

    if decision.action == REQUEST_CLARIFICATION:
        if dialogue["delivered"] < len(case.clarifications):
            text = case.clarifications[dialogue["delivered"]]
            dialogue["delivered"] += 1
            return [], [graph.add_fact(text, graph.round)]
        return [], []

    if decision.action == EXTRACT_FACT:
        known = {fact.text for fact in graph.facts.values()}
        new = [s for s in _dialogue_sentences(case, dialogue["delivered"]) if s not in known]
        return [], [graph.add_fact(s, graph.round) for s in new]

    raise ValueError(f"cannot execute action '{decision.action}'")


def run_case(case, schema, corpus, system: SystemConfig, selector=None) -> RunTrace:
    """
    Run one case through the adaptive retrieval-control loop.

    Args:
        case (Case): Pilot case
        schema (ElementSchema): Fixed schema of the case's type
        corpus (Corpus): Shared corpus and synonym table
        system (SystemConfig): map_rule, map_oracle, map_external or
            map_no_threshold_stop system
        selector (Selector): Overrides the system's default selector

    Returns:
        RunTrace: Round records, audit snapshots, stop reason, final metrics

    Raises:
        RunError: If the selector fails or returns an invalid decision; the
            partial trace is attached
    """
    if system.kind in (MAP_NO_GRAPH, FIXED_N):
        raise UsageError(f"run_case does not run baseline system '{system.name}'")
    if selector is None:
        selector = default_selector(system, schema, corpus)
    stop = system.stop
    use_stop_rule = system.uses_stop_rule
    allow_conclusion = not system.hard_no_stop

    graph = ConsultationMap.from_schema(schema, case.user_query, corpus.synonyms)
    trace = RunTrace(case.id, case.case_type, system.name, graph=graph)
    trace.snapshots.append(graph.audit_snapshot())
    history, gains = [], []
    dialogue = {"delivered": 0}

    while True:
        reason = _stop_reason(graph, gains, stop, use_stop_rule)
        if reason:
            break

        state = build_state(graph, history, allow_conclusion)
        try:
            decision = selector.select(state).validate()
        except (HarnessError, ValueError) as e:
            _finish(trace, graph, None)
            raise RunError(f"case {case.id}, round {graph.round + 1}: {e}", trace) from e

        if decision.action == GENERATE_CONCLUSION:
            reason = STOP_CONCLUSION
            trace.conclusion = summarize_conclusion(graph)
            break

        unresolved_before = graph.unresolved_elements()
        target = decision.target_element
        satisfied_before = _satisfied_count(graph, target)
        round_index = graph.begin_round()

        evidence_ids, fact_ids = _execute(decision, graph, case, corpus, dialogue)
        align_round(graph, evidence_ids + fact_ids)
        gain = marginal_gain(graph, evidence_ids, unresolved_before)
        gains.append(gain)
        history.append(HistoryEntry(target, _satisfied_count(graph, target) > satisfied_before))

        usage = selector.last_usage or {}
        trace.rounds.append(RoundRecord(
            round=round_index,
            decision=decision,
            evidence_added=len(evidence_ids),
            marginal_gain=gain,
            coverage=coverage_snapshot(graph),
            tokens=usage.get("tokens"),
            latency_s=usage.get("latency_s"),
        ))
        trace.snapshots.append(graph.audit_snapshot())
        logger.debug("%s %s round %d: %s -> %d evidence, MG %.3f, EC %.3f",
                     system.name, case.id, round_index, decision.action, len(evidence_ids),
                     gain, trace.rounds[-1].coverage.ec)

    _finish(trace, graph, reason)
    logger.debug("%s %s stopped: %s after %d rounds", system.name, case.id, reason, graph.round)
    return trace


def _finish(trace, graph, reason):
    trace.stop_reason = reason
    trace.final = coverage_snapshot(graph)
    trace.evidence_total = len(graph.evidence)
    trace.duplicates = list(graph.duplicates)


def run_no_threshold_stop(case, schema, corpus, policy="rule", r_max=R_MAX, selector=None) -> RunTrace:
    """run_case with the threshold and low-gain disjuncts disabled."""
    system = SystemConfig("no-threshold-stop", MAP_NO_THRESHOLD_STOP, StopConfig(r_max=r_max), policy=policy)
    return run_case(case, schema, corpus, system, selector)


# ======================================================================
# Baselines
# ======================================================================

def _run_schedule(case, schema, corpus, name, schedule, query, target):
    """
    Retrieve on a fixed schedule; support status is never maintained.

    EC is reported as 0.0. EVC comes from a separate map that aligns the
    same evidence against the schema after each round.
    """
    graph = ConsultationMap.from_schema(schema, case.user_query, corpus.synonyms)
    posthoc = ConsultationMap.from_schema(schema, case.user_query, corpus.synonyms)
    trace = RunTrace(case.id, case.case_type, name, graph=graph)
    trace.snapshots.append(graph.audit_snapshot())

    for action in schedule:
        round_index = graph.begin_round()
        posthoc.begin_round()
        hits = corpus.retrieve_scored(query, RETRIEVAL_ACTIONS[action], exclude=graph.evidence.keys())
        added = graph.add_evidence(_evidence_nodes(hits), round_index)
        align_round(posthoc, posthoc.add_evidence(_evidence_nodes(hits), round_index))
        snapshot = CoverageSnapshot(0.0, evidence_validity_coverage(posthoc), round_index)
        trace.rounds.append(RoundRecord(
            round=round_index,
            decision=SelectorDecision(action, "fixed schedule", target, query),
            evidence_added=len(added),
            marginal_gain=0.0,
            coverage=snapshot,
        ))
        trace.snapshots.append(graph.audit_snapshot())

    trace.stop_reason = STOP_BUDGET
    trace.final = CoverageSnapshot(0.0, evidence_validity_coverage(posthoc), graph.round)
    trace.evidence_total = len(graph.evidence)
    trace.duplicates = list(graph.duplicates)
    return trace


def run_fixed_n(case, schema, corpus, n, name=None) -> RunTrace:
    """
    Fixed-N baseline: n rounds alternating statute and case retrieval.

    The query is the concatenation of the schema's element labels.
    """
    if n < 1:
        raise UsageError("n must be at least 1")
    schedule = [RETRIEVE_STATUTE if i % 2 == 0 else RETRIEVE_CASE for i in range(n)]
    query = " ".join(spec.label for spec in schema.elements)
    return _run_schedule(case, schema, corpus, name or f"fixed-{n}", schedule, query, schema.issues[0].id)


def run_no_graph(case, corpus, schema, name="no-graph") -> RunTrace:
    """No-graph ablation: three case-retrieval rounds queried with the user's own words."""
    schedule = [RETRIEVE_CASE] * NO_GRAPH_ROUNDS
    return _run_schedule(case, schema, corpus, name, schedule, case.user_query, schema.issues[0].id)


def run_system(case, schema, corpus, system: SystemConfig, selector=None) -> RunTrace:
    """Dispatch a case to the controller matching the system kind."""
    if system.kind == FIXED_N:
        return run_fixed_n(case, schema, corpus, system.n, system.name)
    if system.kind == MAP_NO_GRAPH:
        return run_no_graph(case, corpus, schema, system.name)
    return run_case(case, schema, corpus, system, selector)


# ======================================================================
# System catalogue
# ======================================================================

def system_from_name(name, stop=None, hard_no_stop=False):
    """
    Build a SystemConfig from a short name.

    Names: rule, oracle, external, no-threshold-stop, no-graph, fixed-<n>.

    Raises:
        UsageError: On an unknown name
    """
    stop = stop or StopConfig()
    key = name.strip().lower()
    if key == "rule":
        return SystemConfig("rule", MAP_RULE, stop, hard_no_stop=hard_no_stop)
    if key == "oracle":
        return SystemConfig("oracle", MAP_ORACLE, stop, hard_no_stop=hard_no_stop)
    if key == "external":
        return SystemConfig("external", MAP_EXTERNAL, stop, hard_no_stop=hard_no_stop)
    if key == "no-threshold-stop":
        return SystemConfig("no-threshold-stop", MAP_NO_THRESHOLD_STOP, stop)
    if key == "no-graph":
        return SystemConfig("no-graph", MAP_NO_GRAPH, stop)
    match = re.fullmatch(r"fixed-(\d+)", key)
    if match:
        return SystemConfig(key, FIXED_N, stop, n=int(match.group(1)))
    raise UsageError(f"unknown system '{name}'")


STANDARD_SYSTEMS = ("rule", "oracle", "no-threshold-stop", "no-graph", "fixed-3", "fixed-5", "fixed-7")
