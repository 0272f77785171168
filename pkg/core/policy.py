"""
Action selection.

Selectors see a serialized view of the consultation map (SelectorState) and
return one SelectorDecision per round. The rule selector reproduces the
deterministic label-plus-missing-evidence policy; the oracle selector is a
deterministic stand-in for a competent model-backed selector that targets
the neediest element and rewrites queries through the synonym table.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

from core.constants import (
    ACTIONS,
    FRUITLESS_ATTEMPTS,
    FULLY_SUPPORTED,
    GENERATE_CONCLUSION,
    ORACLE_CONCLUSION_GATE,
    REQUIREMENT_ACTIONS,
    RETRIEVAL_ACTIONS,
    RETRIEVE_STATUTE,
)
from core.matching import coverage_snapshot, expand_terms

logger = logging.getLogger(__name__)

SUMMARY_CHARS = 160


# ======================================================================
# Decisions and state
# ======================================================================

@dataclass(frozen=True)
class SelectorDecision:
    action: str
    reasoning: str = ""
    target_element: Optional[str] = None
    query: Optional[str] = None

    def validate(self):
        """
        Check the field invariants of a decision.

        Raises:
            ValueError: On non-string fields, an unknown action, a retrieval
                action without query or target, or a conclusion that carries
                either
        """
        for name in ("action", "reasoning", "target_element", "query"):
            value = getattr(self, name)
            if not isinstance(value, str) and not (value is None and name in ("target_element", "query")):
                raise ValueError(f"{name} must be a string, got {type(value).__name__}")
        if self.action not in ACTIONS:
            raise ValueError(f"unknown action '{self.action}'")
        if self.action in RETRIEVAL_ACTIONS:
            if not self.query or not self.query.strip():
                raise ValueError(f"{self.action} requires a non-empty query")
            if not self.target_element:
                raise ValueError(f"{self.action} requires a target element")
        if self.action == GENERATE_CONCLUSION and (self.target_element or self.query):
            raise ValueError("generate_conclusion carries neither target nor query")
        return self

    def to_dict(self):
        return {
            "action": self.action,
            "reasoning": self.reasoning,
            "target_element": self.target_element,
            "query": self.query,
        }


def conclusion(reasoning="all elements covered"):
    return SelectorDecision(GENERATE_CONCLUSION, reasoning)


@dataclass(frozen=True)
class RequirementView:
    kind: str
    keywords: Tuple[str, ...]
    satisfied: bool


@dataclass(frozen=True)
class ElementView:
    id: str
    label: str
    status: str
    keywords: Tuple[str, ...]
    missing_evidence: Tuple[str, ...]
    requirements: Tuple[RequirementView, ...]

    @property
    def unsatisfied(self) -> List[RequirementView]:
        return [req for req in self.requirements if not req.satisfied]


@dataclass(frozen=True)
class EvidenceView:
    id: str
    kind: str
    summary: str
    score: float


@dataclass(frozen=True)
class HistoryEntry:
    """One completed round: which element was targeted and whether it gained support."""
    target: Optional[str]
    fruitful: bool


@dataclass(frozen=True)
class SelectorState:
    user_query: str
    round: int
    ec: float
    evc: float
    issues: Tuple[Tuple[str, str], ...]
    elements: Tuple[ElementView, ...]
    evidence: Tuple[EvidenceView, ...] = ()
    goals: Tuple[str, ...] = ()
    history: Tuple[HistoryEntry, ...] = ()
    allow_conclusion: bool = True

    @property
    def unresolved(self) -> List[ElementView]:
        return [el for el in self.elements if el.status != FULLY_SUPPORTED]

    def to_payload(self):
        """Wire-protocol request body (fixed field order)."""
        return {
            "user_query": self.user_query,
            "round": self.round,
            "ec": round(self.ec, 6),
            "evc": round(self.evc, 6),
            "issues": [{"id": issue_id, "label": label} for issue_id, label in self.issues],
            "elements": [
                {
                    "id": el.id,
                    "label": el.label,
                    "status": el.status,
                    "missing_evidence": list(el.missing_evidence),
                }
                for el in self.elements
            ],
            "evidence": [
                {"id": ev.id, "kind": ev.kind, "summary": ev.summary, "score": round(ev.score, 6)}
                for ev in self.evidence
            ],
            "goals": list(self.goals),
        }

    def serialize(self):
        return json.dumps(self.to_payload(), sort_keys=False, ensure_ascii=False)


def build_state(graph, history=(), allow_conclusion=True) -> SelectorState:
    """
    Serialize a consultation map into the view selectors act on.

    Args:
        graph (ConsultationMap): Current map
        history (sequence): HistoryEntry per completed round
        allow_conclusion (bool): False when generate_conclusion is forbidden
    """
    snapshot = coverage_snapshot(graph)
    elements = tuple(
        ElementView(
            id=el.id,
            label=el.label,
            status=el.support_status,
            keywords=tuple(el.keywords),
            missing_evidence=tuple(el.missing_evidence),
            requirements=tuple(RequirementView(r.kind, tuple(r.keywords), r.satisfied) for r in el.requirements),
        )
        for el in graph.elements.values()
    )
    evidence = tuple(
        EvidenceView(ev.id, ev.source_kind, ev.text[:SUMMARY_CHARS], ev.relevance_score)
        for ev in graph.evidence.values()
    )
    return SelectorState(
        user_query=graph.user_query,
        round=graph.round,
        ec=snapshot.ec,
        evc=snapshot.evc,
        issues=tuple((issue.id, issue.label) for issue in graph.issues.values()),
        elements=elements,
        evidence=evidence,
        goals=tuple(goal.id for goal in graph.pending_goals()),
        history=tuple(history),
        allow_conclusion=allow_conclusion,
    )


# ======================================================================
# Selectors
# ======================================================================

class Selector:
    """Base selector. Subclasses implement select(); selectors keep no run state."""

    name = "selector"
    last_usage = None

    def select(self, state: SelectorState) -> SelectorDecision:
        raise NotImplementedError


def _label_query(element: ElementView):
    return f"{element.label} {element.missing_evidence[0]}"


def _action_for(requirement: Optional[RequirementView]):
    if requirement is None:
        return RETRIEVE_STATUTE
    return REQUIREMENT_ACTIONS[requirement.kind]


def _decision(action, element: ElementView, query, reasoning):
    if action in RETRIEVAL_ACTIONS:
        return SelectorDecision(action, reasoning, element.id, query)
    return SelectorDecision(action, reasoning, element.id, None)


def _rule_target(state: SelectorState, unresolved: Sequence[ElementView]) -> ElementView:
    by_id = {el.id: el for el in unresolved}
    if not state.history or state.history[-1].target not in by_id:
        return unresolved[0]
    last = state.history[-1].target
    streak = 0
    for entry in reversed(state.history):
        if entry.target != last or entry.fruitful:
            break
        streak += 1
    if streak < FRUITLESS_ATTEMPTS:
        return by_id[last]

    order = [el.id for el in state.elements]
    start = order.index(last)
    for offset in range(1, len(order) + 1):
        candidate = order[(start + offset) % len(order)]
        if candidate in by_id:
            return by_id[candidate]
    return unresolved[0]


def rule_select(state: SelectorState, schema=None) -> SelectorDecision:
    """
    Deterministic rule policy.

    Targets the first unresolved element in schema order and acts on its
    first unsatisfied requirement, querying with the element label plus its
    first missing-evidence text. After FRUITLESS_ATTEMPTS consecutive rounds
    on one element without new support it moves to the next unresolved
    element, cycling. A round counts as fruitless when the target gained no
    newly satisfied requirement, even if new evidence linked to it.

    Args:
        state (SelectorState): Current state
        schema (ElementSchema): Unused beyond the state's element view; kept
            for a uniform selector signature

    Returns:
        SelectorDecision: generate_conclusion once nothing is unresolved
    """
    unresolved = state.unresolved
    if not unresolved:
        if state.allow_conclusion:
            return conclusion()
        target = state.elements[0]
        return _decision(RETRIEVE_STATUTE, target, _label_query(target), "conclusion disallowed; keep retrieving")

    target = _rule_target(state, unresolved)
    pending = target.unsatisfied
    requirement = pending[0] if pending else None
    action = _action_for(requirement)
    reason = f"first unsatisfied {requirement.kind if requirement else 'statute'} requirement of {target.id}"
    return _decision(action, target, _label_query(target), reason)


def oracle_select(state: SelectorState, schema=None, synonyms=None) -> SelectorDecision:
    """
    Deterministic stand-in for model-backed selection.

    Picks the unresolved element with the most unsatisfied requirements
    (ties in schema order) and queries with its first unsatisfied
    requirement's keywords expanded through the synonym table. Concludes
    only once EC reaches ORACLE_CONCLUSION_GATE.
    """
    unresolved = state.unresolved
    if state.allow_conclusion and (not unresolved or state.ec >= ORACLE_CONCLUSION_GATE):
        return conclusion(f"element coverage {state.ec:.3f} is sufficient")

    if not unresolved:
        target = state.elements[0]
        terms = list(target.keywords)
        for requirement in target.requirements:
            terms.extend(requirement.keywords)
        query = " ".join(expand_terms(terms, synonyms))
        return _decision(RETRIEVE_STATUTE, target, query, "conclusion disallowed; broaden on the first element")

    target = max(unresolved, key=lambda el: (len(el.unsatisfied), -unresolved.index(el)))
    requirement = target.unsatisfied[0] if target.unsatisfied else None
    if requirement is None:
        terms = list(target.keywords)
    else:
        terms = list(requirement.keywords)
    query = " ".join(expand_terms(terms, synonyms))
    action = _action_for(requirement)
    reason = f"{target.id} has {len(target.unsatisfied)} unsatisfied requirement(s)"
    return _decision(action, target, query, reason)


class RuleSelector(Selector):
    name = "rule"

    def __init__(self, schema=None):
        self.schema = schema

    def select(self, state):
        return rule_select(state, self.schema)


class OracleSelector(Selector):
    name = "oracle"

    def __init__(self, schema=None, synonyms=None):
        self.schema = schema
        self.synonyms = synonyms or {}

    def select(self, state):
        return oracle_select(state, self.schema, self.synonyms)


class ScriptedSelector(Selector):
    """Replays a fixed decision list, one per round; concludes when it runs out."""

    name = "scripted"

    def __init__(self, decisions: Sequence[SelectorDecision]):
        self.decisions = list(decisions)

    def select(self, state):
        if state.round < len(self.decisions):
            return self.decisions[state.round]
        return conclusion("script exhausted")


class HardNoStopSelector(Selector):
    """
    Forbids generate_conclusion before the round budget is exhausted.

    When the inner selector concludes early, it is asked again with
    conclusions disallowed; if it still concludes, the highest-priority
    retrieval action of the rule policy is used.
    """

    def __init__(self, inner: Selector, r_max: int):
        self.inner = inner
        self.r_max = r_max
        self.name = f"{inner.name}-hard-no-stop"
        self._local = threading.local()

    @property
    def last_usage(self):
        return getattr(self._local, "usage", None)

    def select(self, state):
        decision = self.inner.select(state)
        self._local.usage = self.inner.last_usage
        if decision.action != GENERATE_CONCLUSION or state.round >= self.r_max:
            return decision
        retry = self.inner.select(replace(state, allow_conclusion=False))
        self._local.usage = merge_usage(self._local.usage, self.inner.last_usage)
        if retry.action != GENERATE_CONCLUSION:
            return retry
        logger.debug("Inner selector insisted on concluding at round %d; using rule fallback", state.round)
        return rule_select(replace(state, allow_conclusion=False))


def hard_no_stop_wrap(inner: Selector, r_max: int) -> Selector:
    return HardNoStopSelector(inner, r_max)


def merge_usage(first, second):
    """Sum token counts and latencies of two selector calls; None when neither reported usage."""
    if not first or not second:
        return first or second
    merged = {}
    for key in ("tokens", "latency_s"):
        values = [u.get(key) for u in (first, second) if u.get(key) is not None]
        merged[key] = sum(values) if values else None
    return merged
