"""
Consultation map: issues, legal elements, retrieval goals, facts, evidence
and the links between them.

The map is the only mutable state of a run. Facts, evidence and links are
append-only; element support statuses are always recomputed from the
requirements' satisfied_by sets, never set by hand.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from core.constants import (
    FULLY_SUPPORTED,
    LINK_THRESHOLD,
    PARTIALLY_SUPPORTED,
    UNSUPPORTED,
)
from core.errors import RejectedLinkError, SchemaError
from core.matching import contains_any_term, expand_terms

logger = logging.getLogger(__name__)

REQUIREMENT_KINDS = ("statute", "case", "fact", "any")
SOURCE_KINDS = ("statute", "case", "web")


# ======================================================================
# Schema (fixed element initialization)
# ======================================================================

@dataclass(frozen=True)
class RequirementSpec:
    kind: str
    keywords: Tuple[str, ...]


@dataclass(frozen=True)
class ElementSpec:
    id: str
    issue_id: str
    label: str
    keywords: Tuple[str, ...]
    requirements: Tuple[RequirementSpec, ...]
    missing_evidence: Tuple[str, ...]


@dataclass(frozen=True)
class IssueSpec:
    id: str
    label: str
    element_ids: Tuple[str, ...]


@dataclass(frozen=True)
class ElementSchema:
    """Fixed legal-element schema for one case type."""
    case_type: str
    issues: Tuple[IssueSpec, ...]
    elements: Tuple[ElementSpec, ...]

    def element(self, element_id: str) -> ElementSpec:
        for spec in self.elements:
            if spec.id == element_id:
                return spec
        raise KeyError(element_id)

    @property
    def element_ids(self) -> List[str]:
        return [spec.id for spec in self.elements]

    def validate(self):
        """
        Check the schema's structural invariants.

        Raises:
            SchemaError: On an empty schema, an issue without elements,
                dangling issue/element references, empty keyword sets,
                unknown requirement kinds or a bad missing-evidence count.
        """
        if not self.issues or not self.elements:
            raise SchemaError(f"schema '{self.case_type}' has no issues or no elements")
        element_ids = [spec.id for spec in self.elements]
        if len(set(element_ids)) != len(element_ids):
            raise SchemaError(f"schema '{self.case_type}' repeats an element id")
        issue_ids = {issue.id for issue in self.issues}
        for issue in self.issues:
            if not issue.element_ids:
                raise SchemaError(f"issue '{issue.id}' lists no elements")
            for element_id in issue.element_ids:
                if element_id not in element_ids:
                    raise SchemaError(f"issue '{issue.id}' references unknown element '{element_id}'")
        for spec in self.elements:
            if spec.issue_id not in issue_ids:
                raise SchemaError(f"element '{spec.id}' references unknown issue '{spec.issue_id}'")
            if not spec.keywords:
                raise SchemaError(f"element '{spec.id}' has an empty keyword set")
            if not 1 <= len(spec.missing_evidence) <= 3:
                raise SchemaError(f"element '{spec.id}' needs 1-3 missing-evidence texts")
            for requirement in spec.requirements:
                if requirement.kind not in REQUIREMENT_KINDS:
                    raise SchemaError(f"element '{spec.id}' has unknown requirement kind '{requirement.kind}'")
                if not requirement.keywords:
                    raise SchemaError(f"element '{spec.id}' has a requirement without keywords")


# ======================================================================
# Nodes
# ======================================================================

@dataclass
class EvidenceRequirement:
    kind: str
    keywords: Tuple[str, ...]
    satisfied_by: List[str] = field(default_factory=list)

    @property
    def satisfied(self) -> bool:
        return bool(self.satisfied_by)


@dataclass
class IssueNode:
    id: str
    label: str
    element_ids: List[str]


@dataclass
class ElementNode:
    id: str
    issue_id: str
    label: str
    keywords: Tuple[str, ...]
    requirements: List[EvidenceRequirement]
    missing_evidence: Tuple[str, ...]
    support_status: str = UNSUPPORTED

    def unsatisfied_requirements(self) -> List[EvidenceRequirement]:
        return [req for req in self.requirements if not req.satisfied]

    def matching_terms(self, synonyms=None) -> List[str]:
        """Element keywords, requirement keywords and their synonym variants."""
        terms = list(self.keywords)
        for requirement in self.requirements:
            terms.extend(requirement.keywords)
        return expand_terms(terms, synonyms)


@dataclass
class RetrievalGoalNode:
    id: str
    element_id: str
    description: str
    resolved: bool = False


@dataclass
class FactNode:
    id: str
    text: str
    source_turn: int

    source_kind = "fact"


@dataclass
class EvidenceNode:
    id: str
    source_kind: str
    text: str
    retrieval_round: int = 0
    relevance_score: float = 0.0
    title: str = ""


@dataclass(frozen=True)
class Link:
    evidence_id: str
    element_id: str
    score: float


@dataclass(frozen=True)
class AuditRecord:
    """Immutable view of the map at the end of one round."""
    round: int
    statuses: Tuple[Tuple[str, str], ...]
    pending_goals: Tuple[str, ...]
    evidence_added: Tuple[str, ...]
    facts_added: Tuple[str, ...]

    @property
    def element_coverage(self) -> float:
        if not self.statuses:
            return 0.0
        covered = sum(1 for _, status in self.statuses if status == FULLY_SUPPORTED)
        return covered / len(self.statuses)

    def to_dict(self):
        return {
            "round": self.round,
            "statuses": {element_id: status for element_id, status in self.statuses},
            "pending_goals": list(self.pending_goals),
            "evidence_added": list(self.evidence_added),
            "facts_added": list(self.facts_added),
        }


# ======================================================================
# Consultation map
# ======================================================================

class ConsultationMap:
    """
    State G_t of one consultation: facts, elements, evidence and links.

    Elements iterate in schema order, everything else in insertion order.
    A map belongs to a single run and is never mutated concurrently.
    """

    def __init__(self, case_type="", user_query="", synonyms=None, link_threshold=LINK_THRESHOLD):
        self.case_type = case_type
        self.user_query = user_query
        self.synonyms = synonyms or {}
        self.link_threshold = link_threshold
        self.issues: Dict[str, IssueNode] = {}
        self.elements: Dict[str, ElementNode] = {}
        self.goals: Dict[str, RetrievalGoalNode] = {}
        self.facts: Dict[str, FactNode] = {}
        self.evidence: Dict[str, EvidenceNode] = {}
        self.links: List[Link] = []
        self.round = 0
        self.duplicates: List[Tuple[int, str]] = []
        self._link_index: Dict[Tuple[str, str], Link] = {}

    @classmethod
    def from_schema(cls, schema: ElementSchema, user_query="", synonyms=None,
                    link_threshold=LINK_THRESHOLD) -> "ConsultationMap":
        """
        Build a fresh map from a fixed element schema.

        Args:
            schema (ElementSchema): Validated element schema of the case type
            user_query (str): Initial user query, kept as context only
            synonyms (dict): Legal term -> corpus variants
            link_threshold (float): Minimum score accepted by link_evidence

        Returns:
            ConsultationMap: Map at round 0 with every element unsupported
                and one unresolved retrieval goal per element

        Raises:
            SchemaError: If the schema is malformed
        """
        schema.validate()
        graph = cls(schema.case_type, user_query, synonyms, link_threshold)
        for issue in schema.issues:
            graph.issues[issue.id] = IssueNode(issue.id, issue.label, list(issue.element_ids))
        for spec in schema.elements:
            graph.elements[spec.id] = ElementNode(
                id=spec.id,
                issue_id=spec.issue_id,
                label=spec.label,
                keywords=tuple(spec.keywords),
                requirements=[EvidenceRequirement(req.kind, tuple(req.keywords)) for req in spec.requirements],
                missing_evidence=tuple(spec.missing_evidence),
            )
            goal_id = f"goal-{spec.id}"
            graph.goals[goal_id] = RetrievalGoalNode(goal_id, spec.id, spec.missing_evidence[0])
        logger.debug("Initialized map for %s with %d elements", schema.case_type, len(graph.elements))
        return graph

    # ------------------------------------------------------------------
    # Mutation
    # ------------------------------------------------------------------

    def begin_round(self) -> int:
        """Advance the round counter and return the new round index."""
        self.round += 1
        return self.round

    def add_evidence(self, items: Sequence[EvidenceNode], round_index: int) -> List[str]:
        """
        Append retrieved items as evidence nodes.

        Args:
            items (list): EvidenceNode candidates, ids are corpus document ids
            round_index (int): Round the items were retrieved in

        Returns:
            list: Ids of the newly added nodes, in input order

        Notes:
            An id already present in the map is dropped and recorded in
            ``duplicates``; the evidence count does not change.
        """
        if round_index not in (self.round, self.round + 1):
            raise ValueError(f"evidence round {round_index} does not follow map round {self.round}")
        added = []
        for item in items:
            if item.source_kind not in SOURCE_KINDS:
                raise ValueError(f"unknown evidence kind '{item.source_kind}'")
            if item.id in self.evidence:
                self.duplicates.append((round_index, item.id))
                logger.debug("Dropped duplicate evidence %s in round %d", item.id, round_index)
                continue
            item.retrieval_round = round_index
            self.evidence[item.id] = item
            added.append(item.id)
        return added

    def add_fact(self, text: str, source_turn: Optional[int] = None) -> str:
        """Append a user fact and return its id."""
        fact_id = f"fact-{len(self.facts) + 1}"
        turn = self.round if source_turn is None else source_turn
        self.facts[fact_id] = FactNode(fact_id, text, turn)
        return fact_id

    def node(self, node_id: str):
        """Evidence or fact node by id."""
        if node_id in self.evidence:
            return self.evidence[node_id]
        return self.facts[node_id]

    def link_evidence(self, evidence_id: str, element_id: str, score: float) -> Link:
        """
        Record an evidence-to-element link and update requirement satisfaction.

        Args:
            evidence_id (str): Evidence or fact node id
            element_id (str): Target element id
            score (float): Match score of the pair

        Returns:
            Link: The new link, or the existing one for a repeated pair

        Raises:
            RejectedLinkError: If score is below the link threshold
            KeyError: If either node is missing
        """
        if score < self.link_threshold:
            raise RejectedLinkError(evidence_id, element_id, score, self.link_threshold)
        item = self.node(evidence_id)
        element = self.elements[element_id]
        key = (evidence_id, element_id)
        if key in self._link_index:
            return self._link_index[key]
        link = Link(evidence_id, element_id, round(float(score), 6))
        self.links.append(link)
        self._link_index[key] = link

        for requirement in element.requirements:
            if not _kind_compatible(requirement.kind, item.source_kind):
                continue
            terms = expand_terms(requirement.keywords, self.synonyms)
            if contains_any_term(item.text, terms) and evidence_id not in requirement.satisfied_by:
                requirement.satisfied_by.append(evidence_id)
        return link

    def update_support_status(self, element_id: str) -> str:
        """
        Recompute an element's support status from its requirements.

        Returns:
            str: fully_supported when every requirement is satisfied,
                 partially_supported when some are, unsupported otherwise

        Notes:
            The element's retrieval goal is resolved iff the status is not
            unsupported.
        """
        element = self.elements[element_id]
        satisfied = sum(1 for req in element.requirements if req.satisfied)
        if element.requirements and satisfied == len(element.requirements):
            status = FULLY_SUPPORTED
        elif satisfied:
            status = PARTIALLY_SUPPORTED
        else:
            status = UNSUPPORTED
        element.support_status = status
        self.goals[f"goal-{element_id}"].resolved = status != UNSUPPORTED
        return status

    # ------------------------------------------------------------------
    # Queries
    # ------------------------------------------------------------------

    def unresolved_elements(self) -> List[ElementNode]:
        """Elements not yet fully supported, in schema order."""
        return [el for el in self.elements.values() if el.support_status != FULLY_SUPPORTED]

    def pending_goals(self) -> List[RetrievalGoalNode]:
        return [goal for goal in self.goals.values() if not goal.resolved]

    def linked_evidence_ids(self) -> set:
        return {link.evidence_id for link in self.links if link.evidence_id in self.evidence}

    def links_for(self, element_id: str) -> List[Link]:
        return [link for link in self.links if link.element_id == element_id]

    def audit_snapshot(self) -> AuditRecord:
        """Snapshot of statuses, pending goals and this round's additions."""
        return AuditRecord(
            round=self.round,
            statuses=tuple((el.id, el.support_status) for el in self.elements.values()),
            pending_goals=tuple(goal.id for goal in self.pending_goals()),
            evidence_added=tuple(ev.id for ev in self.evidence.values() if ev.retrieval_round == self.round and self.round > 0),
            facts_added=tuple(f.id for f in self.facts.values() if f.source_turn == self.round and self.round > 0),
        )

    def check_integrity(self):
        """
        Verify referential integrity and status consistency.

        Raises:
            AssertionError: On a dangling reference or a stale status
        """
        for issue in self.issues.values():
            for element_id in issue.element_ids:
                assert element_id in self.elements, f"issue {issue.id} -> missing {element_id}"
        for link in self.links:
            assert link.element_id in self.elements, f"link to missing element {link.element_id}"
            assert link.evidence_id in self.evidence or link.evidence_id in self.facts, \
                f"link from missing node {link.evidence_id}"
            assert link.score >= self.link_threshold, f"link below threshold {link}"
        for element in self.elements.values():
            for requirement in element.requirements:
                for node_id in requirement.satisfied_by:
                    assert node_id in self.evidence or node_id in self.facts, \
                        f"requirement of {element.id} cites missing {node_id}"
            current = element.support_status
            assert current == self.update_support_status(element.id), f"stale status on {element.id}"
        for evidence in self.evidence.values():
            assert evidence.retrieval_round <= self.round, f"evidence {evidence.id} from the future"

    def to_dict(self):
        """Canonical serialized form with fixed field names."""
        return {
            "case_type": self.case_type,
            "user_query": self.user_query,
            "round": self.round,
            "issues": [
                {"id": i.id, "label": i.label, "element_ids": list(i.element_ids)}
                for i in self.issues.values()
            ],
            "elements": [
                {
                    "id": el.id,
                    "issue_id": el.issue_id,
                    "label": el.label,
                    "keywords": list(el.keywords),
                    "support_status": el.support_status,
                    "missing_evidence": list(el.missing_evidence),
                    "requirements": [
                        {"kind": r.kind, "keywords": list(r.keywords), "satisfied_by": list(r.satisfied_by)}
                        for r in el.requirements
                    ],
                }
                for el in self.elements.values()
            ],
            "retrieval_goals": [
                {"id": g.id, "element_id": g.element_id, "description": g.description, "resolved": g.resolved}
                for g in self.goals.values()
            ],
            "facts": [{"id": f.id, "text": f.text, "source_turn": f.source_turn} for f in self.facts.values()],
            "evidence": [
                {
                    "id": ev.id,
                    "source_kind": ev.source_kind,
                    "retrieval_round": ev.retrieval_round,
                    "relevance_score": round(ev.relevance_score, 6),
                    "text": ev.text,
                }
                for ev in self.evidence.values()
            ],
            "links": [
                {"evidence_id": l.evidence_id, "element_id": l.element_id, "score": l.score}
                for l in self.links
            ],
        }


def _kind_compatible(requirement_kind, source_kind):
    if requirement_kind == "any":
        return True
    return requirement_kind == source_kind


def init_from_schema(schema: ElementSchema, user_query="", synonyms=None) -> ConsultationMap:
    """Module-level alias of ConsultationMap.from_schema."""
    return ConsultationMap.from_schema(schema, user_query, synonyms)


def summarize_conclusion(graph: ConsultationMap) -> str:
    """
    Final-response stub: covered and uncovered elements with their evidence.

    Args:
        graph (ConsultationMap): Map at the end of a run

    Returns:
        str: One line per element, covered elements first
    """
    covered, uncovered = [], []
    for element in graph.elements.values():
        sources = sorted({link.evidence_id for link in graph.links_for(element.id)})
        line = f"{element.label} [{element.support_status}]: {', '.join(sources) or 'no evidence'}"
        (covered if element.support_status == FULLY_SUPPORTED else uncovered).append(line)
    lines = ["Covered elements:"] + [f"  - {line}" for line in covered or ["none"]]
    lines += ["Uncovered elements:"] + [f"  - {line}" for line in uncovered or ["none"]]
    return "\n".join(lines)
