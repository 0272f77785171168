"""
Text matching and the three control metrics.

Scores combine character-bigram Dice overlap with a legal-term floor: a
text that quotes a legal term verbatim scores at least LEGAL_TERM_FLOOR
against anything that term belongs to. Element coverage (EC), evidence
validity coverage (EVC) and marginal gain (MG) are all computed here.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Iterable, List, Mapping, Optional, Sequence

from core.constants import FULLY_SUPPORTED, LEGAL_TERM_FLOOR
from core.errors import UndefinedCoverageError

logger = logging.getLogger(__name__)

_WHITESPACE = re.compile(r"\s+")


@dataclass(frozen=True)
class CoverageSnapshot:
    ec: float
    evc: float
    round: int

    def to_dict(self):
        return {"ec": round(self.ec, 6), "evc": round(self.evc, 6), "round": self.round}


# ======================================================================
# Text helpers
# ======================================================================

def normalize_text(text):
    """Lowercase and collapse whitespace runs to single spaces."""
    if not text:
        return ""
    return _WHITESPACE.sub(" ", text.lower()).strip()


def bigrams(text):
    """Set of character bigrams of the normalized text."""
    norm = normalize_text(text)
    return {norm[i:i + 2] for i in range(len(norm) - 1)}


def expand_terms(terms: Iterable[str], synonyms: Optional[Mapping[str, Sequence[str]]] = None) -> List[str]:
    """Terms followed by their synonym variants, deduplicated, order kept."""
    synonyms = synonyms or {}
    seen, out = set(), []
    for term in terms:
        for candidate in [term, *synonyms.get(term, ())]:
            key = normalize_text(candidate)
            if key and key not in seen:
                seen.add(key)
                out.append(key)
    return out


def contains_any_term(text, terms):
    """True when any term occurs verbatim (case-insensitive) in text."""
    norm = normalize_text(text)
    return any(normalize_text(term) in norm for term in terms if term)


# ======================================================================
# Scores
# ======================================================================

def overlap(a, b):
    """
    Dice coefficient over the character-bigram sets of two texts.

    Args:
        a (str): First text
        b (str): Second text

    Returns:
        float: 2|A∩B| / (|A|+|B|), or 0.0 if either bigram set is empty
    """
    grams_a, grams_b = bigrams(a), bigrams(b)
    if not grams_a or not grams_b:
        return 0.0
    return 2 * len(grams_a & grams_b) / (len(grams_a) + len(grams_b))


def match_score(evidence, element, synonyms=None):
    """
    Score an evidence or fact node against a legal element.

    Args:
        evidence: Node with a ``text`` attribute
        element (ElementNode): Target element
        synonyms (dict): Legal term -> corpus variants

    Returns:
        float: max(overlap with the joined element keywords, the legal-term
               floor when any element or requirement term or variant occurs
               verbatim in the text)
    """
    score = overlap(evidence.text, " ".join(element.keywords))
    if contains_any_term(evidence.text, element.matching_terms(synonyms)):
        score = max(score, LEGAL_TERM_FLOOR)
    return score


# ======================================================================
# Alignment
# ======================================================================

def align_round(graph, new_ids):
    """
    Link each new evidence or fact node to every element it matches.

    Args:
        graph (ConsultationMap): Map being updated
        new_ids (list): Node ids added this round

    Returns:
        list: Links created by this call (repeated pairs are not returned)

    Notes:
        Support statuses of touched elements are recomputed. Running the
        same ids twice creates nothing new.
    """
    created = []
    touched = set()
    for node_id in new_ids:
        node = graph.node(node_id)
        for element in graph.elements.values():
            score = match_score(node, element, graph.synonyms)
            if score < graph.link_threshold:
                continue
            before = len(graph.links)
            link = graph.link_evidence(node_id, element.id, score)
            if len(graph.links) > before:
                created.append(link)
            touched.add(element.id)
    for element_id in graph.elements:
        if element_id in touched:
            graph.update_support_status(element_id)
    if created:
        logger.debug("Round %d aligned %d new links", graph.round, len(created))
    return created


# ======================================================================
# Metrics
# ======================================================================

def element_coverage(graph):
    """
    Fraction of elements whose status is fully_supported.

    Raises:
        UndefinedCoverageError: If the map has no elements
    """
    if not graph.elements:
        raise UndefinedCoverageError("element coverage is undefined for a map without elements")
    covered = sum(1 for el in graph.elements.values() if el.support_status == FULLY_SUPPORTED)
    return covered / len(graph.elements)


def evidence_validity_coverage(graph):
    """Share of evidence with at least one link; 1.0 when there is no evidence."""
    if not graph.evidence:
        return 1.0
    return len(graph.linked_evidence_ids()) / len(graph.evidence)


def marginal_gain(graph, round_evidence_ids, unresolved_before):
    """
    Mean over the round's evidence of its best score against the elements
    that were unresolved when the round started.

    Returns:
        float: 0.0 when nothing was retrieved or nothing was unresolved
    """
    if not round_evidence_ids or not unresolved_before:
        return 0.0
    best = []
    for node_id in round_evidence_ids:
        node = graph.node(node_id)
        best.append(max(match_score(node, element, graph.synonyms) for element in unresolved_before))
    return sum(best) / len(best)


def coverage_snapshot(graph):
    return CoverageSnapshot(element_coverage(graph), evidence_validity_coverage(graph), graph.round)
