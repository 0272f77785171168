"""
Simulated legal corpus and the retriever shared by every system.

Loads statutes, cases and web notes from a YAML file together with the
legal-term synonym table, and ranks documents for a query by the same
match score the aligner uses.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import yaml

from core.constants import LEGAL_TERM_FLOOR, RETRIEVAL_CAPS
from core.errors import CorpusError
from core.matching import normalize_text, overlap

logger = logging.getLogger(__name__)

DOC_KINDS = ("statute", "case", "web")


@dataclass(frozen=True)
class CorpusDoc:
    id: str
    kind: str
    title: str
    text: str
    tags: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def searchable(self):
        return f"{self.title} {self.text}"


# ---------------------------------------------------------------------------
# File loading
# ---------------------------------------------------------------------------

def _read_yaml(path):
    """Parse a YAML file, converting every failure into CorpusError."""
    if not os.path.isfile(path):
        raise CorpusError(f"file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return yaml.safe_load(f) or {}
    except (yaml.YAMLError, OSError) as e:
        raise CorpusError(f"cannot parse {path}: {e}") from e


def load_synonyms(path):
    """
    Load the legal-term synonym table.

    Args:
        path (str): Path to synonyms.yaml

    Returns:
        dict: Normalized term -> tuple of normalized variants
    """
    data = _read_yaml(path)
    terms = data.get("terms") or {}
    if not isinstance(terms, dict):
        raise CorpusError(f"{path}: 'terms' must be a mapping")
    table = {}
    for term, variants in terms.items():
        key = normalize_text(str(term))
        if not key:
            raise CorpusError(f"{path}: empty legal term")
        table[key] = tuple(normalize_text(str(v)) for v in (variants or []))
    return table


# ===========================================================================
# Corpus
# ===========================================================================

class Corpus:
    """Immutable document collection with a legal-term vocabulary.

    Documents are kept sorted by id, so ranking ties always break the same
    way regardless of file order. Concurrent reads are safe.
    """

    def __init__(self, docs: Iterable[CorpusDoc] = (), synonyms: Optional[Dict[str, Tuple[str, ...]]] = None):
        self.docs: List[CorpusDoc] = sorted(docs, key=lambda d: d.id)
        self.synonyms = dict(synonyms or {})
        self._by_id: Dict[str, CorpusDoc] = {}
        self._by_kind: Dict[str, List[CorpusDoc]] = {}
        self._normalized: Dict[str, str] = {}
        self.vocabulary: Tuple[str, ...] = ()
        self._build_indexes()

    def _build_indexes(self):
        """Pre-build id, kind and normalized-text indexes."""
        for doc in self.docs:
            if doc.id in self._by_id:
                raise CorpusError(f"duplicate document id '{doc.id}'")
            if doc.kind not in DOC_KINDS:
                raise CorpusError(f"document '{doc.id}' has unknown kind '{doc.kind}'")
            if not doc.text.strip():
                raise CorpusError(f"document '{doc.id}' has empty text")
            self._by_id[doc.id] = doc
            self._by_kind.setdefault(doc.kind, []).append(doc)
            self._normalized[doc.id] = normalize_text(doc.searchable)

        terms = set(self.synonyms)
        for variants in self.synonyms.values():
            terms.update(variants)
        self.vocabulary = tuple(sorted(t for t in terms if t))

    @classmethod
    def from_yaml(cls, corpus_path, synonyms_path=None):
        """
        Load a corpus file and, optionally, its sibling synonym table.

        Raises:
            CorpusError: On parse failure, malformed records, duplicate ids or
                a document count that disagrees with ``manifest_count``
        """
        data = _read_yaml(corpus_path)
        records = data.get("documents") or []
        docs = []
        for record in records:
            try:
                docs.append(CorpusDoc(
                    id=str(record["id"]),
                    kind=str(record["kind"]),
                    title=str(record.get("title", "")),
                    text=str(record["text"]),
                    tags=tuple(record.get("tags") or ()),
                ))
            except (KeyError, TypeError) as e:
                raise CorpusError(f"{corpus_path}: malformed document record {record!r}") from e

        expected = data.get("manifest_count")
        if expected is not None and int(expected) != len(docs):
            raise CorpusError(f"{corpus_path}: manifest_count {expected} but {len(docs)} documents")

        synonyms = load_synonyms(synonyms_path) if synonyms_path else {}
        corpus = cls(docs, synonyms)
        logger.info("Loaded %d documents and %d legal terms", len(corpus.docs), len(corpus.vocabulary))
        return corpus

    def __len__(self):
        return len(self.docs)

    def get(self, doc_id):
        return self._by_id.get(doc_id)

    # -- Scoring -------------------------------------------------------------

    def query_terms(self, query):
        """Vocabulary terms occurring verbatim in the query."""
        norm = normalize_text(query)
        return [term for term in self.vocabulary if term in norm]

    def score(self, query, doc, terms=None):
        """Match score of a document for a query: Dice overlap, floored on a term hit."""
        terms = self.query_terms(query) if terms is None else terms
        text = self._normalized[doc.id]
        value = overlap(query, text)
        if any(term in text for term in terms):
            value = max(value, LEGAL_TERM_FLOOR)
        return value

    # -- Retrieval -----------------------------------------------------------

    def retrieve_scored(self, query, kind, exclude=()):
        """
        Rank documents of one kind for a query.

        Args:
            query (str): Query text
            kind (str): statute, case or web
            exclude (iterable): Document ids already retrieved in this run

        Returns:
            list: (CorpusDoc, score) pairs, score descending then id
                  ascending, truncated to the kind's cap

        Notes:
            Ranking is by match_score over a narrowed pool: only documents
            containing at least one of the query's legal terms are
            candidates, and a query without legal terms retrieves nothing.
        """
        if kind not in DOC_KINDS:
            raise ValueError(f"unknown retrieval kind '{kind}'")
        if not query or not query.strip():
            return []
        terms = self.query_terms(query)
        if not terms:
            logger.debug("Query has no legal terms: %r", query)
            return []
        excluded = set(exclude)
        hits = []
        for doc in self._by_kind.get(kind, []):
            if doc.id in excluded:
                continue
            text = self._normalized[doc.id]
            if not any(term in text for term in terms):
                continue
            hits.append((doc, self.score(query, doc, terms)))
        hits.sort(key=lambda pair: (-pair[1], pair[0].id))
        return hits[:RETRIEVAL_CAPS[kind]]

    def retrieve(self, query, kind, exclude=()):
        """Ranked documents only; see retrieve_scored."""
        return [doc for doc, _ in self.retrieve_scored(query, kind, exclude)]


def load_corpus(path, synonyms_path=None):
    """Module-level alias of Corpus.from_yaml."""
    return Corpus.from_yaml(path, synonyms_path)
