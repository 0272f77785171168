"""
Synthetic pilot datasets.

Case templates (one per labor-dispute type) carry the fixed element schema,
query variants and clarification pool. Pilots are either the checked-in
canonical 50-case manifest, verified against its lockfile, or seeded
samples drawn uniformly over the templates.
"""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import yaml

from core.constants import CANONICAL_PILOT_FILE, PILOT_LOCK_FILE, TEMPLATES_FILE
from core.errors import ManifestIntegrityError, SchemaError
from core.map_graph import ElementSchema, ElementSpec, IssueSpec, RequirementSpec

logger = logging.getLogger(__name__)

# Fixed type order; round-robin sampling and reports follow it.
CASE_TYPES = (
    "wrongful_dismissal",
    "wage_arrears",
    "work_injury",
    "contract_breach",
    "non_compete",
    "overtime",
    "social_insurance",
    "year_end_bonus",
)


@dataclass(frozen=True)
class CaseTemplate:
    case_type: str
    schema: ElementSchema
    key_statutes: Tuple[str, ...]
    query_variants: Tuple[str, ...]
    clarification_pool: Tuple[str, ...]
    forums: Tuple[str, ...] = ()


@dataclass(frozen=True)
class Case:
    id: str
    case_type: str
    user_query: str
    ground_truth_elements: Tuple[str, ...]
    key_statutes: Tuple[str, ...]
    clarifications: Tuple[str, ...]

    def to_dict(self):
        return {
            "id": self.id,
            "case_type": self.case_type,
            "user_query": self.user_query,
            "clarifications": list(self.clarifications),
            "ground_truth_elements": list(self.ground_truth_elements),
            "key_statutes": list(self.key_statutes),
        }


@dataclass
class PilotManifest:
    name: str
    seed: Optional[int]
    cases: List[Case]
    composition: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.composition:
            self.composition = _composition(self.cases)

    def __len__(self):
        return len(self.cases)

    def to_dict(self):
        return {
            "name": self.name,
            "seed": self.seed,
            "composition": dict(self.composition),
            "cases": [case.to_dict() for case in self.cases],
        }

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False, allow_unicode=True, width=1000)


def _composition(cases):
    counts = {}
    for case in cases:
        counts[case.case_type] = counts.get(case.case_type, 0) + 1
    return counts


# ---------------------------------------------------------------------------
# Templates
# ---------------------------------------------------------------------------

def _schema_from_record(record):
    case_type = record["case_type"]
    issue_id = f"{case_type}-issue"
    elements = []
    for el in record["elements"]:
        elements.append(ElementSpec(
            id=el["id"],
            issue_id=issue_id,
            label=el["label"],
            keywords=tuple(el.get("keywords") or ()),
            requirements=tuple(
                RequirementSpec(req["kind"], tuple(req.get("keywords") or ()))
                for req in el.get("requirements") or ()
            ),
            missing_evidence=tuple(el.get("missing_evidence") or ()),
        ))
    issue = IssueSpec(issue_id, record["issue"], tuple(e.id for e in elements))
    schema = ElementSchema(case_type, (issue,), tuple(elements))
    schema.validate()
    return schema


def load_templates(path=TEMPLATES_FILE):
    """
    Load the case templates.

    Args:
        path (str): Path to templates.yaml

    Returns:
        dict: case_type -> CaseTemplate, in CASE_TYPES order

    Raises:
        SchemaError: If the file is unreadable, a template is malformed or
            the set of case types is not exactly CASE_TYPES
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except (yaml.YAMLError, OSError) as e:
        raise SchemaError(f"cannot read templates {path}: {e}") from e

    forums = tuple(data.get("forums") or ())
    templates = {}
    for record in data.get("templates") or []:
        try:
            schema = _schema_from_record(record)
            template = CaseTemplate(
                case_type=record["case_type"],
                schema=schema,
                key_statutes=tuple(record.get("key_statutes") or ()),
                query_variants=tuple(record.get("query_variants") or ()),
                clarification_pool=tuple(record.get("clarifications") or ()),
                forums=forums,
            )
        except (KeyError, TypeError) as e:
            raise SchemaError(f"malformed template in {path}: {e}") from e
        if not template.query_variants or not template.clarification_pool:
            raise SchemaError(f"template '{template.case_type}' needs query variants and clarifications")
        templates[template.case_type] = template

    if set(templates) != set(CASE_TYPES):
        raise SchemaError(f"templates must cover exactly {', '.join(CASE_TYPES)}")
    return {case_type: templates[case_type] for case_type in CASE_TYPES}


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def read_lockfile(path):
    """Parse ``<sha256>  <file name>`` lines into a name -> digest mapping."""
    entries = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            digest, _, name = line.partition(" ")
            entries[os.path.basename(name.strip().lstrip("*"))] = digest.strip()
    return entries


def verify_checksums(lock_path, *paths):
    """
    Compare files against the digests recorded in a lockfile.

    Raises:
        ManifestIntegrityError: If the lockfile or a file is missing, a file
            is not listed, or a digest differs
    """
    try:
        entries = read_lockfile(lock_path)
    except OSError as e:
        raise ManifestIntegrityError(f"cannot read lockfile {lock_path}: {e}") from e
    for path in paths:
        name = os.path.basename(path)
        if name not in entries:
            raise ManifestIntegrityError(f"{name} is not listed in {lock_path}")
        try:
            actual = file_sha256(path)
        except OSError as e:
            raise ManifestIntegrityError(f"cannot read {path}: {e}") from e
        if actual != entries[name]:
            raise ManifestIntegrityError(f"checksum mismatch for {name}: expected {entries[name]}, got {actual}")


def load_manifest(path, templates=None):
    """
    Load a pilot manifest and check it against the templates.

    Raises:
        ManifestIntegrityError: If the file is missing or unreadable, or a case
            breaks the case invariants
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except (yaml.YAMLError, OSError) as e:
        raise ManifestIntegrityError(f"cannot read manifest {path}: {e}") from e

    cases = []
    try:
        for record in data.get("cases") or []:
            cases.append(Case(
                id=str(record["id"]),
                case_type=record["case_type"],
                user_query=record["user_query"],
                ground_truth_elements=tuple(record.get("ground_truth_elements") or ()),
                key_statutes=tuple(record.get("key_statutes") or ()),
                clarifications=tuple(record.get("clarifications") or ()),
            ))
    except (KeyError, TypeError) as e:
        raise ManifestIntegrityError(f"malformed case in {path}: {e}") from e

    manifest = PilotManifest(
        name=data.get("name") or os.path.splitext(os.path.basename(path))[0],
        seed=data.get("seed"),
        cases=cases,
        composition=dict(data.get("composition") or {}),
    )
    _validate_manifest(manifest, templates, path)
    return manifest


def _validate_manifest(manifest, templates, source):
    if sum(manifest.composition.values()) != len(manifest.cases) or manifest.composition != _composition(manifest.cases):
        raise ManifestIntegrityError(f"{source}: composition does not match the cases")
    for case in manifest.cases:
        if not 1 <= len(case.clarifications) <= 3:
            raise ManifestIntegrityError(f"{source}: case {case.id} needs 1-3 clarifications")
        if templates is None:
            continue
        if case.case_type not in templates:
            raise ManifestIntegrityError(f"{source}: case {case.id} has unknown type {case.case_type}")
        expected = tuple(templates[case.case_type].schema.element_ids)
        if case.ground_truth_elements != expected:
            raise ManifestIntegrityError(f"{source}: case {case.id} elements differ from its template")


def write_manifest(manifest, path):
    """Write a manifest as YAML; returns the file's sha256."""
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(manifest.to_yaml())
    return file_sha256(path)


# ===========================================================================
# Operations
# ===========================================================================

def canonical_pilot(path=CANONICAL_PILOT_FILE, lock_path=PILOT_LOCK_FILE, templates=None):
    """
    Load the checked-in 50-case pilot after verifying its checksum.

    Raises:
        ManifestIntegrityError: If the manifest is missing, corrupt or differs
            from the digest in the lockfile
    """
    if not os.path.isfile(path):
        raise ManifestIntegrityError(f"canonical manifest not found: {path}")
    verify_checksums(lock_path, path)
    manifest = load_manifest(path, templates)
    logger.info("Loaded canonical pilot %s with %d cases", manifest.name, len(manifest))
    return manifest


def generate_pilot(seed, n_cases, templates):
    """
    Draw a reproducible pilot.

    Args:
        seed (int): RNG seed
        n_cases (int): Number of cases, at least 1
        templates (dict): case_type -> CaseTemplate

    Returns:
        PilotManifest: Cases sampled uniformly over the templates, each with
            a random query variant, forum and 1-3 clarification turns
    """
    if n_cases < 1:
        raise ValueError("n_cases must be at least 1")
    rng = np.random.default_rng(seed)
    types = list(templates)
    cases = []
    for index in range(n_cases):
        template = templates[types[int(rng.integers(len(types)))]]
        query = template.query_variants[int(rng.integers(len(template.query_variants)))]
        if template.forums:
            query = query.replace("{forum}", template.forums[int(rng.integers(len(template.forums)))])
        pool = template.clarification_pool
        count = int(rng.integers(1, min(3, len(pool)) + 1))
        order = rng.permutation(len(pool))[:count]
        cases.append(Case(
            id=f"seed{seed}-{index + 1:03d}",
            case_type=template.case_type,
            user_query=query,
            ground_truth_elements=tuple(template.schema.element_ids),
            key_statutes=template.key_statutes,
            clarifications=tuple(pool[int(i)] for i in order),
        ))
    return PilotManifest(f"pilot-seed-{seed}", seed, cases)


def hard_case_subset(traces, manifest):
    """
    Cases whose rule-policy run ended with EC < 1.0, sorted by (case_type, id).

    Args:
        traces (list): RunTrace objects covering every case of the manifest
        manifest (PilotManifest): Pilot the traces were produced on
    """
    final_ec = {trace.case_id: trace.final.ec for trace in traces}
    missing = [case.id for case in manifest.cases if case.id not in final_ec]
    if missing:
        raise ValueError(f"traces do not cover cases: {', '.join(missing)}")
    hard = [case for case in manifest.cases if final_ec[case.id] < 1.0]
    hard.sort(key=lambda c: (c.case_type, c.id))
    return PilotManifest(f"{manifest.name}-hard", manifest.seed, hard)


def stratified_subset(manifest, k):
    """
    Round-robin sample across case types in CASE_TYPES order, then by id.

    Taking every case returns the manifest unchanged, in manifest order.

    Args:
        manifest (PilotManifest): Source pilot
        k (int): Subset size, 1 <= k <= len(manifest)
    """
    if not 1 <= k <= len(manifest.cases):
        raise ValueError(f"k must be between 1 and {len(manifest.cases)}")
    if k == len(manifest.cases):
        return PilotManifest(f"{manifest.name}-stratified-{k}", manifest.seed, list(manifest.cases))
    queues = {}
    for case in sorted(manifest.cases, key=lambda c: c.id):
        queues.setdefault(case.case_type, []).append(case)
    order = [t for t in CASE_TYPES if t in queues] + sorted(t for t in queues if t not in CASE_TYPES)
    picked = []
    while len(picked) < k:
        for case_type in order:
            if queues[case_type] and len(picked) < k:
                picked.append(queues[case_type].pop(0))
    return PilotManifest(f"{manifest.name}-stratified-{k}", manifest.seed, picked)
