# Backend/WaveformEngine/cwkg_store.py

"""
Typed triplet store for the communication-waveform knowledge graph.

The graph is the union of three subgraphs:

    WKG   (waveform, parameter relation, value)
    EKG   (environment, parameter relation, value)
    EWBG  (environment, "feasible", waveform)

Relations of the first two are declared up front in a schema; each relation
owns a fixed row in the per-side feature matrix so every waveform (or every
environment) yields the same number of feature rows.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

from .errors import (
    DuplicateTriple,
    EmptyEwbg,
    InvalidValue,
    IoFailure,
    ParseError,
    SchemaViolation,
    SubgraphMismatch,
    UnknownEntity,
    UnknownRelation,
    WavePilotError,
)
from .seeding import seeded_rng


logger = logging.getLogger("wavepilot.cwkg")

FEASIBLE = "feasible"
FORMAT_HEADER = "# WavePilot CWKG v1"


# --------------------------------------------------------------------------------------
# Enumerations
# --------------------------------------------------------------------------------------


class Side(str, Enum):
    WAVEFORM = "waveform"
    ENVIRONMENT = "environment"


class RelationKind(str, Enum):
    CATEGORICAL = "categorical"
    NUMERIC = "numeric"
    BOOLEAN = "boolean"


class EntityKind(str, Enum):
    WAVEFORM_HEAD = "waveform_head"
    ENVIRONMENT_HEAD = "environment_head"
    TAIL_VALUE = "tail_value"


class Subgraph(str, Enum):
    WKG = "WKG"
    EKG = "EKG"
    EWBG = "EWBG"


HEAD_KIND: Dict[Side, EntityKind] = {
    Side.WAVEFORM: EntityKind.WAVEFORM_HEAD,
    Side.ENVIRONMENT: EntityKind.ENVIRONMENT_HEAD,
}

SIDE_OF_HEAD: Dict[EntityKind, Side] = {kind: side for side, kind in HEAD_KIND.items()}

SUBGRAPH_OF_SIDE: Dict[Side, Subgraph] = {
    Side.WAVEFORM: Subgraph.WKG,
    Side.ENVIRONMENT: Subgraph.EKG,
}


# --------------------------------------------------------------------------------------
# Records
# --------------------------------------------------------------------------------------


@dataclass(frozen=True)
class RelationDef:
    name: str
    kind: RelationKind
    side: Side
    row_index: int
    units: Optional[str] = None
    value_range: Optional[Tuple[float, float]] = None

    @property
    def is_numeric(self) -> bool:
        return self.kind is RelationKind.NUMERIC

    def normalize(self, value: float) -> Tuple[float, bool]:
        """
        Map a value into [0, 1] over value_range.

        Returns (v_norm, clamped). Out-of-range values are clamped.
        """
        if self.value_range is None:
            raise SchemaViolation(
                message=f"Relation '{self.name}' has no value range",
                subject=self.name,
            )
        low, high = self.value_range
        v_norm = (float(value) - low) / (high - low)
        if v_norm < 0.0 or v_norm > 1.0:
            return min(max(v_norm, 0.0), 1.0), True
        return v_norm, False


@dataclass(frozen=True)
class Entity:
    id: str
    kind: EntityKind
    text_label: str
    numeric_value: Optional[float] = None


@dataclass(frozen=True)
class Triple:
    head: str
    relation: str
    tail: str
    subgraph: Subgraph

    @property
    def key(self) -> Tuple[str, str, str]:
        return (self.head, self.relation, self.tail)


@dataclass(frozen=True)
class FeatureRow:
    relation: str
    tail_id: Optional[str]
    numeric_value: Optional[float]
    missing: bool


def validate_schema(schema: Sequence[RelationDef]) -> None:
    """Raise SchemaViolation unless the relation list is a usable schema."""
    if not schema:
        raise SchemaViolation(message="Schema block is required (no relations declared)")

    seen: Set[str] = set()
    for rel in schema:
        if rel.name == FEASIBLE:
            raise SchemaViolation(
                message=f"'{FEASIBLE}' is reserved for EWBG edges",
                subject=rel.name,
            )
        if rel.name in seen:
            raise SchemaViolation(message=f"Duplicate relation '{rel.name}'", subject=rel.name)
        seen.add(rel.name)

        if rel.is_numeric:
            if rel.value_range is None:
                raise SchemaViolation(
                    message=f"Numeric relation '{rel.name}' needs a value range",
                    subject=rel.name,
                )
            low, high = rel.value_range
            if not (math.isfinite(low) and math.isfinite(high) and low < high):
                raise SchemaViolation(
                    message=f"Numeric relation '{rel.name}' has invalid range [{low}, {high}]",
                    subject=rel.name,
                )

    for side in Side:
        indices = sorted(rel.row_index for rel in schema if rel.side is side)
        if indices != list(range(len(indices))):
            raise SchemaViolation(
                message=f"Row indices for side '{side.value}' must be 0..N-1, got {indices}",
                subject=side.value,
            )


# --------------------------------------------------------------------------------------
# Store
# --------------------------------------------------------------------------------------


class CwkgStore:
    """
    In-memory CWKG.

    Build it by registering entities and then triples; afterwards treat it as
    read-only. Every mutating call returns the store so calls can be chained.
    """

    def __init__(self, schema: Iterable[RelationDef]):
        ordered = sorted(schema, key=lambda rel: (list(Side).index(rel.side), rel.row_index))
        validate_schema(ordered)

        self.schema: List[RelationDef] = ordered
        self._relations: Dict[str, RelationDef] = {rel.name: rel for rel in ordered}
        self.entities: Dict[str, Entity] = {}
        self.triples: List[Triple] = []
        self.adjacency: Dict[str, List[Tuple[str, str]]] = defaultdict(list)
        self._keys: Set[Tuple[str, str, str]] = set()

    # -------------------------- registries ------------------------------------------

    def relation(self, name: str) -> RelationDef:
        try:
            return self._relations[name]
        except KeyError:
            raise UnknownRelation(
                message=f"Unknown relation '{name}'",
                subject=name,
                invalid_value=name,
                valid_values=sorted(self._relations),
            )

    def relations(self, side: Side) -> List[RelationDef]:
        return [rel for rel in self.schema if rel.side is side]

    def entity(self, entity_id: str) -> Entity:
        try:
            return self.entities[entity_id]
        except KeyError:
            raise UnknownEntity(message=f"Unknown entity '{entity_id}'", subject=entity_id)

    def heads(self, kind: EntityKind) -> List[str]:
        return sorted(eid for eid, ent in self.entities.items() if ent.kind is kind)

    def add_entity(self, entity: Entity) -> "CwkgStore":
        existing = self.entities.get(entity.id)
        if existing is not None:
            if existing == entity:
                return self
            raise SchemaViolation(
                message=f"Entity '{entity.id}' already registered with different fields",
                subject=entity.id,
            )
        if entity.numeric_value is not None and not math.isfinite(entity.numeric_value):
            raise InvalidValue(
                message=f"Entity '{entity.id}' has non-finite numeric value",
                subject=entity.id,
                invalid_value=str(entity.numeric_value),
            )
        self.entities[entity.id] = entity
        return self

    # -------------------------- triples ---------------------------------------------

    def add_triple(self, triple: Triple) -> "CwkgStore":
        head = self.entity(triple.head)
        tail = self.entity(triple.tail)
        self._check_subgraph(triple, head, tail)

        if triple.key in self._keys:
            raise DuplicateTriple(
                message=f"Triple ({triple.head}, {triple.relation}, {triple.tail}) already present",
                subject=triple.head,
                invalid_value=triple.relation,
            )

        self.triples.append(triple)
        self._keys.add(triple.key)
        self.adjacency[triple.head].append((triple.relation, triple.tail))
        return self

    def _check_subgraph(self, triple: Triple, head: Entity, tail: Entity) -> None:
        if triple.relation == FEASIBLE or triple.subgraph is Subgraph.EWBG:
            if not (
                triple.relation == FEASIBLE
                and triple.subgraph is Subgraph.EWBG
                and head.kind is EntityKind.ENVIRONMENT_HEAD
                and tail.kind is EntityKind.WAVEFORM_HEAD
            ):
                raise SubgraphMismatch(
                    message=(
                        "EWBG edges must be (environment, feasible, waveform); got "
                        f"({triple.head}, {triple.relation}, {triple.tail}) in {triple.subgraph.value}"
                    ),
                    subject=triple.head,
                    invalid_value=triple.subgraph.value,
                )
            return

        rel = self.relation(triple.relation)
        expected = SUBGRAPH_OF_SIDE[rel.side]
        if (
            triple.subgraph is not expected
            or head.kind is not HEAD_KIND[rel.side]
            or tail.kind is not EntityKind.TAIL_VALUE
        ):
            raise SubgraphMismatch(
                message=(
                    f"Relation '{rel.name}' belongs to {expected.value} with a "
                    f"{HEAD_KIND[rel.side].value} head and a tail_value tail"
                ),
                subject=triple.head,
                invalid_value=triple.subgraph.value,
                valid_values=[expected.value],
            )

    def has_triple(self, head: str, relation: str, tail: str) -> bool:
        return (head, relation, tail) in self._keys

    def triples_in(self, subgraph: Subgraph) -> List[Triple]:
        return [t for t in self.triples if t.subgraph is subgraph]

    def feasible_set(self, env_id: str) -> Set[str]:
        """Full available waveform set of an environment (whole EWBG, not a split)."""
        self.entity(env_id)
        return {tail for rel, tail in self.adjacency.get(env_id, []) if rel == FEASIBLE}

    # -------------------------- queries ---------------------------------------------

    def _relation_order(self, relation: str) -> int:
        rel = self._relations.get(relation)
        return rel.row_index if rel is not None else len(self.schema)

    def neighbors(self, head: str) -> List[Tuple[str, str]]:
        """First-order neighbours of head, ordered by schema row then tail id."""
        self.entity(head)
        return sorted(
            self.adjacency.get(head, []),
            key=lambda pair: (self._relation_order(pair[0]), pair[1]),
        )

    def feature_rows(self, head: str) -> List[FeatureRow]:
        entity = self.entity(head)
        side = SIDE_OF_HEAD.get(entity.kind)
        if side is None:
            raise UnknownEntity(
                message=f"Entity '{head}' is a tail value, not a waveform or environment head",
                subject=head,
            )

        tails_by_relation: Dict[str, List[str]] = defaultdict(list)
        for relation, tail in self.adjacency.get(head, []):
            tails_by_relation[relation].append(tail)

        rows: List[FeatureRow] = []
        for rel in self.relations(side):
            tails = sorted(tails_by_relation.get(rel.name, []))
            if not tails:
                rows.append(FeatureRow(rel.name, None, None, missing=True))
                continue
            if len(tails) > 1:
                logger.warning(
                    "CWKG head=%s relation=%s has %d tails; using %s",
                    head,
                    rel.name,
                    len(tails),
                    tails[0],
                )
            tail = self.entities[tails[0]]
            rows.append(FeatureRow(rel.name, tail.id, tail.numeric_value, missing=False))
        return rows

    # -------------------------- consistency -----------------------------------------

    def rebuild_adjacency(self) -> Dict[str, List[Tuple[str, str]]]:
        rebuilt: Dict[str, List[Tuple[str, str]]] = defaultdict(list)
        for t in self.triples:
            rebuilt[t.head].append((t.relation, t.tail))
        return dict(rebuilt)

    def validate(self) -> None:
        """Re-check every store invariant; raises the first violation found."""
        validate_schema(self.schema)
        keys: Set[Tuple[str, str, str]] = set()
        for t in self.triples:
            self._check_subgraph(t, self.entity(t.head), self.entity(t.tail))
            if t.key in keys:
                raise DuplicateTriple(message=f"Duplicate triple {t.key}", subject=t.head)
            keys.add(t.key)
        current = {head: pairs for head, pairs in self.adjacency.items() if pairs}
        if current != self.rebuild_adjacency():
            raise SchemaViolation(message="Adjacency is out of sync with the triple list")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CwkgStore):
            return NotImplemented
        return (
            self.schema == other.schema
            and self.entities == other.entities
            and self.triples == other.triples
        )

    def __repr__(self) -> str:
        counts = {sg.value: len(self.triples_in(sg)) for sg in Subgraph}
        return f"CwkgStore(relations={len(self.schema)}, entities={len(self.entities)}, triples={counts})"


# --------------------------------------------------------------------------------------
# Train / test split
# --------------------------------------------------------------------------------------


def split_ewbg(
    store: CwkgStore, ratio: Tuple[int, int], seed: int
) -> Tuple[List[Triple], List[Triple]]:
    """
    Split EWBG edges a:b into train and test.

    The test side always holds exactly round(n * b / (a + b)) edges. Environments
    are visited in a seeded order and taken whole, first-fit, so most test
    environments keep every edge out of training. Whatever gap first-fit leaves
    is closed with a seeded subset of the edges of one more environment, which
    then sits on both sides.
    """
    a, b = int(ratio[0]), int(ratio[1])
    if a <= 0 or b < 0:
        raise InvalidValue(
            message=f"Split ratio must be a positive train share and non-negative test share, got {a}:{b}",
            invalid_value=f"{a}:{b}",
        )

    edges = store.triples_in(Subgraph.EWBG)
    if not edges:
        raise EmptyEwbg(message="Store has no EWBG (feasible) edges to split")

    if b == 0:
        return list(edges), []

    groups: Dict[str, List[Triple]] = defaultdict(list)
    for t in edges:
        groups[t.head].append(t)

    env_ids = sorted(groups)
    rng = seeded_rng(seed, 0x5917)
    order = [env_ids[int(i)] for i in rng.permutation(len(env_ids))]
    target = int(round(len(edges) * b / (a + b)))

    remaining = target
    test_set: Set[Triple] = set()
    whole: Set[str] = set()
    for env in order:
        if remaining == 0:
            break
        if len(groups[env]) <= remaining:
            test_set.update(groups[env])
            whole.add(env)
            remaining -= len(groups[env])

    # every environment first-fit skipped is larger than the gap, so one suffices
    partial = next((env for env in order if env not in whole), None) if remaining else None
    if partial is not None:
        group = groups[partial]
        picked = rng.permutation(len(group))[:remaining]
        test_set.update(group[int(i)] for i in picked)

    train = [t for t in edges if t not in test_set]
    test = [t for t in edges if t in test_set]
    logger.info(
        "SPLIT ratio=%d:%d train=%d test=%d envs_whole=%d partial=%s",
        a, b, len(train), len(test), len(whole), partial or "-",
    )
    return train, test


def parse_ratio(text: str) -> Tuple[int, int]:
    """Parse '10:2' style ratios."""
    try:
        left, right = text.split(":")
        return int(left), int(right)
    except ValueError:
        raise InvalidValue(message=f"Ratio must look like '10:2', got '{text}'", invalid_value=text)


# --------------------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------------------


def _fmt_float(value: float) -> str:
    return repr(float(value))


def dumps(store: CwkgStore) -> str:
    lines: List[str] = [FORMAT_HEADER]

    for rel in store.schema:
        parts = ["R", rel.side.value, rel.kind.value, rel.name]
        if rel.value_range is not None:
            parts += [_fmt_float(rel.value_range[0]), _fmt_float(rel.value_range[1])]
        if rel.units:
            parts.append(rel.units)
        lines.append(" ".join(parts))

    for ent in store.entities.values():
        numeric = "-" if ent.numeric_value is None else _fmt_float(ent.numeric_value)
        lines.append(f"E {ent.kind.value} {ent.id} {numeric} {ent.text_label}".rstrip())

    for t in store.triples:
        lines.append(f"T {t.subgraph.value} {t.head} {t.relation} {t.tail}")

    return "\n".join(lines) + "\n"


def _parse_enum(enum_cls, token: str, line_no: int, what: str):
    try:
        return enum_cls(token)
    except ValueError:
        raise ParseError(
            message=f"Line {line_no}: unknown {what} '{token}'",
            invalid_value=token,
            valid_values=[member.value for member in enum_cls],
            line=line_no,
        )


def _parse_float(token: str, line_no: int, what: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(message=f"Line {line_no}: {what} '{token}' is not a number", invalid_value=token, line=line_no)
    if not math.isfinite(value):
        raise ParseError(message=f"Line {line_no}: {what} must be finite", invalid_value=token, line=line_no)
    return value


def _parse_relation(tokens: List[str], line_no: int, row_counters: Dict[Side, int]) -> RelationDef:
    if len(tokens) < 4:
        raise ParseError(message=f"Line {line_no}: schema record needs 'R <side> <kind> <name>'", line=line_no)
    side = _parse_enum(Side, tokens[1], line_no, "side")
    kind = _parse_enum(RelationKind, tokens[2], line_no, "relation kind")
    name = tokens[3]
    rest = tokens[4:]

    value_range: Optional[Tuple[float, float]] = None
    if kind is RelationKind.NUMERIC:
        if len(rest) < 2:
            raise ParseError(
                message=f"Line {line_no}: numeric relation '{name}' needs 'min max'",
                subject=name,
                line=line_no,
            )
        value_range = (_parse_float(rest[0], line_no, "min"), _parse_float(rest[1], line_no, "max"))
        rest = rest[2:]

    row_index = row_counters[side]
    row_counters[side] += 1
    return RelationDef(
        name=name,
        kind=kind,
        side=side,
        row_index=row_index,
        units=" ".join(rest) or None,
        value_range=value_range,
    )


def loads(text: str) -> CwkgStore:
    schema: List[RelationDef] = []
    row_counters: Dict[Side, int] = {side: 0 for side in Side}
    store: Optional[CwkgStore] = None

    for line_no, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        record = line.split(None, 1)[0]

        if record == "R":
            if store is not None:
                raise ParseError(
                    message=f"Line {line_no}: schema records must precede entities and triples",
                    line=line_no,
                )
            schema.append(_parse_relation(line.split(), line_no, row_counters))
            continue

        if record not in ("E", "T"):
            raise ParseError(
                message=f"Line {line_no}: unknown record type '{record}'",
                invalid_value=record,
                valid_values=["R", "E", "T"],
                line=line_no,
            )

        if store is None:
            try:
                store = CwkgStore(schema)
            except SchemaViolation as exc:
                exc.line = line_no
                raise

        try:
            if record == "E":
                store.add_entity(_parse_entity(line, line_no))
            else:
                store.add_triple(_parse_triple(line, line_no))
        except ParseError:
            raise
        except (UnknownRelation, UnknownEntity, SubgraphMismatch, DuplicateTriple, InvalidValue, SchemaViolation) as exc:
            raise ParseError(
                message=f"Line {line_no}: {exc.message}",
                subject=exc.subject,
                invalid_value=exc.invalid_value,
                valid_values=exc.valid_values,
                line=line_no,
            ) from exc

    if store is None:
        store = CwkgStore(schema)
    return store


def _parse_entity(line: str, line_no: int) -> Entity:
    tokens = line.split(None, 4)
    if len(tokens) < 4:
        raise ParseError(message=f"Line {line_no}: entity record needs 'E <kind> <id> <value|->'", line=line_no)
    kind = _parse_enum(EntityKind, tokens[1], line_no, "entity kind")
    entity_id = tokens[2]
    numeric = None if tokens[3] == "-" else _parse_float(tokens[3], line_no, "numeric value")
    label = tokens[4] if len(tokens) > 4 else entity_id
    return Entity(id=entity_id, kind=kind, text_label=label, numeric_value=numeric)


def _parse_triple(line: str, line_no: int) -> Triple:
    tokens = line.split()
    if len(tokens) != 5:
        raise ParseError(
            message=f"Line {line_no}: triple record needs 'T <subgraph> <head> <relation> <tail>'",
            line=line_no,
        )
    subgraph = _parse_enum(Subgraph, tokens[1], line_no, "subgraph")
    return Triple(head=tokens[2], relation=tokens[3], tail=tokens[4], subgraph=subgraph)


def save(store: CwkgStore, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as handle:
            handle.write(dumps(store))
    except OSError as exc:
        raise IoFailure(message=f"Cannot write KG file '{path}': {exc}", subject=str(path)) from exc
    return path


def load(path: Union[str, Path]) -> CwkgStore:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(message=f"Cannot read KG file '{path}': {exc}", subject=str(path)) from exc
    except UnicodeDecodeError as exc:
        raise ParseError(message=f"KG file '{path}' is not UTF-8", subject=str(path)) from exc
    try:
        return loads(text)
    except WavePilotError as exc:
        logger.error("CWKG load failed: path=%s error=%s", path, exc.message)
        raise
