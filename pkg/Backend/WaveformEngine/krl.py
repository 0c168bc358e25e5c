# Backend/WaveformEngine/krl.py

"""
Knowledge representation learning over the CWKG.

TransD scores triples as a projected translation distance (lower is more
plausible) and is trained with a BPR margin against filtered corruptions.
The same module assembles the per-head embedding blocks fed to enhancement:

    waveform     (N_v, N_emb, 3)  channels: numeric, TransD tail, text
    environment  (N_u, N_emb, 2)  channels: numeric, text

Environment blocks never touch the TransD tables, so a brand-new environment
can be scored without retraining.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from .cwkg_store import (
    FEASIBLE,
    CwkgStore,
    Entity,
    EntityKind,
    FeatureRow,
    RelationDef,
    Side,
    SIDE_OF_HEAD,
    Triple,
)
from .errors import (
    EmptyLabel,
    ExhaustedCandidates,
    InvalidValue,
    NonNumericRelation,
    ShapeMismatch,
    UnknownEntity,
    UnknownRelation,
)
from .numerics import (
    Module,
    Param,
    Tensor,
    add,
    log_sigmoid,
    mean,
    mul,
    stack,
    sub,
    sum_,
    square,
    take,
    uniform_param,
)
from .seeding import seeded_rng, stable_hash


logger = logging.getLogger("wavepilot.krl")

BPR_SIGNS = ("consistent", "paper")
CHANNELS = {Side.WAVEFORM: 3, Side.ENVIRONMENT: 2}


# --------------------------------------------------------------------------------------
# TransD parameters
# --------------------------------------------------------------------------------------


class TransDParams(Module):
    """
    Entity and relation tables, one row per id.

    Embeddings start uniform in +-0.5/sqrt(N_emb); projections start at zero so
    the first epochs behave like TransE.
    """

    def __init__(self, entity_ids: Sequence[str], relation_names: Sequence[str], emb_dim: int, seed: int):
        if emb_dim < 1:
            raise ShapeMismatch(message=f"Embedding dimension must be positive, got {emb_dim}")
        self.entity_ids: List[str] = list(entity_ids)
        self.relation_names: List[str] = list(relation_names)
        self.entity_index: Dict[str, int] = {eid: i for i, eid in enumerate(self.entity_ids)}
        self.relation_index: Dict[str, int] = {name: i for i, name in enumerate(self.relation_names)}
        self.emb_dim = emb_dim

        bound = 0.5 / math.sqrt(emb_dim)
        self.entity_e = uniform_param(seeded_rng(seed, 0x7D, 1), (len(self.entity_ids), emb_dim), bound, "entity_e")
        self.entity_p = Param(np.zeros((len(self.entity_ids), emb_dim)), "entity_p")
        self.relation_e = uniform_param(
            seeded_rng(seed, 0x7D, 2), (len(self.relation_names), emb_dim), bound, "relation_e"
        )
        self.relation_p = Param(np.zeros((len(self.relation_names), emb_dim)), "relation_p")

    @classmethod
    def for_store(cls, store: CwkgStore, emb_dim: int, seed: int) -> "TransDParams":
        relations = [rel.name for rel in store.schema] + [FEASIBLE]
        return cls(sorted(store.entities), relations, emb_dim, seed)

    def entity_rows(self, ids: Iterable[str]) -> np.ndarray:
        try:
            return np.fromiter((self.entity_index[i] for i in ids), dtype=np.int64)
        except KeyError as exc:
            raise UnknownEntity(message=f"No TransD parameters for entity '{exc.args[0]}'", subject=exc.args[0])

    def relation_rows(self, names: Iterable[str]) -> np.ndarray:
        try:
            return np.fromiter((self.relation_index[n] for n in names), dtype=np.int64)
        except KeyError as exc:
            raise UnknownRelation(
                message=f"No TransD parameters for relation '{exc.args[0]}'",
                subject=exc.args[0],
                valid_values=list(self.relation_names),
            )

    def state_arrays(self) -> Dict[str, np.ndarray]:
        arrays: Dict[str, np.ndarray] = {}
        for i, eid in enumerate(self.entity_ids):
            arrays[f"entity/{eid}/e"] = self.entity_e.data[i]
            arrays[f"entity/{eid}/p"] = self.entity_p.data[i]
        for i, name in enumerate(self.relation_names):
            arrays[f"relation/{name}/e"] = self.relation_e.data[i]
            arrays[f"relation/{name}/p"] = self.relation_p.data[i]
        return arrays

    def load_state(self, arrays: Dict[str, np.ndarray]) -> None:
        for i, eid in enumerate(self.entity_ids):
            self.entity_e.data[i] = _fetch(arrays, f"entity/{eid}/e", self.emb_dim)
            self.entity_p.data[i] = _fetch(arrays, f"entity/{eid}/p", self.emb_dim)
        for i, name in enumerate(self.relation_names):
            self.relation_e.data[i] = _fetch(arrays, f"relation/{name}/e", self.emb_dim)
            self.relation_p.data[i] = _fetch(arrays, f"relation/{name}/p", self.emb_dim)


def _fetch(arrays: Dict[str, np.ndarray], name: str, dim: int) -> np.ndarray:
    try:
        value = arrays[name]
    except KeyError:
        raise UnknownEntity(message=f"Checkpoint has no array '{name}'", subject=name)
    if value.shape != (dim,):
        raise ShapeMismatch(message=f"Checkpoint array '{name}' has shape {value.shape}, expected ({dim},)", subject=name)
    return value


# --------------------------------------------------------------------------------------
# Scoring
# --------------------------------------------------------------------------------------


def transd_project(e: Tensor, e_p: Tensor, r_p: Tensor) -> Tensor:
    """(r_p e_p^T + I) e, computed as e + r_p (e_p . e)."""
    if e.shape != e_p.shape or e.shape[-1] != r_p.shape[-1]:
        raise ShapeMismatch(
            message=f"transd_project: e{e.shape} e_p{e_p.shape} r_p{r_p.shape}",
            subject="transd_project",
        )
    return add(e, mul(r_p, sum_(mul(e_p, e), axis=-1, keepdims=True)))


def transd_distance(h: Tensor, h_p: Tensor, r: Tensor, r_p: Tensor, t: Tensor, t_p: Tensor) -> Tensor:
    """||h_perp + r - t_perp||^2 over the last axis."""
    diff = sub(add(transd_project(h, h_p, r_p), r), transd_project(t, t_p, r_p))
    return sum_(square(diff), axis=-1)


def transd_scores(params: TransDParams, heads: np.ndarray, relations: np.ndarray, tails: np.ndarray) -> Tensor:
    """Batched scores for index arrays into the parameter tables."""
    return transd_distance(
        take(params.entity_e, heads),
        take(params.entity_p, heads),
        take(params.relation_e, relations),
        take(params.relation_p, relations),
        take(params.entity_e, tails),
        take(params.entity_p, tails),
    )


def transd_score(triple: Triple, params: TransDParams) -> Tensor:
    return transd_scores(
        params,
        params.entity_rows([triple.head]),
        params.relation_rows([triple.relation]),
        params.entity_rows([triple.tail]),
    ).reshape(())


# --------------------------------------------------------------------------------------
# Negative sampling
# --------------------------------------------------------------------------------------


@dataclass(frozen=True)
class NegativePair:
    positive: Triple
    neg_head: Triple
    neg_tail: Triple


def _head_pool(store: CwkgStore, triple: Triple) -> List[str]:
    return store.heads(store.entity(triple.head).kind)


def _tail_pool(store: CwkgStore, triple: Triple) -> List[str]:
    # Tails are drawn from what the relation actually points at, so a modulation
    # is never corrupted into a JSR value.
    if triple.relation == FEASIBLE:
        return store.heads(EntityKind.WAVEFORM_HEAD)
    store.relation(triple.relation)
    return sorted({t.tail for t in store.triples if t.relation == triple.relation})


def sample_negatives(triple: Triple, store: CwkgStore, seed: int) -> NegativePair:
    """
    One head-corrupted and one tail-corrupted triple, uniform over the
    candidates that are not true triples. Deterministic per (triple, seed).
    """
    rng = seeded_rng(seed, stable_hash(triple.head, triple.relation, triple.tail))

    heads = [h for h in _head_pool(store, triple) if not store.has_triple(h, triple.relation, triple.tail)]
    tails = [t for t in _tail_pool(store, triple) if not store.has_triple(triple.head, triple.relation, t)]
    if not heads or not tails:
        side = "head" if not heads else "tail"
        raise ExhaustedCandidates(
            message=f"Every {side} corruption of ({triple.head}, {triple.relation}, {triple.tail}) is a true triple",
            subject=triple.head,
            invalid_value=triple.relation,
        )

    neg_head = heads[int(rng.integers(len(heads)))]
    neg_tail = tails[int(rng.integers(len(tails)))]
    return NegativePair(
        positive=triple,
        neg_head=Triple(neg_head, triple.relation, triple.tail, triple.subgraph),
        neg_tail=Triple(triple.head, triple.relation, neg_tail, triple.subgraph),
    )


class NegativeSampler:
    """
    Vectorized version of sample_negatives for training batches.

    Candidates are redrawn a bounded number of times; a corruption that still
    hits a true triple is masked out of the loss instead of stalling the epoch.
    """

    def __init__(self, store: CwkgStore, params: TransDParams, triples: Sequence[Triple], max_redraws: int = 16):
        self.params = params
        self.max_redraws = max_redraws
        self.heads = params.entity_rows(t.head for t in triples)
        self.relations = params.relation_rows(t.relation for t in triples)
        self.tails = params.entity_rows(t.tail for t in triples)

        n_ent = len(params.entity_ids)
        self._n_ent = n_ent
        self._true = np.unique(self._encode(self.heads, self.relations, self.tails))

        head_kind = {t.relation: store.entity(t.head).kind for t in triples}
        self._head_pool: Dict[int, np.ndarray] = {}
        self._tail_pool: Dict[int, np.ndarray] = {}
        by_relation: Dict[str, set] = {}
        for t in triples:
            by_relation.setdefault(t.relation, set()).add(t.tail)
        for relation, kind in head_kind.items():
            r = params.relation_index[relation]
            self._head_pool[r] = params.entity_rows(store.heads(kind))
            pool = store.heads(EntityKind.WAVEFORM_HEAD) if relation == FEASIBLE else sorted(by_relation[relation])
            self._tail_pool[r] = params.entity_rows(pool)

    def __len__(self) -> int:
        return len(self.heads)

    def _encode(self, h: np.ndarray, r: np.ndarray, t: np.ndarray) -> np.ndarray:
        return (r.astype(np.int64) * self._n_ent + h) * self._n_ent + t

    def _is_true(self, h: np.ndarray, r: np.ndarray, t: np.ndarray) -> np.ndarray:
        return np.isin(self._encode(h, r, t), self._true, assume_unique=False)

    def _draw(self, pools: Dict[int, np.ndarray], r: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        out = np.empty(len(r), dtype=np.int64)
        for rel in np.unique(r):
            where = np.nonzero(r == rel)[0]
            pool = pools[int(rel)]
            out[where] = pool[rng.integers(len(pool), size=len(where))]
        return out

    def sample(self, index: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """
        Corrupt the triples at `index`. Returns (neg_heads, neg_tails, head_ok,
        tail_ok); a False flag marks a corruption that could not avoid the KG.
        """
        h, r, t = self.heads[index], self.relations[index], self.tails[index]

        neg_h = self._draw(self._head_pool, r, rng)
        neg_t = self._draw(self._tail_pool, r, rng)
        bad_h = self._is_true(neg_h, r, t)
        bad_t = self._is_true(h, r, neg_t)
        for _ in range(self.max_redraws):
            if not (bad_h.any() or bad_t.any()):
                break
            if bad_h.any():
                neg_h[bad_h] = self._draw(self._head_pool, r[bad_h], rng)
                bad_h = self._is_true(neg_h, r, t)
            if bad_t.any():
                neg_t[bad_t] = self._draw(self._tail_pool, r[bad_t], rng)
                bad_t = self._is_true(h, r, neg_t)
        return neg_h, neg_t, ~bad_h, ~bad_t


# --------------------------------------------------------------------------------------
# BPR loss
# --------------------------------------------------------------------------------------


def bpr_from_scores(positive: Tensor, negative: Tensor, sign: str = "consistent") -> Tensor:
    """
    Mean -ln sigmoid(margin) over samples.

    consistent: margin = f_neg - f_pos (pushes true triples to smaller distance)
    paper:      margin = f_pos - f_neg (literal orientation, pushes true triples apart)
    """
    if sign not in BPR_SIGNS:
        raise InvalidValue(message=f"Unknown bpr_sign '{sign}'", invalid_value=sign, valid_values=list(BPR_SIGNS))
    margin = sub(negative, positive) if sign == "consistent" else sub(positive, negative)
    return mul(mean(log_sigmoid(margin)), -1.0)


def bpr_loss(pairs: Sequence[NegativePair], params: TransDParams, sign: str = "consistent") -> Tensor:
    """BPR over NegativePairs; each pair contributes two samples."""
    if not pairs:
        raise ShapeMismatch(message="bpr_loss needs at least one pair", subject="bpr_loss")
    positives = [p.positive for p in pairs for _ in range(2)]
    negatives = [n for p in pairs for n in (p.neg_head, p.neg_tail)]

    def scores(triples: List[Triple]) -> Tensor:
        return transd_scores(
            params,
            params.entity_rows(t.head for t in triples),
            params.relation_rows(t.relation for t in triples),
            params.entity_rows(t.tail for t in triples),
        )

    return bpr_from_scores(scores(positives), scores(negatives), sign)


# --------------------------------------------------------------------------------------
# Text and numeric channels
# --------------------------------------------------------------------------------------


class TextEmbedder(Protocol):
    dim: int

    def embed(self, label: str) -> np.ndarray: ...


class HashTextEmbedder:
    """Seeded-hash unit vector per label. Pure and deterministic across processes."""

    def __init__(self, dim: int, salt: str = "wavepilot-text"):
        self.dim = dim
        self.salt = salt
        self._cache: Dict[str, np.ndarray] = {}

    def embed(self, label: str) -> np.ndarray:
        token = label.strip() if label is not None else ""
        if not token:
            raise EmptyLabel(message="Cannot embed an empty label", invalid_value=repr(label))
        cached = self._cache.get(token)
        if cached is None:
            vec = seeded_rng(stable_hash(self.salt, token)).standard_normal(self.dim)
            cached = vec / np.linalg.norm(vec)
            cached.setflags(write=False)
            self._cache[token] = cached
        return cached

    def collisions(self, labels: Iterable[str], tol: float = 1e-6) -> List[Tuple[str, str]]:
        """Label pairs whose vectors are (nearly) parallel."""
        unique = sorted({label.strip() for label in labels if label and label.strip()})
        if len(unique) < 2:
            return []
        vectors = np.stack([self.embed(label) for label in unique])
        cosine = vectors @ vectors.T
        i, j = np.nonzero(np.triu(cosine > 1.0 - tol, k=1))
        return [(unique[a], unique[b]) for a, b in zip(i, j)]


_DEFAULT_EMBEDDERS: Dict[int, HashTextEmbedder] = {}


def text_embed(label: str, dim: int = 16) -> np.ndarray:
    embedder = _DEFAULT_EMBEDDERS.setdefault(dim, HashTextEmbedder(dim))
    return embedder.embed(label)


class NumericChannel(Module):
    """One learned direction d_r per numeric relation, stored as numeric_dir/<relation>."""

    def __init__(self, relations: Sequence[RelationDef], emb_dim: int, seed: int):
        self.names: List[str] = [rel.name for rel in relations if rel.is_numeric]
        self.index: Dict[str, int] = {name: i for i, name in enumerate(self.names)}
        self.emb_dim = emb_dim
        raw = seeded_rng(seed, 0x4E).standard_normal((max(len(self.names), 1), emb_dim))
        raw /= np.linalg.norm(raw, axis=1, keepdims=True)
        self.directions = Param(raw[: len(self.names)], "numeric_dir")

    def direction(self, relation: RelationDef) -> Tensor:
        if not relation.is_numeric:
            raise NonNumericRelation(
                message=f"Relation '{relation.name}' is {relation.kind.value}, not numeric",
                subject=relation.name,
            )
        return take(self.directions, np.array([self.index[relation.name]])).reshape((self.emb_dim,))

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {f"numeric_dir/{name}": self.directions.data[i] for i, name in enumerate(self.names)}

    def load_state(self, arrays: Dict[str, np.ndarray]) -> None:
        for i, name in enumerate(self.names):
            self.directions.data[i] = _fetch(arrays, f"numeric_dir/{name}", self.emb_dim)


def normalized_value(value: float, relation: RelationDef, subject: str = "") -> float:
    v_norm, clamped = relation.normalize(value)
    if clamped:
        logger.warning(
            "KRL value %s for %s%s outside range %s; clamped",
            value,
            relation.name,
            f" ({subject})" if subject else "",
            relation.value_range,
        )
    return v_norm


def numeric_embed(value: float, relation: RelationDef, channel: NumericChannel) -> Tensor:
    """v_norm * d_r with v_norm = (value - min) / (max - min)."""
    direction = channel.direction(relation)
    return mul(direction, normalized_value(value, relation))


# --------------------------------------------------------------------------------------
# Embedding blocks
# --------------------------------------------------------------------------------------


@dataclass
class HeadFeatures:
    """Feature rows of one head plus the label of each present tail."""

    head: str
    side: Side
    rows: List[FeatureRow]
    labels: List[Optional[str]]

    @classmethod
    def from_store(cls, store: CwkgStore, head: str) -> "HeadFeatures":
        entity = store.entity(head)
        side = SIDE_OF_HEAD.get(entity.kind)
        rows = store.feature_rows(head)
        labels = [None if row.missing else store.entities[row.tail_id].text_label for row in rows]
        return cls(head, side, rows, labels)

    @classmethod
    def from_entities(cls, head: str, side: Side, relations: Sequence[RelationDef], tails: Dict[str, Entity]) -> "HeadFeatures":
        """Features of a head that is not registered in any store."""
        rows, labels = [], []
        for rel in relations:
            tail = tails.get(rel.name)
            if tail is None:
                rows.append(FeatureRow(rel.name, None, None, missing=True))
                labels.append(None)
            else:
                rows.append(FeatureRow(rel.name, tail.id, tail.numeric_value, missing=False))
                labels.append(tail.text_label)
        return cls(head, side, rows, labels)


@dataclass
class EmbeddingBlock:
    head: str
    side: Side
    data: Tensor
    missing_mask: np.ndarray

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def emb_dim(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


class BlockEncoder:
    """
    Precomputed inputs for many heads of one side.

    Everything that does not depend on trainable parameters (normalized values,
    text vectors, tail indices, missing masks) is resolved once here, so
    assembling a batch is a handful of gathers.
    """

    def __init__(
        self,
        side: Side,
        relations: Sequence[RelationDef],
        features: Sequence[HeadFeatures],
        numeric: NumericChannel,
        embedder: TextEmbedder,
        transd: Optional[TransDParams] = None,
    ):
        if side is Side.WAVEFORM and transd is None:
            raise ShapeMismatch(message="Waveform blocks need TransD parameters")
        self.side = side
        self.relations = list(relations)
        self.heads = [f.head for f in features]
        self.index = {head: i for i, head in enumerate(self.heads)}
        self.numeric = numeric
        self.transd = transd
        self.emb_dim = numeric.emb_dim
        self.channels = CHANNELS[side]
        n_heads, n_rows, dim = len(features), len(self.relations), self.emb_dim

        self.values = np.zeros((n_heads, n_rows))
        self.missing = np.zeros((n_heads, n_rows), dtype=bool)
        self.text = np.zeros((n_heads, n_rows, dim))
        tail_ids: List[List[Optional[str]]] = []
        for b, feat in enumerate(features):
            if feat.side is not side or len(feat.rows) != n_rows:
                raise ShapeMismatch(
                    message=f"Head '{feat.head}' does not match the {side.value} schema",
                    subject=feat.head,
                )
            tail_ids.append([])
            for i, (rel, row, label) in enumerate(zip(self.relations, feat.rows, feat.labels)):
                tail_ids[-1].append(row.tail_id)
                if row.missing:
                    self.missing[b, i] = True
                    continue
                if rel.is_numeric and row.numeric_value is not None:
                    self.values[b, i] = normalized_value(row.numeric_value, rel, feat.head)
                self.text[b, i] = embedder.embed(label)

        numeric_rows = [numeric.index.get(rel.name, -1) for rel in self.relations]
        self._numeric_mask = np.array([r >= 0 for r in numeric_rows], dtype=float)[:, None]
        self._numeric_rows = np.array([max(r, 0) for r in numeric_rows], dtype=np.int64)

        if side is Side.WAVEFORM:
            first = transd.entity_ids[0]
            flat = [tid if tid is not None else first for row in tail_ids for tid in row]
            self.tails = transd.entity_rows(flat).reshape(n_heads, n_rows)
        else:
            self.tails = None

        labels = [label for feat in features for label in feat.labels if label]
        if isinstance(embedder, HashTextEmbedder):
            clashes = embedder.collisions(labels)
            if clashes:
                logger.warning("KRL text channel collisions: %s", clashes[:5])

    @classmethod
    def for_store(
        cls,
        store: CwkgStore,
        side: Side,
        numeric: NumericChannel,
        embedder: TextEmbedder,
        transd: Optional[TransDParams] = None,
        heads: Optional[Sequence[str]] = None,
    ) -> "BlockEncoder":
        kind = EntityKind.WAVEFORM_HEAD if side is Side.WAVEFORM else EntityKind.ENVIRONMENT_HEAD
        heads = store.heads(kind) if heads is None else list(heads)
        features = [HeadFeatures.from_store(store, h) for h in heads]
        return cls(side, store.relations(side), features, numeric, embedder, transd)

    def __len__(self) -> int:
        return len(self.heads)

    def rows_of(self, heads: Iterable[str]) -> np.ndarray:
        try:
            return np.fromiter((self.index[h] for h in heads), dtype=np.int64)
        except KeyError as exc:
            raise UnknownEntity(message=f"'{exc.args[0]}' is not a {self.side.value} head here", subject=exc.args[0])

    def assemble(self, index: Optional[np.ndarray] = None, freeze_transd: bool = False) -> Tensor:
        """(B, N, N_emb, C) block batch for the heads at `index` (all heads if None)."""
        index = np.arange(len(self.heads)) if index is None else np.asarray(index, dtype=np.int64)
        present = (~self.missing[index]).astype(float)[..., None]

        if self.numeric.names:
            directions = mul(take(self.numeric.directions, self._numeric_rows), self._numeric_mask)
            numeric = mul(self.values[index][..., None], directions)
        else:
            numeric = Tensor(np.zeros((len(index), len(self.relations), self.emb_dim)))
        text = Tensor(self.text[index])
        if self.side is Side.ENVIRONMENT:
            return stack([numeric, text], axis=-1)

        table = Tensor(self.transd.entity_e.data) if freeze_transd else self.transd.entity_e
        structural = mul(take(table, self.tails[index]), present)
        return stack([numeric, structural, text], axis=-1)

    def block(self, head: str, freeze_transd: bool = False) -> EmbeddingBlock:
        row = self.rows_of([head])
        data = self.assemble(row, freeze_transd).reshape(
            (len(self.relations), self.emb_dim, self.channels)
        )
        return EmbeddingBlock(head, self.side, data, self.missing[row[0]].copy())


def assemble_block(
    head: str,
    store: CwkgStore,
    numeric: NumericChannel,
    embedder: TextEmbedder,
    transd: Optional[TransDParams] = None,
) -> EmbeddingBlock:
    entity = store.entity(head)
    side = SIDE_OF_HEAD.get(entity.kind)
    if side is None:
        raise UnknownEntity(message=f"'{head}' is a tail value, not a waveform or environment", subject=head)
    encoder = BlockEncoder.for_store(store, side, numeric, embedder, transd, heads=[head])
    return encoder.block(head)
