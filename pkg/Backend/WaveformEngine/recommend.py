# Backend/WaveformEngine/recommend.py

"""
Recommendation queries for environments described on the fly.

A description is a set of `relation=value` lines over the environment schema:

    channel_type=AWGN
    jamming_type=single_tone
    jsr_db=30dB
    required_rate_bps=5Mbps

The environment is encoded from those values alone. Nothing is added to the
store and the TransD tables are never read, so unseen values (say a 33 dB
JSR) need no retraining.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Tuple, Union

from .cf_train import ScoreVector, softmax_probabilities
from .cwkg_store import CwkgStore, Entity, RelationKind, Side
from .errors import InvalidValue, IoFailure, SchemaViolation
from .krl import BlockEncoder, HeadFeatures
from .model import WaveformRecommender
from .synthlab import (
    CHANNEL_TYPE,
    CHANNEL_TYPES,
    JAMMING_TYPE,
    JAMMING_TYPES,
    NUM_TONES,
    REQUIRED_BER,
    environment_tail,
)


logger = logging.getLogger("wavepilot.recommend")

QUERY_HEAD = "query"

_UNIT_SCALE = {
    "": 1.0,
    "bps": 1.0,
    "b/s": 1.0,
    "kbps": 1e3,
    "mbps": 1e6,
    "gbps": 1e9,
    "db": 1.0,
    "%": 0.01,
}

_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-z%/]*)\s*$")

_CATEGORY_ALIASES = {
    CHANNEL_TYPE: {"awgn": "Gaussian", **{c.lower(): c for c in CHANNEL_TYPES}},
    JAMMING_TYPE: {j.replace("_", "-"): j for j in JAMMING_TYPES} | {j: j for j in JAMMING_TYPES},
}


def parse_quantity(text: str) -> float:
    """'5Mbps' -> 5e6, '30 dB' -> 30.0, '1e-6' -> 1e-6."""
    match = _QUANTITY.match(text or "")
    if not match:
        raise InvalidValue(message=f"Cannot read a number from '{text}'", invalid_value=text)
    unit = match.group(2).lower()
    if unit not in _UNIT_SCALE:
        raise InvalidValue(
            message=f"Unknown unit '{match.group(2)}' in '{text}'",
            invalid_value=text,
            valid_values=sorted(u for u in _UNIT_SCALE if u),
        )
    return float(match.group(1)) * _UNIT_SCALE[unit]


def _categorical(relation: str, raw: str) -> str:
    value = raw.strip()
    aliases = _CATEGORY_ALIASES.get(relation, {})
    resolved = aliases.get(value.lower().replace(" ", "_"), aliases.get(value.lower(), value))
    if resolved not in aliases.values():
        logger.info("RECOMMEND unseen %s value '%s'", relation, value)
    return resolved


def _numeric(relation: str, raw: str) -> float:
    value = parse_quantity(raw)
    if relation == REQUIRED_BER and 0.0 < value < 1.0:
        # "1e-6" names the BER itself; the feature stores its exponent
        return float(round(math.log10(value)))
    if relation in (NUM_TONES, REQUIRED_BER):
        return float(round(value))
    return value


def description_lines(description: Union[str, Mapping[str, str]]) -> List[Tuple[int, str, str]]:
    if isinstance(description, Mapping):
        return [(i, str(k), str(v)) for i, (k, v) in enumerate(description.items(), start=1)]

    lines: List[Tuple[int, str, str]] = []
    for line_no, raw in enumerate(description.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SchemaViolation(
                message=f"line {line_no}: expected relation=value, got '{line}'",
                line=line_no,
                invalid_value=line,
            )
        key, value = line.split("=", 1)
        lines.append((line_no, key.strip(), value.strip()))
    return lines


def parse_environment(description: Union[str, Mapping[str, str]], store: CwkgStore) -> Dict[str, Entity]:
    """Relation name -> tail entity for every feature the description sets."""
    relations = {rel.name: rel for rel in store.relations(Side.ENVIRONMENT)}
    tails: Dict[str, Entity] = {}
    for line_no, key, raw in description_lines(description):
        rel = relations.get(key)
        if rel is None:
            raise SchemaViolation(
                message=f"line {line_no}: unknown environment relation '{key}'",
                subject=key,
                invalid_value=key,
                valid_values=sorted(relations),
                line=line_no,
            )
        if key in tails:
            raise SchemaViolation(message=f"line {line_no}: '{key}' given twice", subject=key, line=line_no)
        if not raw:
            raise InvalidValue(message=f"line {line_no}: '{key}' has no value", subject=key, line=line_no)
        try:
            value = _numeric(key, raw) if rel.kind is RelationKind.NUMERIC else _categorical(key, raw)
            tails[key] = environment_tail(key, value)
        except InvalidValue as exc:
            raise InvalidValue(
                message=f"line {line_no}: {exc.message}",
                subject=key,
                invalid_value=raw,
                valid_values=exc.valid_values,
                line=line_no,
            ) from exc

    missing = [name for name in relations if name not in tails]
    if missing:
        logger.info("RECOMMEND description leaves %s unset; rows encoded as missing", missing)
    return tails


def read_description(path: Union[str, Path]) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(message=f"Cannot read environment description '{path}': {exc}", subject=str(path)) from exc


@dataclass(frozen=True)
class Recommendation:
    rank: int
    waveform_id: str
    probability: float
    score: float


def score_description(
    description: Union[str, Mapping[str, str]],
    model: WaveformRecommender,
    store: CwkgStore,
) -> ScoreVector:
    tails = parse_environment(description, store)
    features = HeadFeatures.from_entities(QUERY_HEAD, Side.ENVIRONMENT, model.environment_relations, tails)
    encoder = BlockEncoder(Side.ENVIRONMENT, model.environment_relations, [features], model.numeric, model.embedder)
    scores = model.score_matrix(encoder)[0]
    return ScoreVector(QUERY_HEAD, list(model.waveform_ids), scores, softmax_probabilities(scores))


def recommend(
    description: Union[str, Mapping[str, str]],
    model: WaveformRecommender,
    store: CwkgStore,
    top_k: int = 5,
) -> List[Recommendation]:
    """Top-k waveforms by softmax probability for an ad-hoc environment."""
    if top_k < 1:
        raise InvalidValue(message=f"top_k must be at least 1, got {top_k}", invalid_value=str(top_k))
    vector = score_description(description, model, store)
    if top_k > vector.M:
        logger.warning("RECOMMEND top_k=%d exceeds %d waveforms; clamped", top_k, vector.M)
        top_k = vector.M

    ranked = vector.ranking()[:top_k]
    results = [
        Recommendation(rank, vector.waveform_ids[i], float(vector.probabilities[i]), float(vector.scores[i]))
        for rank, i in enumerate(ranked, start=1)
    ]
    logger.info("RECOMMEND top1=%s p=%.4f of M=%d", results[0].waveform_id, results[0].probability, vector.M)
    return results
