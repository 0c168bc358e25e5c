# Backend/WaveformEngine/synthlab.py

"""
Synthetic CWKG corpora with ground-truth feasibility labels.

Waveforms and environments are sampled from the relation vocabulary, encoded as
WKG / EKG triples, and linked by EWBG "feasible" edges wherever a linear
dB-margin oracle says the waveform meets the environment's QoS requirement.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .cwkg_store import (
    FEASIBLE,
    CwkgStore,
    Entity,
    EntityKind,
    RelationDef,
    RelationKind,
    Side,
    Subgraph,
    Triple,
)
from .errors import (
    DegenerateCorpus,
    InvalidValue,
    IoFailure,
    ParseError,
    SchemaViolation,
    SpecReconstructionError,
)
from .seeding import seeded_rng


logger = logging.getLogger("wavepilot.synthlab")


# --------------------------------------------------------------------------------------
# Vocabulary
# --------------------------------------------------------------------------------------


MODULATIONS: Tuple[str, ...] = ("BPSK", "QPSK", "MSK", "16QAM")
CODING_TYPES: Tuple[str, ...] = ("RS", "Turbo", "LDPC")
CODING_RATES: Tuple[Fraction, ...] = (Fraction(2, 3), Fraction(1, 2), Fraction(1, 3))
CRCS: Tuple[str, ...] = ("CRC-4", "CRC-8", "CRC-64")
CHANNEL_TYPES: Tuple[str, ...] = ("Gaussian", "Rician", "Rayleigh")
JAMMING_TYPES: Tuple[str, ...] = ("none", "single_tone", "multi_tone", "partial_band", "gaussian_pulse")

JAMMING_LABELS: Dict[str, str] = {
    "none": "no jamming",
    "single_tone": "single-tone",
    "multi_tone": "multi-tone",
    "partial_band": "partial-band",
    "gaussian_pulse": "Gaussian pulse",
}


# Waveform relations, in feature-row order
CRC = "crc"
MODULATION = "modulation"
CODING_TYPE = "coding_type"
CODING_RATE = "coding_rate"
JAMMING_SUPPRESSION = "jamming_suppression"
SOFT_DEMODULATION = "soft_demodulation"
BIT_RATE = "bit_rate_bps"

# Environment relations, in feature-row order
CHANNEL_TYPE = "channel_type"
JAMMING_TYPE = "jamming_type"
NUM_TONES = "num_tones"
BANDWIDTH_FACTOR = "bandwidth_factor"
JSR = "jsr_db"
EBN0 = "ebn0_db"
REQUIRED_RATE = "required_rate_bps"
REQUIRED_BER = "required_ber_exponent"


def table_schema() -> List[RelationDef]:
    """Relation schema for both sides."""
    wf, env = Side.WAVEFORM, Side.ENVIRONMENT
    cat, num, boolean = RelationKind.CATEGORICAL, RelationKind.NUMERIC, RelationKind.BOOLEAN
    return [
        RelationDef(CRC, cat, wf, 0),
        RelationDef(MODULATION, cat, wf, 1),
        RelationDef(CODING_TYPE, cat, wf, 2),
        RelationDef(CODING_RATE, num, wf, 3, value_range=(0.0, 1.0)),
        RelationDef(JAMMING_SUPPRESSION, boolean, wf, 4),
        RelationDef(SOFT_DEMODULATION, boolean, wf, 5),
        RelationDef(BIT_RATE, num, wf, 6, units="bps", value_range=(0.0, 40_000_000.0)),
        RelationDef(CHANNEL_TYPE, cat, env, 0),
        RelationDef(JAMMING_TYPE, cat, env, 1),
        RelationDef(NUM_TONES, num, env, 2, value_range=(0.0, 16.0)),
        RelationDef(BANDWIDTH_FACTOR, num, env, 3, value_range=(0.0, 1.0)),
        RelationDef(JSR, num, env, 4, units="dB", value_range=(0.0, 50.0)),
        RelationDef(EBN0, num, env, 5, units="dB", value_range=(-5.0, 25.0)),
        RelationDef(REQUIRED_RATE, num, env, 6, units="bps", value_range=(0.0, 40_000_000.0)),
        RelationDef(REQUIRED_BER, num, env, 7, value_range=(-9.0, -2.0)),
    ]


# --------------------------------------------------------------------------------------
# Specs
# --------------------------------------------------------------------------------------


@dataclass(frozen=True)
class WaveformSpec:
    id: str
    modulation: str
    coding_type: str
    coding_rate: Fraction
    crc: str
    jamming_suppression: bool
    soft_demodulation: bool
    supported_rate_bps: float

    def validate(self) -> None:
        _check_choice("modulation", self.modulation, MODULATIONS)
        _check_choice("coding_type", self.coding_type, CODING_TYPES)
        _check_choice("coding_rate", self.coding_rate, CODING_RATES)
        _check_choice("crc", self.crc, CRCS)
        if not (self.supported_rate_bps > 0 and math.isfinite(self.supported_rate_bps)):
            raise InvalidValue(
                message=f"Waveform '{self.id}' needs a positive supported rate",
                subject=self.id,
                invalid_value=str(self.supported_rate_bps),
            )


@dataclass(frozen=True)
class EnvironmentSpec:
    id: str
    channel_type: str
    jamming_type: str
    num_tones: int
    bandwidth_factor: float
    jsr_db: float
    ebn0_db: float
    required_rate_bps: float
    required_ber_exponent: int

    def validate(self) -> None:
        _check_choice("channel_type", self.channel_type, CHANNEL_TYPES)
        _check_choice("jamming_type", self.jamming_type, JAMMING_TYPES)
        if self.num_tones < 0:
            raise InvalidValue(message="num_tones must be >= 0", subject=self.id, invalid_value=str(self.num_tones))
        if (self.num_tones == 1) != (self.jamming_type == "single_tone"):
            raise InvalidValue(
                message="num_tones is 1 exactly for single-tone jamming",
                subject=self.id,
                invalid_value=str(self.num_tones),
            )
        if (self.num_tones > 1) != (self.jamming_type == "multi_tone"):
            raise InvalidValue(
                message="num_tones is > 1 exactly for multi-tone jamming",
                subject=self.id,
                invalid_value=str(self.num_tones),
            )
        if not 0.0 <= self.bandwidth_factor <= 1.0:
            raise InvalidValue(
                message="bandwidth_factor must lie in [0, 1]",
                subject=self.id,
                invalid_value=str(self.bandwidth_factor),
            )
        if not self.required_rate_bps > 0:
            raise InvalidValue(message="required rate must be positive", subject=self.id)
        if not self.required_ber_exponent < 0:
            raise InvalidValue(message="BER exponent must be negative", subject=self.id)


def _check_choice(name: str, value: Any, choices: Sequence[Any]) -> None:
    if value not in choices:
        raise InvalidValue(
            message=f"Invalid {name} [{value}]",
            subject=name,
            invalid_value=str(value),
            valid_values=[str(c) for c in choices],
        )


# --------------------------------------------------------------------------------------
# Oracle configuration
# --------------------------------------------------------------------------------------


@dataclass
class OracleConfig:
    base_threshold_db: Dict[str, float]
    coding_gain_db: Dict[Tuple[str, Fraction], float]
    channel_penalty_db: Dict[str, float]
    suppression_gain_db: Dict[str, float]
    jsr_penalty_slope: float

    def validate(self) -> None:
        _check_total("base_threshold_db", self.base_threshold_db, MODULATIONS)
        _check_total(
            "coding_gain_db",
            self.coding_gain_db,
            [(code, rate) for code in CODING_TYPES for rate in CODING_RATES],
        )
        _check_total("channel_penalty_db", self.channel_penalty_db, CHANNEL_TYPES)
        _check_total("suppression_gain_db", self.suppression_gain_db, JAMMING_TYPES)
        if not math.isfinite(self.jsr_penalty_slope):
            raise SchemaViolation(message="jsr_penalty_slope must be finite")


@dataclass
class SamplingConfig:
    waveform_rates_bps: List[float] = field(
        default_factory=lambda: [128e3, 512e3, 2e6, 6.8246e6, 16e6, 32e6]
    )
    environment_rates_bps: List[float] = field(
        default_factory=lambda: [64e3, 128e3, 1e6, 2e6, 5e6, 10e6]
    )
    jsr_db: List[float] = field(default_factory=lambda: [float(v) for v in range(0, 45, 5)])
    ebn0_db: List[float] = field(default_factory=lambda: [float(v) for v in range(0, 21)])
    ber_exponents: List[int] = field(default_factory=lambda: [-3, -4, -5, -6, -7])
    max_tones: int = 8
    suppression_probability: float = 0.5
    soft_demodulation_probability: float = 0.5


def _check_total(name: str, table: Dict[Any, float], domain: Sequence[Any]) -> None:
    missing = [key for key in domain if key not in table]
    if missing:
        raise SchemaViolation(
            message=f"Oracle table '{name}' is missing entries: {missing}",
            subject=name,
            valid_values=[str(k) for k in domain],
        )
    bad = [key for key, value in table.items() if not math.isfinite(value)]
    if bad:
        raise SchemaViolation(message=f"Oracle table '{name}' has non-finite entries: {bad}", subject=name)


def _parse_kv(text: str, source: str) -> Dict[str, Tuple[str, int]]:
    entries: Dict[str, Tuple[str, int]] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(
                message=f"{source} line {line_no}: expected 'key = value'",
                invalid_value=line,
                line=line_no,
            )
        key, value = (part.strip() for part in line.split("=", 1))
        entries[key] = (value, line_no)
    return entries


def _float(value: str, line_no: int, key: str) -> float:
    try:
        return float(Fraction(value)) if "/" in value else float(value)
    except (ValueError, ZeroDivisionError):
        raise ParseError(message=f"line {line_no}: '{key}' is not a number", invalid_value=value, line=line_no)


def _float_list(value: str, line_no: int, key: str) -> List[float]:
    return [_float(item.strip(), line_no, key) for item in value.split(",") if item.strip()]


def loads_oracle_config(text: str, source: str = "oracle config") -> Tuple[OracleConfig, SamplingConfig]:
    entries = _parse_kv(text, source)

    base: Dict[str, float] = {}
    gains: Dict[Tuple[str, Fraction], float] = {}
    channel: Dict[str, float] = {}
    suppression: Dict[str, float] = {}
    slope: Optional[float] = None
    sampling = SamplingConfig()

    for key, (value, line_no) in entries.items():
        parts = key.split(".")
        table = parts[0]
        if table == "base_threshold_db" and len(parts) == 2:
            base[parts[1]] = _float(value, line_no, key)
        elif table == "coding_gain_db" and len(parts) == 3:
            gains[(parts[1], Fraction(parts[2]))] = _float(value, line_no, key)
        elif table == "channel_penalty_db" and len(parts) == 2:
            channel[parts[1]] = _float(value, line_no, key)
        elif table == "suppression_gain_db" and len(parts) == 2:
            suppression[parts[1]] = _float(value, line_no, key)
        elif key == "jsr_penalty_slope":
            slope = _float(value, line_no, key)
        elif table == "sample" and len(parts) == 2 and hasattr(sampling, parts[1]):
            current = getattr(sampling, parts[1])
            if isinstance(current, list):
                items = _float_list(value, line_no, key)
                if parts[1] == "ber_exponents":
                    items = [int(v) for v in items]
                setattr(sampling, parts[1], items)
            elif isinstance(current, int) and not isinstance(current, bool):
                setattr(sampling, parts[1], int(_float(value, line_no, key)))
            else:
                setattr(sampling, parts[1], _float(value, line_no, key))
        else:
            raise ParseError(
                message=f"{source} line {line_no}: unknown key '{key}'",
                invalid_value=key,
                line=line_no,
            )

    if slope is None:
        raise SchemaViolation(message=f"{source}: jsr_penalty_slope is required")

    cfg = OracleConfig(base, gains, channel, suppression, slope)
    cfg.validate()
    return cfg, sampling


def load_oracle_config(path: Union[str, Path]) -> Tuple[OracleConfig, SamplingConfig]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(message=f"Cannot read oracle config '{path}': {exc}", subject=str(path)) from exc
    return loads_oracle_config(text, source=str(path))


def dumps_oracle_config(cfg: OracleConfig) -> str:
    lines = [f"base_threshold_db.{mod} = {cfg.base_threshold_db[mod]!r}" for mod in MODULATIONS]
    lines += [
        f"coding_gain_db.{code}.{rate} = {cfg.coding_gain_db[(code, rate)]!r}"
        for code in CODING_TYPES
        for rate in CODING_RATES
    ]
    lines += [f"channel_penalty_db.{ch} = {cfg.channel_penalty_db[ch]!r}" for ch in CHANNEL_TYPES]
    lines += [f"suppression_gain_db.{jam} = {cfg.suppression_gain_db[jam]!r}" for jam in JAMMING_TYPES]
    lines.append(f"jsr_penalty_slope = {cfg.jsr_penalty_slope!r}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------------------
# Oracle
# --------------------------------------------------------------------------------------


def oracle_margin(env: EnvironmentSpec, wf: WaveformSpec, cfg: OracleConfig) -> float:
    """Link margin in dB; >= 0 means the waveform closes the link."""
    if env.jamming_type == "none":
        jam_penalty = 0.0
    else:
        suppression = cfg.suppression_gain_db[env.jamming_type] if wf.jamming_suppression else 0.0
        jam_penalty = max(0.0, cfg.jsr_penalty_slope * env.jsr_db - suppression)

    return (
        env.ebn0_db
        - cfg.base_threshold_db[wf.modulation]
        + cfg.coding_gain_db[(wf.coding_type, wf.coding_rate)]
        - cfg.channel_penalty_db[env.channel_type]
        - jam_penalty
    )


def oracle_feasible(env: EnvironmentSpec, wf: WaveformSpec, cfg: OracleConfig) -> bool:
    if wf.supported_rate_bps < env.required_rate_bps:
        return False
    return oracle_margin(env, wf, cfg) >= 0.0


def narrative_environment(env_id: str = "E_ref") -> EnvironmentSpec:
    """AWGN, single-tone jamming at 30 dB JSR, 5 Mbps at BER 1e-6, Eb/N0 4 dB."""
    return EnvironmentSpec(
        id=env_id,
        channel_type="Gaussian",
        jamming_type="single_tone",
        num_tones=1,
        bandwidth_factor=0.1,
        jsr_db=30.0,
        ebn0_db=4.0,
        required_rate_bps=5e6,
        required_ber_exponent=-6,
    )


def narrative_waveform(wf_id: str = "W_ref") -> WaveformSpec:
    """OFDM-class candidate: CRC-64, QPSK, 1/3 Turbo, soft demod, jamming suppression."""
    return WaveformSpec(
        id=wf_id,
        modulation="QPSK",
        coding_type="Turbo",
        coding_rate=Fraction(1, 3),
        crc="CRC-64",
        jamming_suppression=True,
        soft_demodulation=True,
        supported_rate_bps=6.8246e6,
    )


# --------------------------------------------------------------------------------------
# Spec <-> triples
# --------------------------------------------------------------------------------------


def _num_token(value: float) -> str:
    value = float(value)
    return str(int(value)) if value.is_integer() else repr(value)


def rate_label(bps: float) -> str:
    for scale, unit in ((1e9, "Gbps"), (1e6, "Mbps"), (1e3, "kbps")):
        if bps >= scale:
            return f"{bps / scale:g} {unit}"
    return f"{bps:g} bps"


def _tail(relation: str, value: str, label: str, numeric: Optional[float] = None) -> Entity:
    return Entity(
        id=f"{relation}:{value}",
        kind=EntityKind.TAIL_VALUE,
        text_label=label,
        numeric_value=numeric,
    )


def waveform_tails(spec: WaveformSpec) -> List[Tuple[str, Entity]]:
    on_off = lambda flag: "on" if flag else "off"  # noqa: E731
    return [
        (CRC, _tail(CRC, spec.crc, spec.crc)),
        (MODULATION, _tail(MODULATION, spec.modulation, spec.modulation)),
        (CODING_TYPE, _tail(CODING_TYPE, spec.coding_type, spec.coding_type)),
        (CODING_RATE, _tail(CODING_RATE, str(spec.coding_rate), str(spec.coding_rate), float(spec.coding_rate))),
        (JAMMING_SUPPRESSION, _tail(JAMMING_SUPPRESSION, on_off(spec.jamming_suppression), on_off(spec.jamming_suppression))),
        (SOFT_DEMODULATION, _tail(SOFT_DEMODULATION, on_off(spec.soft_demodulation), on_off(spec.soft_demodulation))),
        (
            BIT_RATE,
            _tail(BIT_RATE, _num_token(spec.supported_rate_bps), rate_label(spec.supported_rate_bps), spec.supported_rate_bps),
        ),
    ]


def environment_tail(relation: str, value: Any) -> Entity:
    """Tail entity for one EKG feature value; shared by the corpus and ad-hoc queries."""
    if relation == CHANNEL_TYPE:
        return _tail(CHANNEL_TYPE, str(value), str(value))
    if relation == JAMMING_TYPE:
        return _tail(JAMMING_TYPE, str(value), JAMMING_LABELS.get(str(value), str(value)))
    if relation == NUM_TONES:
        return _tail(NUM_TONES, str(int(value)), f"{int(value)} tones", float(int(value)))
    if relation == BANDWIDTH_FACTOR:
        return _tail(BANDWIDTH_FACTOR, _num_token(value), f"bandwidth {float(value):g}", float(value))
    if relation == JSR:
        return _tail(JSR, _num_token(value), f"{float(value):g} dB JSR", float(value))
    if relation == EBN0:
        return _tail(EBN0, _num_token(value), f"{float(value):g} dB Eb/N0", float(value))
    if relation == REQUIRED_RATE:
        return _tail(REQUIRED_RATE, _num_token(value), rate_label(float(value)), float(value))
    if relation == REQUIRED_BER:
        return _tail(REQUIRED_BER, str(int(value)), f"BER 1e{int(value)}", float(int(value)))
    raise InvalidValue(message=f"'{relation}' is not an environment relation", invalid_value=relation)


def environment_tails(spec: EnvironmentSpec) -> List[Tuple[str, Entity]]:
    values = {
        CHANNEL_TYPE: spec.channel_type,
        JAMMING_TYPE: spec.jamming_type,
        NUM_TONES: spec.num_tones,
        BANDWIDTH_FACTOR: spec.bandwidth_factor,
        JSR: spec.jsr_db,
        EBN0: spec.ebn0_db,
        REQUIRED_RATE: spec.required_rate_bps,
        REQUIRED_BER: spec.required_ber_exponent,
    }
    return [(relation, environment_tail(relation, value)) for relation, value in values.items()]


def add_waveform(store: CwkgStore, spec: WaveformSpec) -> None:
    store.add_entity(Entity(spec.id, EntityKind.WAVEFORM_HEAD, spec.id))
    for relation, tail in waveform_tails(spec):
        store.add_entity(tail)
        store.add_triple(Triple(spec.id, relation, tail.id, Subgraph.WKG))


def add_environment(store: CwkgStore, spec: EnvironmentSpec) -> None:
    store.add_entity(Entity(spec.id, EntityKind.ENVIRONMENT_HEAD, spec.id))
    for relation, tail in environment_tails(spec):
        store.add_entity(tail)
        store.add_triple(Triple(spec.id, relation, tail.id, Subgraph.EKG))


def _feature_map(store: CwkgStore, head: str) -> Dict[str, Entity]:
    rows = store.feature_rows(head)
    missing = [row.relation for row in rows if row.missing]
    if missing:
        raise SpecReconstructionError(
            message=f"Head '{head}' lacks features {missing}",
            subject=head,
            valid_values=missing,
        )
    return {row.relation: store.entities[row.tail_id] for row in rows}


def _value_of(entity: Entity) -> str:
    return entity.id.split(":", 1)[1]


def waveform_spec_from_store(store: CwkgStore, head: str) -> WaveformSpec:
    features = _feature_map(store, head)
    try:
        spec = WaveformSpec(
            id=head,
            modulation=_value_of(features[MODULATION]),
            coding_type=_value_of(features[CODING_TYPE]),
            coding_rate=Fraction(_value_of(features[CODING_RATE])),
            crc=_value_of(features[CRC]),
            jamming_suppression=_value_of(features[JAMMING_SUPPRESSION]) == "on",
            soft_demodulation=_value_of(features[SOFT_DEMODULATION]) == "on",
            supported_rate_bps=float(features[BIT_RATE].numeric_value),
        )
        spec.validate()
    except (KeyError, ValueError, TypeError, IndexError, InvalidValue) as exc:
        raise SpecReconstructionError(message=f"Cannot rebuild waveform '{head}': {exc}", subject=head) from exc
    return spec


def environment_spec_from_store(store: CwkgStore, head: str) -> EnvironmentSpec:
    features = _feature_map(store, head)
    try:
        spec = EnvironmentSpec(
            id=head,
            channel_type=_value_of(features[CHANNEL_TYPE]),
            jamming_type=_value_of(features[JAMMING_TYPE]),
            num_tones=int(features[NUM_TONES].numeric_value),
            bandwidth_factor=float(features[BANDWIDTH_FACTOR].numeric_value),
            jsr_db=float(features[JSR].numeric_value),
            ebn0_db=float(features[EBN0].numeric_value),
            required_rate_bps=float(features[REQUIRED_RATE].numeric_value),
            required_ber_exponent=int(features[REQUIRED_BER].numeric_value),
        )
        spec.validate()
    except (KeyError, ValueError, TypeError, IndexError, InvalidValue) as exc:
        raise SpecReconstructionError(message=f"Cannot rebuild environment '{head}': {exc}", subject=head) from exc
    return spec


# --------------------------------------------------------------------------------------
# Sampling
# --------------------------------------------------------------------------------------


def sample_waveform(rng: np.random.Generator, wf_id: str, sampling: SamplingConfig) -> WaveformSpec:
    return WaveformSpec(
        id=wf_id,
        modulation=MODULATIONS[rng.integers(len(MODULATIONS))],
        coding_type=CODING_TYPES[rng.integers(len(CODING_TYPES))],
        coding_rate=CODING_RATES[rng.integers(len(CODING_RATES))],
        crc=CRCS[rng.integers(len(CRCS))],
        jamming_suppression=bool(rng.random() < sampling.suppression_probability),
        soft_demodulation=bool(rng.random() < sampling.soft_demodulation_probability),
        supported_rate_bps=float(sampling.waveform_rates_bps[rng.integers(len(sampling.waveform_rates_bps))]),
    )


def sample_environment(rng: np.random.Generator, env_id: str, sampling: SamplingConfig) -> EnvironmentSpec:
    jamming = JAMMING_TYPES[rng.integers(len(JAMMING_TYPES))]
    if jamming == "single_tone":
        tones = 1
    elif jamming == "multi_tone":
        tones = int(rng.integers(2, max(2, sampling.max_tones) + 1))
    else:
        tones = 0
    jsr = 0.0 if jamming == "none" else float(sampling.jsr_db[rng.integers(len(sampling.jsr_db))])

    return EnvironmentSpec(
        id=env_id,
        channel_type=CHANNEL_TYPES[rng.integers(len(CHANNEL_TYPES))],
        jamming_type=jamming,
        num_tones=tones,
        bandwidth_factor=float(rng.integers(1, 21)) / 20.0,
        jsr_db=jsr,
        ebn0_db=float(sampling.ebn0_db[rng.integers(len(sampling.ebn0_db))]),
        required_rate_bps=float(sampling.environment_rates_bps[rng.integers(len(sampling.environment_rates_bps))]),
        required_ber_exponent=int(sampling.ber_exponents[rng.integers(len(sampling.ber_exponents))]),
    )


# --------------------------------------------------------------------------------------
# Corpus generation
# --------------------------------------------------------------------------------------


def _id_width(count: int) -> int:
    return max(3, len(str(count)))


def _draw_environment(
    index: int,
    seed: int,
    waveforms: List[WaveformSpec],
    cfg: OracleConfig,
    sampling: SamplingConfig,
    max_retries: int,
    width: int,
) -> Tuple[EnvironmentSpec, List[str], int]:
    env_id = f"E{index + 1:0{width}d}"
    for attempt in range(max_retries):
        spec = sample_environment(seeded_rng(seed, 2, index, attempt), env_id, sampling)
        feasible = [wf.id for wf in waveforms if oracle_feasible(spec, wf, cfg)]
        if feasible:
            return spec, feasible, attempt
    raise DegenerateCorpus(
        message=(
            f"Environment '{env_id}' had no feasible waveform after {max_retries} draws; "
            "the oracle config leaves it unsatisfiable"
        ),
        subject=env_id,
    )


def gen_corpus(
    n_waveforms: int,
    n_environments: int,
    cfg: OracleConfig,
    seed: int,
    sampling: Optional[SamplingConfig] = None,
    max_retries: int = 64,
    workers: int = 1,
) -> CwkgStore:
    """
    Sample a corpus and label it with the oracle.

    Each environment draws from its own (seed, index, attempt) stream, so the
    output does not depend on how many workers are used.
    """
    if n_waveforms < 2 or n_environments < 2:
        raise InvalidValue(
            message=f"Need at least 2 waveforms and 2 environments, got {n_waveforms}/{n_environments}",
            invalid_value=f"{n_waveforms}/{n_environments}",
        )
    sampling = sampling or SamplingConfig()
    cfg.validate()

    wf_width = _id_width(n_waveforms)
    waveforms = [
        sample_waveform(seeded_rng(seed, 1, i), f"W{i + 1:0{wf_width}d}", sampling)
        for i in range(n_waveforms)
    ]

    env_width = _id_width(n_environments)
    draw = lambda i: _draw_environment(i, seed, waveforms, cfg, sampling, max_retries, env_width)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            drawn = list(pool.map(draw, range(n_environments)))
    else:
        drawn = [draw(i) for i in range(n_environments)]

    resampled = sum(1 for _, _, attempt in drawn if attempt)
    if resampled:
        logger.warning("SYNTH resampled %d environments with no feasible waveform", resampled)

    store = CwkgStore(table_schema())
    for wf in waveforms:
        add_waveform(store, wf)
    for env, _, _ in drawn:
        add_environment(store, env)
    for env, feasible, _ in drawn:
        for wf_id in feasible:
            store.add_triple(Triple(env.id, FEASIBLE, wf_id, Subgraph.EWBG))

    stats = corpus_stats(store)
    logger.info(
        "SYNTH waveforms=%d environments=%d ewbg=%d density=%.4f seed=%d",
        stats["waveforms"],
        stats["environments"],
        stats["ewbg_edges"],
        stats["ewbg_density"],
        seed,
    )
    return store


def corpus_stats(store: CwkgStore) -> Dict[str, Union[int, float]]:
    n_wf = len(store.heads(EntityKind.WAVEFORM_HEAD))
    n_env = len(store.heads(EntityKind.ENVIRONMENT_HEAD))
    n_edges = len(store.triples_in(Subgraph.EWBG))
    return {
        "waveforms": n_wf,
        "environments": n_env,
        "tail_values": len(store.heads(EntityKind.TAIL_VALUE)),
        "wkg_triples": len(store.triples_in(Subgraph.WKG)),
        "ekg_triples": len(store.triples_in(Subgraph.EKG)),
        "ewbg_edges": n_edges,
        "ewbg_density": n_edges / (n_wf * n_env) if n_wf and n_env else 0.0,
    }


def recount_ewbg(store: CwkgStore, cfg: OracleConfig) -> int:
    """Number of (environment, waveform) pairs where the stored EWBG and the oracle disagree."""
    waveforms = [waveform_spec_from_store(store, wf) for wf in store.heads(EntityKind.WAVEFORM_HEAD)]
    disagreements = 0
    for env_id in store.heads(EntityKind.ENVIRONMENT_HEAD):
        env = environment_spec_from_store(store, env_id)
        for wf in waveforms:
            if oracle_feasible(env, wf, cfg) != store.has_triple(env_id, FEASIBLE, wf.id):
                disagreements += 1
    return disagreements
