# Backend/WaveformEngine/config.py

"""
Run configuration.

TrainConfig holds every hyperparameter of a training run and round-trips
through the key=value manifest stored next to each checkpoint. RunConfig adds
the paths the CLI works with.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from .cwkg_store import parse_ratio
from .ere import format_mode, parse_mode
from .errors import InvalidValue, UnknownMode


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    epochs: int = Field(20, ge=0)
    lr: float = Field(0.001, gt=0)
    bpr_sign: Literal["consistent", "paper"] = "consistent"
    ere_mode: str = "invo_then_attn"
    heads: int = Field(3, ge=1)
    kernel_size: int = Field(5, ge=1)
    groups: int = Field(1, ge=1)
    phi_hidden: Optional[int] = Field(None, ge=1)
    leaky_slope: float = 0.01
    scale_by_sqrt_d: bool = False
    emb_dim: int = Field(16, ge=1)
    seed: int = 0
    alternation: Literal["epoch", "batch"] = "epoch"
    freeze_embeddings_in_L2: bool = True
    l2_objective: Literal["pairwise", "softmax"] = "pairwise"
    batch_size: int = Field(256, ge=1)
    krl_batch_size: int = Field(1024, ge=1)
    mlp_hidden: List[int] = Field(default_factory=lambda: [64, 32])
    split: str = "10:2"
    k_list: List[int] = Field(default_factory=lambda: [1, 3, 5])

    @field_validator("kernel_size")
    @classmethod
    def _odd_kernel(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {value}")
        return value

    @field_validator("ere_mode")
    @classmethod
    def _known_mode(cls, value: str) -> str:
        try:
            parse_mode(value)
        except UnknownMode as exc:
            raise ValueError(exc.message) from exc
        return value.strip()

    @field_validator("split")
    @classmethod
    def _ratio(cls, value: str) -> str:
        try:
            train, test = parse_ratio(value)
        except InvalidValue as exc:
            raise ValueError(exc.message) from exc
        if train <= 0 or test < 0:
            raise ValueError(f"split must be a positive train share and non-negative test share, got {value}")
        return f"{train}:{test}"

    @field_validator("mlp_hidden", "k_list", mode="before")
    @classmethod
    def _int_list(cls, value):
        if isinstance(value, str):
            return [int(part) for part in value.split(",") if part.strip()]
        return value

    @field_validator("mlp_hidden", "k_list")
    @classmethod
    def _positive_entries(cls, value: List[int]) -> List[int]:
        if not value or any(v < 1 for v in value):
            raise ValueError("expected a non-empty list of positive integers")
        return value

    @property
    def resolved_mode(self) -> str:
        """Mode string with the head count filled in, e.g. 'invo_then_attn(3)'."""
        name, heads = parse_mode(self.ere_mode, self.heads)
        return format_mode(name, heads)

    @property
    def ratio(self):
        return parse_ratio(self.split)

    def to_manifest(self) -> Dict[str, str]:
        values: Dict[str, str] = {}
        for name, value in self.model_dump().items():
            if value is None:
                continue
            if isinstance(value, bool):
                values[name] = "true" if value else "false"
            elif isinstance(value, list):
                values[name] = ",".join(str(v) for v in value)
            else:
                values[name] = str(value)
        return values

    @classmethod
    def from_manifest(cls, values: Dict[str, str]) -> "TrainConfig":
        known = {k: v for k, v in values.items() if k in cls.model_fields}
        return cls(**known)


class RunConfig(TrainConfig):
    kg_path: Optional[Path] = None
    checkpoint_dir: Optional[Path] = None
    report_dir: Optional[Path] = None
    oracle_config: Optional[Path] = None

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{k: v for k, v in self.model_dump().items() if k in TrainConfig.model_fields})
