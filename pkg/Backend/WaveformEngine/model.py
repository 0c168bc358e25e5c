# Backend/WaveformEngine/model.py

"""
The full scoring pipeline: blocks -> enhancement -> MLP collaborative filter.

    s_uv = h . MLP(Z_u (+) Z_v)

A WaveformRecommender is bound to the store it was built from: entity tables
and block encoders follow that store's sorted ids, which is also what makes a
checkpoint loadable again.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

import numpy as np

from .config import TrainConfig
from .cwkg_store import CwkgStore, Side
from .ere import EreSettings, EreStack, InvolutionConfig
from .errors import ParseError, ShapeMismatch
from .krl import BlockEncoder, HashTextEmbedder, NumericChannel, TextEmbedder, TransDParams
from .numerics import (
    Module,
    Param,
    Tensor,
    concat,
    glorot_param,
    leaky_relu,
    linear,
    load_checkpoint,
    mul,
    read_manifest,
    reshape,
    save_checkpoint,
    sum_,
    take,
    uniform_param,
    write_manifest,
)
from .seeding import seeded_rng


logger = logging.getLogger("wavepilot.model")

CHECKPOINT_FILE = "model.ckpt"
MANIFEST_FILE = "manifest.txt"
CHECKPOINT_FORMAT = "wavepilot-checkpoint-1"


# --------------------------------------------------------------------------------------
# MLP
# --------------------------------------------------------------------------------------


@dataclass(frozen=True)
class MlpConfig:
    widths: List[int]
    activation: Literal["leaky_relu", "identity"] = "leaky_relu"
    leaky_slope: float = 0.01

    def validate(self) -> None:
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ShapeMismatch(message=f"MLP needs at least one layer of positive width, got {self.widths}")


class Mlp(Module):
    def __init__(self, cfg: MlpConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.weights = [
            glorot_param(rng, d_in, d_out, f"w{i}")
            for i, (d_in, d_out) in enumerate(zip(cfg.widths[:-1], cfg.widths[1:]))
        ]
        self.biases = [Param(np.zeros(d_out), f"b{i}") for i, d_out in enumerate(cfg.widths[1:])]
        last = cfg.widths[-1]
        self.h = uniform_param(rng, (last,), math.sqrt(6.0 / (last + 1)), "h")

    @property
    def d_in(self) -> int:
        return self.cfg.widths[0]


def cf_score(z_u: Tensor, z_v: Tensor, mlp: Mlp) -> Tensor:
    """Scores for matching rows of Z_u and Z_v; concatenation order is (u, v)."""
    x = concat([z_u, z_v], axis=-1)
    if x.shape[-1] != mlp.d_in:
        raise ShapeMismatch(
            message=f"cf_score expects {mlp.d_in} inputs, got {z_u.shape[-1]} + {z_v.shape[-1]}",
            subject="cf_score",
        )
    for w, b in zip(mlp.weights, mlp.biases):
        x = linear(x, w, b)
        if mlp.cfg.activation == "leaky_relu":
            x = leaky_relu(x, mlp.cfg.leaky_slope)
    return sum_(mul(x, mlp.h), axis=-1)


# --------------------------------------------------------------------------------------
# Recommender
# --------------------------------------------------------------------------------------


class WaveformRecommender(Module):
    def __init__(self, store: CwkgStore, cfg: TrainConfig, embedder: Optional[TextEmbedder] = None):
        self.config = cfg
        self.transd = TransDParams.for_store(store, cfg.emb_dim, cfg.seed)
        self.numeric = NumericChannel(store.schema, cfg.emb_dim, cfg.seed)

        settings = EreSettings(
            heads=cfg.heads,
            involution=InvolutionConfig(cfg.kernel_size, cfg.groups, cfg.phi_hidden, cfg.leaky_slope),
            scale_by_sqrt_d=cfg.scale_by_sqrt_d,
        )
        n_v = len(store.relations(Side.WAVEFORM))
        n_u = len(store.relations(Side.ENVIRONMENT))
        self.ere_waveform = EreStack(cfg.ere_mode, n_v, cfg.emb_dim, 3, settings, cfg.seed, 1)
        self.ere_environment = EreStack(cfg.ere_mode, n_u, cfg.emb_dim, 2, settings, cfg.seed, 2)

        widths = [self.ere_environment.output_length + self.ere_waveform.output_length] + list(cfg.mlp_hidden)
        self.mlp = Mlp(MlpConfig(widths, "leaky_relu", cfg.leaky_slope), seeded_rng(cfg.seed, 0xCF))

        self.embedder = embedder or HashTextEmbedder(cfg.emb_dim)
        self.environment_relations = store.relations(Side.ENVIRONMENT)
        self.waveforms = BlockEncoder.for_store(store, Side.WAVEFORM, self.numeric, self.embedder, self.transd)
        self.environments = BlockEncoder.for_store(store, Side.ENVIRONMENT, self.numeric, self.embedder)
        self.version = 0
        self._waveform_cache: Optional[tuple] = None

    @property
    def waveform_ids(self) -> List[str]:
        return self.waveforms.heads

    # -------------------------- parameter groups ------------------------------------

    def krl_parameters(self) -> List[Param]:
        return self.transd.parameters()

    def cf_parameters(self) -> List[Param]:
        params = self.numeric.parameters() + self.ere_waveform.parameters()
        params += self.ere_environment.parameters() + self.mlp.parameters()
        if not self.config.freeze_embeddings_in_L2:
            params.append(self.transd.entity_e)
        return params

    def bump(self) -> None:
        """Mark parameters as changed; drops cached waveform representations."""
        self.version += 1
        self._waveform_cache = None

    # -------------------------- forward ---------------------------------------------

    def waveform_reps(self) -> Tensor:
        blocks = self.waveforms.assemble(freeze_transd=self.config.freeze_embeddings_in_L2)
        return self.ere_waveform(blocks)

    def cached_waveform_reps(self) -> Tensor:
        """Waveform Z_v for all M waveforms; pure given frozen params, so kept until bump()."""
        if self._waveform_cache is None or self._waveform_cache[0] != self.version:
            self._waveform_cache = (self.version, Tensor(self.waveform_reps().data))
        return self._waveform_cache[1]

    def environment_reps(self, encoder: Optional[BlockEncoder] = None, index: Optional[np.ndarray] = None) -> Tensor:
        encoder = encoder or self.environments
        return self.ere_environment(encoder.assemble(index))

    def pair_scores(self, env_index: np.ndarray, wf_index: np.ndarray) -> Tensor:
        """s_uv for aligned (environment row, waveform row) pairs; differentiable."""
        unique_envs, inverse = np.unique(env_index, return_inverse=True)
        z_u = take(self.environment_reps(index=unique_envs), inverse)
        z_v = take(self.waveform_reps(), wf_index)
        return cf_score(z_u, z_v, self.mlp)

    def score_rows(self, z_u: Tensor, z_v: Tensor) -> Tensor:
        """(B, M) scores of every environment row against every waveform row."""
        b, m = z_u.shape[0], z_v.shape[0]
        left = take(z_u, np.repeat(np.arange(b), m))
        right = take(z_v, np.tile(np.arange(m), b))
        return reshape(cf_score(left, right, self.mlp), (b, m))

    def score_matrix(self, encoder: Optional[BlockEncoder] = None, index: Optional[np.ndarray] = None, cached: bool = True) -> np.ndarray:
        z_v = self.cached_waveform_reps() if cached else Tensor(self.waveform_reps().data)
        z_u = self.environment_reps(encoder, index)
        return self.score_rows(z_u, z_v).data

    # -------------------------- persistence -----------------------------------------

    def _module_arrays(self) -> Dict[str, Module]:
        return {
            "ere/waveform/": self.ere_waveform,
            "ere/environment/": self.ere_environment,
            "mlp/": self.mlp,
        }

    def state_arrays(self) -> Dict[str, np.ndarray]:
        arrays = self.transd.state_arrays()
        arrays.update(self.numeric.state_arrays())
        for prefix, module in self._module_arrays().items():
            for name, param in module.named_parameters(prefix):
                arrays[name] = param.data
        return arrays

    def load_state(self, arrays: Dict[str, np.ndarray]) -> None:
        self.transd.load_state(arrays)
        self.numeric.load_state(arrays)
        for prefix, module in self._module_arrays().items():
            for name, param in module.named_parameters(prefix):
                if name not in arrays:
                    raise ParseError(message=f"Checkpoint has no array '{name}'", subject=name)
                if arrays[name].shape != param.data.shape:
                    raise ParseError(
                        message=f"Checkpoint array '{name}' has shape {arrays[name].shape}, expected {param.data.shape}",
                        subject=name,
                    )
                param.data[...] = arrays[name]
        self.bump()


def save_model(model: WaveformRecommender, directory: Union[str, Path], extra: Optional[Dict[str, object]] = None) -> Path:
    directory = Path(directory)
    save_checkpoint(directory / CHECKPOINT_FILE, model.state_arrays())
    manifest: Dict[str, object] = {"format": CHECKPOINT_FORMAT}
    manifest.update(model.config.to_manifest())
    manifest["waveforms"] = len(model.waveform_ids)
    manifest["entities"] = len(model.transd.entity_ids)
    manifest.update(extra or {})
    write_manifest(directory / MANIFEST_FILE, manifest)
    logger.info("CHECKPOINT saved dir=%s arrays=%d", directory, len(model.state_arrays()))
    return directory


def load_model(directory: Union[str, Path], store: CwkgStore, embedder: Optional[TextEmbedder] = None) -> WaveformRecommender:
    directory = Path(directory)
    manifest = read_manifest(directory / MANIFEST_FILE)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ParseError(
            message=f"'{directory}' does not hold a {CHECKPOINT_FORMAT} manifest",
            subject=str(directory),
            invalid_value=manifest.get("format"),
        )
    model = WaveformRecommender(store, TrainConfig.from_manifest(manifest), embedder)
    model.load_state(load_checkpoint(directory / CHECKPOINT_FILE))
    return model


def checkpoint_config(directory: Union[str, Path]) -> Dict[str, str]:
    return read_manifest(Path(directory) / MANIFEST_FILE)
