# Backend/conftest.py

from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from Backend.WaveformEngine.cf_train import train
from Backend.WaveformEngine.config import TrainConfig
from Backend.WaveformEngine.cwkg_store import FEASIBLE, CwkgStore, Subgraph, Triple
from Backend.WaveformEngine.settings import DEFAULT_ORACLE_CONFIG
from Backend.WaveformEngine.synthlab import (
    EnvironmentSpec,
    WaveformSpec,
    add_environment,
    add_waveform,
    gen_corpus,
    load_oracle_config,
    narrative_environment,
    narrative_waveform,
    oracle_feasible,
    table_schema,
)


REFERENCE_ENVIRONMENT = Path(__file__).parent / "WaveformEngine" / "reference_environment.txt"


def assert_gradients_match(report, abs_floor: float = 1e-7) -> None:
    """Relative error within tolerance, except where both gradients are ~0."""
    bad = [f for f in report.failures if abs(f.analytic - f.numeric) > abs_floor]
    assert not bad, f"gradient mismatches (max rel {report.max_rel_error:.2e}): {bad[:3]}"
    assert report.checked > 0


@pytest.fixture(scope="session")
def oracle():
    return load_oracle_config(DEFAULT_ORACLE_CONFIG)


def build_toy_store(cfg) -> CwkgStore:
    """
    Two waveforms, three environments.

    E1 (reference scenario) is served by W1 only, E2 (clean, slow) by both,
    E3 (deep fade under heavy multi-tone jamming) by neither.
    """
    store = CwkgStore(table_schema())
    waveforms = [
        narrative_waveform("W1"),
        WaveformSpec("W2", "BPSK", "RS", Fraction(2, 3), "CRC-4", False, False, 128e3),
    ]
    environments = [
        narrative_environment("E1"),
        EnvironmentSpec("E2", "Gaussian", "none", 0, 0.5, 0.0, 20.0, 64e3, -3),
        EnvironmentSpec("E3", "Rayleigh", "multi_tone", 4, 0.3, 40.0, 2.0, 1e6, -5),
    ]
    for wf in waveforms:
        add_waveform(store, wf)
    for env in environments:
        add_environment(store, env)
    for env in environments:
        for wf in waveforms:
            if oracle_feasible(env, wf, cfg):
                store.add_triple(Triple(env.id, FEASIBLE, wf.id, Subgraph.EWBG))
    return store


@pytest.fixture
def toy_store(oracle):
    cfg, _ = oracle
    return build_toy_store(cfg)


@pytest.fixture(scope="session")
def small_store(oracle):
    cfg, sampling = oracle
    return gen_corpus(10, 60, cfg, seed=11, sampling=sampling)


@pytest.fixture(scope="session")
def small_config():
    return TrainConfig(
        epochs=2,
        emb_dim=4,
        heads=1,
        kernel_size=3,
        mlp_hidden=[8],
        batch_size=64,
        krl_batch_size=256,
        seed=0,
    )


@pytest.fixture(scope="session")
def trained(small_store, small_config):
    return train(small_store, small_config)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
