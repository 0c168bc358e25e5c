# Backend/test_synthlab.py

from dataclasses import replace
from fractions import Fraction

import pytest

from Backend.WaveformEngine.cwkg_store import FEASIBLE, CwkgStore, EntityKind, Subgraph, Triple, dumps
from Backend.WaveformEngine.errors import DegenerateCorpus, InvalidValue, ParseError, SchemaViolation
from Backend.WaveformEngine.synthlab import (
    MODULATIONS,
    EnvironmentSpec,
    SamplingConfig,
    corpus_stats,
    dumps_oracle_config,
    environment_spec_from_store,
    gen_corpus,
    loads_oracle_config,
    narrative_environment,
    narrative_waveform,
    oracle_feasible,
    oracle_margin,
    recount_ewbg,
    waveform_spec_from_store,
)


class TestOracle:
    def test_reference_scenario_margin(self, oracle):
        cfg, _ = oracle
        # 4 - 9.6 + 7.5 - 0 - max(0, 15 - 20)
        assert oracle_margin(narrative_environment(), narrative_waveform(), cfg) == pytest.approx(1.9)
        assert oracle_feasible(narrative_environment(), narrative_waveform(), cfg)

    def test_rate_requirement(self, oracle):
        cfg, _ = oracle
        slow = replace(narrative_waveform(), supported_rate_bps=2e6)
        assert not oracle_feasible(narrative_environment(), slow, cfg)

    def test_suppression_matters_under_jamming(self, oracle):
        cfg, _ = oracle
        plain = replace(narrative_waveform(), jamming_suppression=False)
        assert oracle_margin(narrative_environment(), plain, cfg) == pytest.approx(1.9 - 15.0)

    def test_no_jamming_no_penalty(self, oracle):
        cfg, _ = oracle
        env = replace(narrative_environment(), jamming_type="none", num_tones=0, jsr_db=40.0)
        assert oracle_margin(env, narrative_waveform(), cfg) == pytest.approx(4 - 9.6 + 7.5)


class TestOracleConfig:
    def test_dump_and_reload(self, oracle):
        cfg, _ = oracle
        reloaded, _ = loads_oracle_config(dumps_oracle_config(cfg))
        assert reloaded == cfg
        assert cfg.coding_gain_db[("Turbo", Fraction(1, 3))] == 7.5

    def test_missing_slope(self, oracle):
        cfg, _ = oracle
        text = "\n".join(l for l in dumps_oracle_config(cfg).splitlines() if not l.startswith("jsr_penalty_slope"))
        with pytest.raises(SchemaViolation):
            loads_oracle_config(text)

    def test_missing_table_entry(self, oracle):
        cfg, _ = oracle
        text = "\n".join(l for l in dumps_oracle_config(cfg).splitlines() if "base_threshold_db.MSK" not in l)
        with pytest.raises(SchemaViolation):
            loads_oracle_config(text)

    def test_unknown_key(self, oracle):
        cfg, _ = oracle
        with pytest.raises(ParseError) as info:
            loads_oracle_config(dumps_oracle_config(cfg) + "bogus_table.x = 1\n")
        assert info.value.line is not None


class TestSpecs:
    def test_tone_count_must_match_jamming(self):
        env = EnvironmentSpec("E", "Gaussian", "single_tone", 2, 0.1, 30.0, 4.0, 5e6, -6)
        with pytest.raises(InvalidValue):
            env.validate()

    def test_specs_rebuild_from_triples(self, toy_store):
        assert waveform_spec_from_store(toy_store, "W1") == narrative_waveform("W1")
        assert environment_spec_from_store(toy_store, "E1") == narrative_environment("E1")


class TestGenCorpus:
    def test_every_environment_is_served(self, small_store, oracle):
        cfg, _ = oracle
        for env in small_store.heads(EntityKind.ENVIRONMENT_HEAD):
            assert small_store.feasible_set(env)
        assert recount_ewbg(small_store, cfg) == 0

    def test_ids_and_counts(self, small_store):
        stats = corpus_stats(small_store)
        assert stats["waveforms"] == 10
        assert stats["environments"] == 60
        assert stats["wkg_triples"] == 10 * 7
        assert stats["ekg_triples"] == 60 * 8
        assert 0.0 < stats["ewbg_density"] <= 1.0
        assert small_store.heads(EntityKind.WAVEFORM_HEAD)[0] == "W001"
        assert small_store.heads(EntityKind.ENVIRONMENT_HEAD)[-1] == "E060"

    def test_same_seed_same_bytes(self, oracle):
        cfg, sampling = oracle
        first = gen_corpus(4, 12, cfg, seed=3, sampling=sampling)
        second = gen_corpus(4, 12, cfg, seed=3, sampling=sampling, workers=3)
        assert dumps(first) == dumps(second)

    def test_seed_changes_corpus(self, oracle):
        cfg, sampling = oracle
        assert dumps(gen_corpus(4, 12, cfg, seed=3, sampling=sampling)) != dumps(
            gen_corpus(4, 12, cfg, seed=4, sampling=sampling)
        )

    def test_too_small(self, oracle):
        cfg, _ = oracle
        with pytest.raises(InvalidValue):
            gen_corpus(1, 10, cfg, seed=0)

    def test_unsatisfiable_oracle(self, oracle):
        cfg, sampling = oracle
        hopeless = replace(cfg, base_threshold_db={mod: 100.0 for mod in MODULATIONS})
        with pytest.raises(DegenerateCorpus):
            gen_corpus(3, 3, hopeless, seed=0, sampling=sampling, max_retries=2)

    def test_ewbg_edges_are_feasible_only(self, small_store):
        for t in small_store.triples_in(Subgraph.EWBG):
            assert t.relation == "feasible"

    def test_everything_feasible_links_every_pair(self, oracle):
        cfg, _ = oracle
        generous = replace(cfg, base_threshold_db={mod: -100.0 for mod in MODULATIONS})
        sampling = SamplingConfig(waveform_rates_bps=[32e6], environment_rates_bps=[64e3])
        store = gen_corpus(2, 2, generous, seed=0, sampling=sampling)
        assert len(store.triples_in(Subgraph.EWBG)) == 4


def without_edge(store, env_id, wf_id):
    copy = CwkgStore(store.schema)
    for entity in store.entities.values():
        copy.add_entity(entity)
    for t in store.triples:
        if (t.head, t.relation, t.tail) != (env_id, FEASIBLE, wf_id):
            copy.add_triple(t)
    return copy


class TestRecount:
    def test_dropped_edge_is_one_disagreement(self, toy_store, oracle):
        cfg, _ = oracle
        assert recount_ewbg(toy_store, cfg) == 0
        assert recount_ewbg(without_edge(toy_store, "E1", "W1"), cfg) == 1

    def test_flipped_pair_is_one_disagreement(self, toy_store, oracle):
        cfg, _ = oracle
        toy_store.add_triple(Triple("E3", FEASIBLE, "W1", Subgraph.EWBG))
        assert recount_ewbg(toy_store, cfg) == 1


class TestOracleMonotonicity:
    def pairs(self, store):
        waveforms = [waveform_spec_from_store(store, w) for w in store.heads(EntityKind.WAVEFORM_HEAD)]
        envs = [environment_spec_from_store(store, e) for e in store.heads(EntityKind.ENVIRONMENT_HEAD)[:12]]
        return [(env, wf) for env in envs for wf in waveforms]

    def test_more_ebn0_never_hurts(self, small_store, oracle):
        cfg, _ = oracle
        for env, wf in self.pairs(small_store):
            verdicts = [oracle_feasible(replace(env, ebn0_db=float(v)), wf, cfg) for v in range(-10, 31, 2)]
            assert verdicts == sorted(verdicts)

    def test_more_jamming_never_helps(self, small_store, oracle):
        cfg, _ = oracle
        for env, wf in self.pairs(small_store):
            verdicts = [oracle_feasible(replace(env, jsr_db=float(v)), wf, cfg) for v in range(0, 61, 3)]
            assert verdicts == sorted(verdicts, reverse=True)
