# Backend/test_krl.py

import logging

import numpy as np
import pytest

from Backend.conftest import assert_gradients_match
from Backend.WaveformEngine.cwkg_store import FEASIBLE, EntityKind, Side, Subgraph, Triple
from Backend.WaveformEngine.errors import (
    EmptyLabel,
    ExhaustedCandidates,
    InvalidValue,
    NonNumericRelation,
    ShapeMismatch,
    UnknownEntity,
)
from Backend.WaveformEngine.krl import (
    BlockEncoder,
    HashTextEmbedder,
    HeadFeatures,
    NegativeSampler,
    NumericChannel,
    TransDParams,
    assemble_block,
    bpr_from_scores,
    bpr_loss,
    numeric_embed,
    sample_negatives,
    text_embed,
    transd_distance,
    transd_project,
    transd_score,
    transd_scores,
)
from Backend.WaveformEngine.numerics import Adam, Tape, Tensor, grad_check
from Backend.WaveformEngine.synthlab import environment_tail


@pytest.fixture
def projected(toy_store, rng):
    params = TransDParams.for_store(toy_store, emb_dim=4, seed=0)
    params.entity_p.data[...] = rng.normal(scale=0.3, size=params.entity_p.shape)
    params.relation_p.data[...] = rng.normal(scale=0.3, size=params.relation_p.shape)
    return params


class TestTransD:
    def test_zero_projection_is_translation(self, rng):
        h, r, t = (rng.normal(size=4) for _ in range(3))
        zero = Tensor(np.zeros(4))
        out = transd_distance(Tensor(h), zero, Tensor(r), zero, Tensor(t), zero)
        assert out.item() == pytest.approx(float(np.sum((h + r - t) ** 2)))

    def test_projected_distance(self, rng):
        h, hp, r, rp, t, tp = (rng.normal(size=5) for _ in range(6))
        expected = np.sum(((h + rp * (hp @ h)) + r - (t + rp * (tp @ t))) ** 2)
        out = transd_distance(Tensor(h), Tensor(hp), Tensor(r), Tensor(rp), Tensor(t), Tensor(tp))
        assert out.item() == pytest.approx(float(expected))

    def test_projection_hand_examples(self):
        e = Tensor([1.0, 0.0])
        np.testing.assert_allclose(transd_project(e, Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).data, [1.0, 1.0])
        np.testing.assert_allclose(transd_project(e, Tensor([0.0, 0.0]), Tensor([0.0, 1.0])).data, [1.0, 0.0])
        np.testing.assert_allclose(transd_project(e, Tensor([1.0, 0.0]), Tensor([0.0, 0.0])).data, [1.0, 0.0])
        with pytest.raises(ShapeMismatch):
            transd_project(e, Tensor([1.0, 0.0, 0.0]), Tensor([0.0, 1.0]))

    def test_score_hand_examples(self):
        zero = Tensor([0.0, 0.0])
        same = transd_distance(Tensor([0.3, -0.2]), zero, zero, zero, Tensor([0.3, -0.2]), zero)
        assert same.item() == 0.0
        apart = transd_distance(Tensor([1.0, 0.0]), zero, zero, zero, Tensor([0.0, 1.0]), zero)
        assert apart.item() == pytest.approx(2.0)
        projected = transd_distance(
            Tensor([1.0, 0.0]), Tensor([1.0, 0.0]), Tensor([1.0, 0.0]), Tensor([0.0, 1.0]), Tensor([1.0, 1.0]), zero
        )
        assert projected.item() == pytest.approx(1.0)

    def test_tables_cover_store(self, toy_store):
        params = TransDParams.for_store(toy_store, emb_dim=4, seed=0)
        assert params.entity_ids == sorted(toy_store.entities)
        assert params.relation_names[-1] == FEASIBLE
        assert not params.entity_p.data.any()
        assert np.abs(params.entity_e.data).max() <= 0.5 / 2.0

    def test_single_triple_score(self, toy_store, projected):
        score = transd_score(Triple("E1", FEASIBLE, "W1", Subgraph.EWBG), projected)
        assert score.shape == ()
        assert score.item() >= 0.0


class TestNegatives:
    def test_filtered_and_deterministic(self, small_store):
        triple = small_store.triples_in(Subgraph.EKG)[0]
        pair = sample_negatives(triple, small_store, seed=4)
        assert pair == sample_negatives(triple, small_store, seed=4)
        assert not small_store.has_triple(*pair.neg_head.key)
        assert not small_store.has_triple(*pair.neg_tail.key)
        assert small_store.entity(pair.neg_head.head).kind is EntityKind.ENVIRONMENT_HEAD
        assert pair.neg_tail.tail.startswith(triple.relation + ":")

    def test_feasible_tail_pool_is_waveforms(self, small_store):
        triple = small_store.triples_in(Subgraph.EWBG)[0]
        try:
            pair = sample_negatives(triple, small_store, seed=0)
        except ExhaustedCandidates:
            pytest.skip("environment linked to every waveform")
        assert small_store.entity(pair.neg_tail.tail).kind is EntityKind.WAVEFORM_HEAD

    def test_exhausted(self, toy_store):
        # E2 is served by both waveforms, so no tail corruption exists
        with pytest.raises(ExhaustedCandidates):
            sample_negatives(Triple("E2", FEASIBLE, "W1", Subgraph.EWBG), toy_store, seed=0)

    def test_vectorized_sampler(self, small_store):
        params = TransDParams.for_store(small_store, emb_dim=4, seed=0)
        sampler = NegativeSampler(small_store, params, small_store.triples)
        index = np.arange(len(sampler))
        neg_h, neg_t, ok_h, ok_t = sampler.sample(index, np.random.default_rng(0))

        ids = params.entity_ids
        for i in np.nonzero(ok_h)[0][:200]:
            t = small_store.triples[i]
            assert not small_store.has_triple(ids[neg_h[i]], t.relation, t.tail)
        for i in np.nonzero(ok_t)[0][:200]:
            t = small_store.triples[i]
            assert not small_store.has_triple(t.head, t.relation, ids[neg_t[i]])
        assert ok_h.mean() > 0.9


class TestBpr:
    def test_equal_scores(self):
        loss = bpr_from_scores(Tensor([1.0, 2.0]), Tensor([1.0, 2.0]))
        assert loss.item() == pytest.approx(np.log(2.0))

    def test_orientation(self):
        pos, neg = Tensor([0.1]), Tensor([9.0])
        assert bpr_from_scores(pos, neg, "consistent").item() < 1e-3
        assert bpr_from_scores(pos, neg, "paper").item() > 8.0
        with pytest.raises(InvalidValue):
            bpr_from_scores(pos, neg, "sideways")

    def test_gradients(self, toy_store, projected):
        pairs = [
            sample_negatives(t, toy_store, seed=1)
            for t in toy_store.triples_in(Subgraph.WKG)
            if t.head == "W1"
        ]
        report = grad_check(lambda: bpr_loss(pairs, projected), projected.parameters(), max_entries_per_param=40)
        assert_gradients_match(report)

    def test_empty(self, projected):
        with pytest.raises(ShapeMismatch):
            bpr_loss([], projected)


class TestChannels:
    def test_text_vectors(self):
        embedder = HashTextEmbedder(8)
        vec = embedder.embed("QPSK")
        assert np.linalg.norm(vec) == pytest.approx(1.0)
        np.testing.assert_array_equal(vec, HashTextEmbedder(8).embed(" QPSK "))
        np.testing.assert_array_equal(text_embed("QPSK", 8), vec)
        assert not np.allclose(vec, embedder.embed("BPSK"))
        with pytest.raises(EmptyLabel):
            embedder.embed("   ")

    def test_numeric_embedding(self, toy_store, caplog):
        channel = NumericChannel(toy_store.schema, emb_dim=4, seed=0)
        jsr = toy_store.relation("jsr_db")
        direction = channel.directions.data[channel.index["jsr_db"]]
        np.testing.assert_allclose(numeric_embed(25.0, jsr, channel).data, 0.5 * direction)

        with caplog.at_level(logging.WARNING, logger="wavepilot.krl"):
            clamped = numeric_embed(80.0, jsr, channel)
        np.testing.assert_allclose(clamped.data, direction)
        assert "clamped" in caplog.text

        with pytest.raises(NonNumericRelation):
            numeric_embed(1.0, toy_store.relation("crc"), channel)


class TestBlocks:
    def test_shapes(self, small_store):
        transd = TransDParams.for_store(small_store, emb_dim=4, seed=0)
        numeric = NumericChannel(small_store.schema, emb_dim=4, seed=0)
        embedder = HashTextEmbedder(4)
        wf = BlockEncoder.for_store(small_store, Side.WAVEFORM, numeric, embedder, transd)
        env = BlockEncoder.for_store(small_store, Side.ENVIRONMENT, numeric, embedder)
        assert wf.assemble().shape == (10, 7, 4, 3)
        assert env.assemble().shape == (60, 8, 4, 2)

    def test_waveform_channels(self, toy_store):
        transd = TransDParams.for_store(toy_store, emb_dim=4, seed=0)
        numeric = NumericChannel(toy_store.schema, emb_dim=4, seed=0)
        embedder = HashTextEmbedder(4)
        block = assemble_block("W1", toy_store, numeric, embedder, transd)
        data = block.data.data

        # row 1 is modulation: categorical, so no numeric channel
        assert not data[1, :, 0].any()
        np.testing.assert_array_equal(data[1, :, 1], transd.entity_e.data[transd.entity_index["modulation:QPSK"]])
        np.testing.assert_array_equal(data[1, :, 2], embedder.embed("QPSK"))
        # row 3 is coding rate 1/3 on [0, 1]
        np.testing.assert_allclose(data[3, :, 0], numeric.directions.data[numeric.index["coding_rate"]] / 3.0)

    def test_missing_rows_are_zero(self, toy_store):
        numeric = NumericChannel(toy_store.schema, emb_dim=4, seed=0)
        relations = toy_store.relations(Side.ENVIRONMENT)
        features = HeadFeatures.from_entities(
            "query", Side.ENVIRONMENT, relations, {"jsr_db": environment_tail("jsr_db", 33.0)}
        )
        encoder = BlockEncoder(Side.ENVIRONMENT, relations, [features], numeric, HashTextEmbedder(4))
        block = encoder.block("query")
        jsr_row = [rel.name for rel in relations].index("jsr_db")
        assert block.missing_mask.sum() == len(relations) - 1
        assert not np.delete(block.data.data, jsr_row, axis=0).any()
        assert block.data.data[jsr_row].any()

    def test_environment_blocks_ignore_transd(self, toy_store):
        numeric = NumericChannel(toy_store.schema, emb_dim=4, seed=0)
        first = assemble_block("E1", toy_store, numeric, HashTextEmbedder(4))
        assert first.channels == 2
        with pytest.raises(ShapeMismatch):
            assemble_block("W1", toy_store, numeric, HashTextEmbedder(4))

    def test_tail_is_not_a_head(self, toy_store):
        numeric = NumericChannel(toy_store.schema, emb_dim=4, seed=0)
        with pytest.raises(UnknownEntity):
            assemble_block("crc:CRC-64", toy_store, numeric, HashTextEmbedder(4))


class TestTransDLearning:
    def ordered_fraction(self, sampler, params, rng):
        index = np.arange(len(sampler))
        neg_h, neg_t, ok_h, ok_t = sampler.sample(index, rng)
        h, r, t = sampler.heads, sampler.relations, sampler.tails
        pos = transd_scores(params, h, r, t).data
        by_head = transd_scores(params, neg_h, r, t).data
        by_tail = transd_scores(params, h, r, neg_t).data
        pos_all = np.concatenate([pos[ok_h], pos[ok_t]])
        neg_all = np.concatenate([by_head[ok_h], by_tail[ok_t]])
        return float(np.mean(pos_all < neg_all)), float(pos_all.mean()), float(neg_all.mean())

    def test_true_triples_score_below_corruptions(self, toy_store):
        assert len(toy_store.triples) <= 50
        params = TransDParams.for_store(toy_store, emb_dim=8, seed=0)
        sampler = NegativeSampler(toy_store, params, toy_store.triples)
        opt = Adam(params.parameters(), lr=0.02)
        index = np.arange(len(sampler))
        rng = np.random.default_rng(5)

        losses = []
        for _ in range(400):
            neg_h, neg_t, ok_h, ok_t = sampler.sample(index, rng)
            h, r, t = sampler.heads, sampler.relations, sampler.tails
            pos = (np.concatenate([h[ok_h], h[ok_t]]), np.concatenate([r[ok_h], r[ok_t]]), np.concatenate([t[ok_h], t[ok_t]]))
            neg = (np.concatenate([neg_h[ok_h], h[ok_t]]), pos[1], np.concatenate([t[ok_h], neg_t[ok_t]]))
            opt.zero_grad()
            with Tape() as tape:
                loss = bpr_from_scores(transd_scores(params, *pos), transd_scores(params, *neg))
            tape.backward(loss)
            opt.step()
            losses.append(float(loss.data))

        ordered, pos_mean, neg_mean = self.ordered_fraction(sampler, params, np.random.default_rng(99))
        assert pos_mean < neg_mean
        assert ordered >= 0.95
        assert losses[-1] < min(losses[0], np.log(2.0))
