# Backend/WaveformEngine/cf_train.py

"""
Training and evaluation of the recommender.

Each epoch alternates two Adam-optimized objectives:

    L1  BPR over WKG + EKG + train-EWBG triples (TransD tables)
    L2  cross-entropy over train-EWBG positives and as many sampled negatives
        (numeric directions, enhancement stacks and the MLP)

Evaluation ranks all M waveforms per test environment with softmax(s_u) and
counts a hit when the top-k meets the environment's full available set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import zip_longest
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
from tqdm import tqdm

from .config import TrainConfig
from .cwkg_store import CwkgStore, EntityKind, Side, Subgraph, Triple, split_ewbg
from .errors import (
    DivergenceDetected,
    EmptyTestSet,
    NoNegativeAvailable,
    NonFiniteGradient,
    NonFiniteValue,
    UnbalancedBatch,
    UnknownEntity,
)
from .krl import BlockEncoder, NegativeSampler, bpr_from_scores, transd_scores
from .model import WaveformRecommender
from .numerics import (
    Adam,
    Tape,
    Tensor,
    clip,
    log,
    log_softmax,
    mul,
    sigmoid,
    sub,
    sum_,
)
from .seeding import seeded_rng


logger = logging.getLogger("wavepilot.train")

PROB_FLOOR = 1e-12
PROB_TINY = float(np.finfo(np.float64).tiny)
DIVERGENCE_FACTOR = 10.0


# --------------------------------------------------------------------------------------
# Scores and losses
# --------------------------------------------------------------------------------------


def softmax_probabilities(scores: np.ndarray) -> np.ndarray:
    """Row softmax; entries that would underflow are floored at the smallest positive float."""
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return np.maximum(e / e.sum(axis=-1, keepdims=True), PROB_TINY)


@dataclass
class ScoreVector:
    env_id: str
    waveform_ids: List[str]
    scores: np.ndarray
    probabilities: np.ndarray

    @property
    def M(self) -> int:
        return len(self.waveform_ids)

    def ranking(self) -> np.ndarray:
        """Waveform rows best first by score; equal scores keep id order."""
        return np.argsort(-self.scores, kind="stable")


def environment_encoder(model: WaveformRecommender, store: CwkgStore, env_ids: Sequence[str]) -> Tuple[BlockEncoder, np.ndarray]:
    """Encoder and row index covering env_ids, reusing the model's own when possible."""
    if all(env in model.environments.index for env in env_ids):
        return model.environments, model.environments.rows_of(env_ids)
    for env in env_ids:
        if store.entity(env).kind is not EntityKind.ENVIRONMENT_HEAD:
            raise UnknownEntity(message=f"'{env}' is not an environment", subject=env)
    encoder = BlockEncoder.for_store(store, Side.ENVIRONMENT, model.numeric, model.embedder, heads=env_ids)
    return encoder, np.arange(len(env_ids))


def score_all(env_id: str, store: CwkgStore, model: WaveformRecommender, cached: bool = True) -> ScoreVector:
    encoder, index = environment_encoder(model, store, [env_id])
    scores = model.score_matrix(encoder, index, cached=cached)[0]
    return ScoreVector(env_id, list(model.waveform_ids), scores, softmax_probabilities(scores))


def ce_from_scores(scores: Tensor, labels: np.ndarray) -> Tensor:
    """-sum y ln p + (1 - y) ln(1 - p) with p = sigmoid(s) clamped to [1e-12, 1 - 1e-12]."""
    labels = np.asarray(labels, dtype=float)
    positives = int((labels == 1).sum())
    negatives = int((labels == 0).sum())
    if positives != negatives or positives + negatives != labels.size:
        raise UnbalancedBatch(
            message=f"Batch must hold equal positives and negatives, got {positives}/{negatives}",
            invalid_value=f"{positives}/{negatives}",
        )
    p = clip(sigmoid(scores), PROB_FLOOR, 1.0 - PROB_FLOOR)
    positive_term = sum_(mul(log(p), labels))
    negative_term = sum_(mul(log(sub(1.0, p)), 1.0 - labels))
    return mul(positive_term + negative_term, -1.0)


def ce_loss(batch: Sequence[Tuple[str, str, int]], model: WaveformRecommender) -> Tensor:
    envs = model.environments.rows_of(u for u, _, _ in batch)
    wfs = model.waveforms.rows_of(v for _, v, _ in batch)
    labels = np.array([y for _, _, y in batch], dtype=float)
    return ce_from_scores(model.pair_scores(envs, wfs), labels)


def softmax_ce(scores: Tensor, positive_rows: np.ndarray) -> Tensor:
    """-sum ln softmax(s_u)[v+] over the batch."""
    onehot = np.zeros(scores.shape)
    onehot[np.arange(scores.shape[0]), positive_rows] = 1.0
    return mul(sum_(mul(log_softmax(scores, axis=-1), onehot)), -1.0)


# --------------------------------------------------------------------------------------
# CF negatives
# --------------------------------------------------------------------------------------


class CfNegativeSampler:
    """Draws, per environment row, a waveform it has no train-EWBG edge to."""

    def __init__(self, linked: np.ndarray, max_redraws: int = 16):
        self.linked = linked
        self.max_redraws = max_redraws
        self.open_counts = (~linked).sum(axis=1)

    def sample(self, env_rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if (self.open_counts[env_rows] == 0).any():
            raise NoNegativeAvailable(message="An environment is linked to every waveform")
        m = self.linked.shape[1]
        picks = rng.integers(m, size=len(env_rows))
        bad = self.linked[env_rows, picks]
        for _ in range(self.max_redraws):
            if not bad.any():
                return picks
            picks[bad] = rng.integers(m, size=int(bad.sum()))
            bad = self.linked[env_rows, picks]
        for i in np.nonzero(bad)[0]:
            free = np.nonzero(~self.linked[env_rows[i]])[0]
            picks[i] = free[rng.integers(len(free))]
        return picks


def linked_matrix(env_ids: Sequence[str], waveform_ids: Sequence[str], edges: Sequence[Triple]) -> np.ndarray:
    env_row = {e: i for i, e in enumerate(env_ids)}
    wf_row = {w: i for i, w in enumerate(waveform_ids)}
    linked = np.zeros((len(env_ids), len(waveform_ids)), dtype=bool)
    for t in edges:
        if t.head in env_row and t.tail in wf_row:
            linked[env_row[t.head], wf_row[t.tail]] = True
    return linked


def sample_cf_negatives(
    positives: Sequence[Tuple[str, str]],
    store: CwkgStore,
    seed: int,
    train_edges: Optional[Sequence[Triple]] = None,
) -> List[Tuple[str, str]]:
    """One (u, v-) per positive (u, v+), v- uniform over waveforms with no training edge to u."""
    waveform_ids = store.heads(EntityKind.WAVEFORM_HEAD)
    env_ids = sorted({u for u, _ in positives})
    edges = train_edges if train_edges is not None else store.triples_in(Subgraph.EWBG)
    linked = linked_matrix(env_ids, waveform_ids, edges)
    full = [env_ids[i] for i in np.nonzero(linked.all(axis=1))[0]]
    if full:
        raise NoNegativeAvailable(
            message=f"Environment '{full[0]}' is available with every waveform",
            subject=full[0],
        )
    env_row = {e: i for i, e in enumerate(env_ids)}
    rows = np.array([env_row[u] for u, _ in positives], dtype=np.int64)
    picks = CfNegativeSampler(linked).sample(rows, seeded_rng(seed, 0xCF, 1))
    return [(u, waveform_ids[int(p)]) for (u, _), p in zip(positives, picks)]


# --------------------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------------------


@dataclass
class EvalReport:
    hit_at_1: float = 0.0
    hit_at_k: Dict[int, float] = field(default_factory=dict)
    l1_curve: List[float] = field(default_factory=list)
    l2_curve: List[float] = field(default_factory=list)
    hit_curve: List[float] = field(default_factory=list)
    config: Dict[str, str] = field(default_factory=dict)
    seed: int = 0
    n_test: int = 0
    trailing_hit_at_1: Optional[float] = None
    converged_epoch: Optional[int] = None

    def metrics(self) -> Dict[str, str]:
        values: Dict[str, str] = {"hit@1": f"{self.hit_at_1:.4f}"}
        for k in sorted(self.hit_at_k):
            values[f"hit@{k}"] = f"{self.hit_at_k[k]:.4f}"
        if self.trailing_hit_at_1 is not None:
            values["hit@1_trailing"] = f"{self.trailing_hit_at_1:.4f}"
        if self.converged_epoch is not None:
            values["converged_epoch"] = str(self.converged_epoch)
        values["test_environments"] = str(self.n_test)
        values["epochs"] = str(len(self.l1_curve))
        if self.l1_curve:
            values["l1_final"] = f"{self.l1_curve[-1]:.6f}"
            values["l2_final"] = f"{self.l2_curve[-1]:.6f}"
        values["seed"] = str(self.seed)
        return values


def hit_rates(
    scores: np.ndarray,
    available: Sequence[Set[int]],
    k_list: Sequence[int],
) -> Dict[int, float]:
    """
    Hit@k over rows of a (B, M) score matrix. Columns must be in waveform id
    order; ties go to the smaller id.
    """
    m = scores.shape[1]
    order = np.argsort(-scores, axis=1, kind="stable")
    rates: Dict[int, float] = {}
    for k in k_list:
        kk = min(int(k), m)
        hits = sum(1 for row, avail in zip(order, available) if avail.intersection(row[:kk].tolist()))
        rates[int(k)] = hits / len(available)
    return rates


def evaluate(
    model: WaveformRecommender,
    test_triples: Sequence[Triple],
    store: CwkgStore,
    k_list: Sequence[int] = (1, 3, 5),
    chunk: int = 512,
) -> EvalReport:
    """Hit@k over the environments of test_triples, judged against their full EWBG sets."""
    env_ids = sorted({t.head for t in test_triples})
    if not env_ids:
        raise EmptyTestSet(message="No test environments to evaluate")

    wf_row = {w: i for i, w in enumerate(model.waveform_ids)}
    available = [{wf_row[w] for w in store.feasible_set(env) if w in wf_row} for env in env_ids]
    encoder, rows = environment_encoder(model, store, env_ids)
    scores = np.concatenate(
        [model.score_matrix(encoder, rows[i : i + chunk]) for i in range(0, len(rows), chunk)]
    )
    ks = sorted(set(int(k) for k in k_list) | {1})
    rates = hit_rates(scores, available, ks)
    return EvalReport(
        hit_at_1=rates[1],
        hit_at_k=rates,
        config=model.config.to_manifest(),
        seed=model.config.seed,
        n_test=len(env_ids),
    )


# --------------------------------------------------------------------------------------
# Convergence helpers
# --------------------------------------------------------------------------------------


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if len(values) < window:
        return np.array([])
    return np.convolve(values, np.ones(window) / window, mode="valid")


def trailing_average(
    curve: Sequence[float],
    window: int = 20,
    tolerance: float = 0.002,
    span: int = 100,
) -> Tuple[Optional[float], Optional[int]]:
    """
    (average, convergence epoch) of a Hit@1 curve.

    Convergence is the first epoch where the window-epoch moving average moves
    by less than tolerance; the average covers the following span epochs (or
    as many as exist). Returns (None, None) when the curve never settles.
    """
    averaged = moving_average(curve, window)
    if len(averaged) < 2:
        return None, None
    steps = np.abs(np.diff(averaged))
    settled = np.nonzero(steps < tolerance)[0]
    if not len(settled):
        return None, None
    converged = int(settled[0]) + window
    tail = list(curve[converged : converged + span])
    if not tail:
        return None, converged
    return float(np.mean(tail)), converged


def loss_trend_ok(curve: Sequence[float], window: int = 20, slack: float = 1e-9) -> bool:
    """Non-increasing trend over the trailing window (least-squares slope <= slack)."""
    tail = np.asarray(curve[-window:], dtype=float)
    if len(tail) < 2:
        return True
    slope = np.polyfit(np.arange(len(tail)), tail, 1)[0]
    return bool(slope <= slack)


# --------------------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: WaveformRecommender
    report: EvalReport
    train_edges: List[Triple]
    test_edges: List[Triple]


class _Trainer:
    def __init__(self, store: CwkgStore, cfg: TrainConfig, train_edges: List[Triple]):
        self.cfg = cfg
        self.model = WaveformRecommender(store, cfg)
        model = self.model

        l1_triples = store.triples_in(Subgraph.WKG) + store.triples_in(Subgraph.EKG) + list(train_edges)
        self.krl_sampler = NegativeSampler(store, model.transd, l1_triples)

        env_ids = model.environments.heads
        linked = linked_matrix(env_ids, model.waveform_ids, train_edges)
        open_rows = ~linked.all(axis=1)
        env_row = {e: i for i, e in enumerate(env_ids)}
        wf_row = {w: i for i, w in enumerate(model.waveform_ids)}
        pairs = [(env_row[t.head], wf_row[t.tail]) for t in train_edges]
        kept = [(u, v) for u, v in pairs if open_rows[u]]
        if len(kept) < len(pairs):
            logger.info("TRAIN skipping %d positives of environments available with every waveform", len(pairs) - len(kept))
        self.pos_env = np.array([u for u, _ in kept], dtype=np.int64)
        self.pos_wf = np.array([v for _, v in kept], dtype=np.int64)
        self.cf_sampler = CfNegativeSampler(linked)

        self.krl_opt = Adam(model.krl_parameters(), lr=cfg.lr)
        self.cf_opt = Adam(model.cf_parameters(), lr=cfg.lr)

    def krl_step(self, index: np.ndarray, rng: np.random.Generator) -> Optional[Tuple[float, int]]:
        s = self.krl_sampler
        neg_h, neg_t, ok_h, ok_t = s.sample(index, rng)
        h, r, t = s.heads[index], s.relations[index], s.tails[index]
        pos = (np.concatenate([h[ok_h], h[ok_t]]), np.concatenate([r[ok_h], r[ok_t]]), np.concatenate([t[ok_h], t[ok_t]]))
        neg = (np.concatenate([neg_h[ok_h], h[ok_t]]), pos[1], np.concatenate([t[ok_h], neg_t[ok_t]]))
        if not len(pos[0]):
            return None

        self.krl_opt.zero_grad()
        with Tape() as tape:
            loss = bpr_from_scores(
                transd_scores(self.model.transd, *pos),
                transd_scores(self.model.transd, *neg),
                self.cfg.bpr_sign,
            )
        tape.backward(loss)
        self.krl_opt.step()
        self.model.bump()
        return float(loss.data), len(pos[0])

    def cf_step(self, index: np.ndarray, rng: np.random.Generator) -> Tuple[float, int]:
        env = self.pos_env[index]
        wf = self.pos_wf[index]
        self.cf_opt.zero_grad()
        with Tape() as tape:
            if self.cfg.l2_objective == "softmax":
                z_u = self.model.environment_reps(index=env)
                scores = self.model.score_rows(z_u, self.model.waveform_reps())
                loss = softmax_ce(scores, wf)
                count = len(env)
            else:
                neg = self.cf_sampler.sample(env, rng)
                envs = np.concatenate([env, env])
                wfs = np.concatenate([wf, neg])
                labels = np.concatenate([np.ones(len(env)), np.zeros(len(env))])
                loss = ce_from_scores(self.model.pair_scores(envs, wfs), labels)
                count = len(envs)
        tape.backward(loss)
        self.cf_opt.step()
        self.model.bump()
        return float(loss.data), count

    def epoch(self, epoch: int) -> Tuple[float, float]:
        cfg = self.cfg
        rng = seeded_rng(cfg.seed, 0xE0, epoch)
        krl_order = rng.permutation(len(self.krl_sampler))
        cf_order = rng.permutation(len(self.pos_env))
        krl_batches = [("krl", krl_order[i : i + cfg.krl_batch_size]) for i in range(0, len(krl_order), cfg.krl_batch_size)]
        cf_batches = [("cf", cf_order[i : i + cfg.batch_size]) for i in range(0, len(cf_order), cfg.batch_size)]

        if cfg.alternation == "batch":
            schedule = [step for pair in zip_longest(krl_batches, cf_batches) for step in pair if step is not None]
        else:
            schedule = krl_batches + cf_batches

        totals = {"krl": [0.0, 0], "cf": [0.0, 0]}
        for kind, index in schedule:
            out = self.krl_step(index, rng) if kind == "krl" else self.cf_step(index, rng)
            if out is None:
                continue
            loss, count = out
            # krl losses are batch means, cf losses are batch sums
            totals[kind][0] += loss * count if kind == "krl" else loss
            totals[kind][1] += count

        l1 = totals["krl"][0] / max(totals["krl"][1], 1)
        l2 = totals["cf"][0] / max(totals["cf"][1], 1)
        return l1, l2


def _check_divergence(curve: List[float], name: str, epoch: int) -> None:
    value = curve[-1]
    if not np.isfinite(value):
        raise DivergenceDetected(message=f"{name} became non-finite at epoch {epoch}", subject=name)
    initial = curve[0]
    if initial > 0 and value > DIVERGENCE_FACTOR * initial:
        raise DivergenceDetected(
            message=f"{name} diverged at epoch {epoch}: {value:.4g} > {DIVERGENCE_FACTOR:g} x initial {initial:.4g}",
            subject=name,
            invalid_value=f"{value:.6g}",
        )


def train(store: CwkgStore, cfg: TrainConfig, progress: bool = False) -> TrainResult:
    """
    Split the EWBG by environment, train for cfg.epochs alternating epochs and
    evaluate on the held-out environments. With a test split the Hit@1 of every
    epoch is recorded as well.
    """
    train_edges, test_edges = split_ewbg(store, cfg.ratio, cfg.seed)
    trainer = _Trainer(store, cfg, train_edges)
    model = trainer.model
    test_envs = sorted({t.head for t in test_edges})

    report = EvalReport(config=cfg.to_manifest(), seed=cfg.seed, n_test=len(test_envs))
    logger.info(
        "TRAIN start mode=%s epochs=%d lr=%g seed=%d l1_triples=%d l2_positives=%d",
        cfg.resolved_mode,
        cfg.epochs,
        cfg.lr,
        cfg.seed,
        len(trainer.krl_sampler),
        len(trainer.pos_env),
    )

    for epoch in tqdm(range(cfg.epochs), desc="train", disable=not progress, leave=False):
        try:
            l1, l2 = trainer.epoch(epoch)
        except (NonFiniteValue, NonFiniteGradient) as exc:
            logger.error("TRAIN numeric failure at epoch %d: %s", epoch, exc.message)
            raise DivergenceDetected(message=f"Training diverged at epoch {epoch}: {exc.message}") from exc

        report.l1_curve.append(l1)
        report.l2_curve.append(l2)
        _check_divergence(report.l1_curve, "L1", epoch)
        _check_divergence(report.l2_curve, "L2", epoch)

        hit = None
        if test_envs:
            hit = evaluate(model, test_edges, store, k_list=(1,)).hit_at_1
            report.hit_curve.append(hit)
        logger.info(
            "TRAIN epoch=%d l1=%.4f l2=%.4f hit@1=%s",
            epoch,
            l1,
            l2,
            f"{hit:.4f}" if hit is not None else "-",
        )

    if test_envs:
        final = evaluate(model, test_edges, store, cfg.k_list)
        report.hit_at_1 = final.hit_at_1
        report.hit_at_k = final.hit_at_k
        report.trailing_hit_at_1, report.converged_epoch = trailing_average(report.hit_curve)

    return TrainResult(model, report, train_edges, test_edges)
