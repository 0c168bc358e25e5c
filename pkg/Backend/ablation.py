# Backend/ablation.py
"""
Ablation harness for the enhancement stage, driven by `cli ablate`.

Three sweeps are trained on the same corpus and split:

    modes     krl_only, conv, attn(1), invo
    heads     attn(1), attn(3), attn(5), attn(8)
    cascades  invo_then_attn(1), attn_then_invo(1), invo_then_attn(3)

Each cell reports test Hit@1 averaged over the epochs after convergence
(final-epoch Hit@1, marked with *, when the curve never settles). Cells that
fail are kept in the table as incomplete.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from tqdm import tqdm

from Backend.WaveformEngine.config import TrainConfig
from Backend.WaveformEngine.cwkg_store import CwkgStore
from Backend.WaveformEngine.cf_train import train
from Backend.WaveformEngine.errors import WavePilotError
from Backend.WaveformEngine.reporting import format_table


logger = logging.getLogger("wavepilot.ablation")

SWEEPS: Dict[str, List[str]] = {
    "modes": ["krl_only", "conv", "attn(1)", "invo"],
    "heads": ["attn(1)", "attn(3)", "attn(5)", "attn(8)"],
    "cascades": ["invo_then_attn(1)", "attn_then_invo(1)", "invo_then_attn(3)"],
}

TOLERANCE = 0.01


@dataclass
class CellResult:
    sweep: str
    mode: str
    seed: int
    hit_at_1: Optional[float] = None
    converged: bool = False
    error: Optional[str] = None

    @property
    def complete(self) -> bool:
        return self.error is None and self.hit_at_1 is not None


@dataclass
class AblationResult:
    cells: List[CellResult] = field(default_factory=list)

    def value(self, mode: str, seed: int) -> Optional[float]:
        for cell in self.cells:
            if cell.mode == mode and cell.seed == seed and cell.complete:
                return cell.hit_at_1
        return None

    def mean(self, mode: str) -> Optional[float]:
        values = [c.hit_at_1 for c in self.cells if c.mode == mode and c.complete]
        return sum(values) / len(values) if values else None

    def seeds(self) -> List[int]:
        return sorted({c.seed for c in self.cells})


def run_cell(store: CwkgStore, base: TrainConfig, sweep: str, mode: str, seed: int) -> CellResult:
    """Train one (mode, seed) cell and reduce it to a single Hit@1 value."""
    cfg = base.model_copy(update={"ere_mode": mode, "seed": seed})
    try:
        result = train(store, cfg)
    except WavePilotError as exc:
        logger.error("ABLATE cell failed sweep=%s mode=%s seed=%d: %s", sweep, mode, seed, exc.message)
        return CellResult(sweep, mode, seed, error=f"{type(exc).__name__}: {exc.message}")

    report = result.report
    if report.trailing_hit_at_1 is not None:
        return CellResult(sweep, mode, seed, report.trailing_hit_at_1, converged=True)
    return CellResult(sweep, mode, seed, report.hit_at_1, converged=False)


def run_ablation(
    store: CwkgStore,
    base: TrainConfig,
    sweeps: Sequence[str] = tuple(SWEEPS),
    seeds: Sequence[int] = (0,),
    workers: int = 1,
    progress: bool = False,
) -> AblationResult:
    jobs: List[Tuple[str, str, int]] = []
    seen = set()
    for sweep in sweeps:
        for mode in SWEEPS[sweep]:
            for seed in seeds:
                # attn(1) sits in two sweeps; train it once per seed
                if (mode, seed) in seen:
                    continue
                seen.add((mode, seed))
                jobs.append((sweep, mode, seed))

    run: Callable[[Tuple[str, str, int]], CellResult] = lambda job: run_cell(store, base, *job)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cells = list(tqdm(pool.map(run, jobs), total=len(jobs), desc="ablate", disable=not progress))
    else:
        cells = [run(job) for job in tqdm(jobs, desc="ablate", disable=not progress)]
    return AblationResult(cells)


# --------------------------------------------------------------------------------------
# Orderings
# --------------------------------------------------------------------------------------


def _majority(result: AblationResult, predicate: Callable[[int], Optional[bool]]) -> Optional[bool]:
    votes = [predicate(seed) for seed in result.seeds()]
    votes = [v for v in votes if v is not None]
    if not votes:
        return None
    return sum(votes) * 2 > len(votes)


def check_orderings(result: AblationResult, tol: float = TOLERANCE) -> Dict[str, Optional[bool]]:
    """Expected orderings, each decided by majority over seeds; None when cells are missing."""

    def ge(a: str, b: str) -> Callable[[int], Optional[bool]]:
        def check(seed: int) -> Optional[bool]:
            va, vb = result.value(a, seed), result.value(b, seed)
            return None if va is None or vb is None else va + tol >= vb

        return check

    def non_decreasing(modes: Sequence[str]) -> Callable[[int], Optional[bool]]:
        def check(seed: int) -> Optional[bool]:
            values = [result.value(m, seed) for m in modes]
            if any(v is None for v in values):
                return None
            return all(later + tol >= earlier for earlier, later in zip(values, values[1:]))

        return check

    def best(mode: str, among: Sequence[str]) -> Callable[[int], Optional[bool]]:
        def check(seed: int) -> Optional[bool]:
            values = {m: result.value(m, seed) for m in among}
            if any(v is None for v in values.values()):
                return None
            return all(values[mode] + tol >= v for v in values.values())

        return check

    return {
        "attn(1) >= krl_only": _majority(result, ge("attn(1)", "krl_only")),
        "invo >= krl_only": _majority(result, ge("invo", "krl_only")),
        "hit@1 non-decreasing in heads": _majority(result, non_decreasing(SWEEPS["heads"])),
        "invo_then_attn(3) best cascade": _majority(result, best("invo_then_attn(3)", SWEEPS["cascades"])),
    }


def print_report(result: AblationResult, sweeps: Sequence[str] = tuple(SWEEPS)) -> None:
    seeds = result.seeds()
    print("=" * 72)
    print(f"WavePilot ablation: {len(result.cells)} cells, seeds {seeds}")
    print("=" * 72)
    print()

    for sweep in sweeps:
        rows = []
        for mode in SWEEPS[sweep]:
            row = [mode]
            for seed in seeds:
                cell = next((c for c in result.cells if c.mode == mode and c.seed == seed), None)
                if cell is None or not cell.complete:
                    row.append("incomplete")
                else:
                    row.append(f"{cell.hit_at_1:.4f}" + ("" if cell.converged else "*"))
            mean = result.mean(mode)
            row.append("-" if mean is None else f"{mean:.4f}")
            rows.append(row)
        header = ["mode"] + [f"seed {s}" for s in seeds] + ["mean"]
        print(format_table(f"Hit@1 by {sweep}", rows, header))
        print()

    for claim, verdict in check_orderings(result).items():
        status = {True: "PASS", False: "FAIL", None: "INCOMPLETE"}[verdict]
        print(f"[{status}] {claim}")

    failures = [c for c in result.cells if c.error]
    if failures:
        print()
        for cell in failures:
            print(f"    ERROR {cell.mode} seed {cell.seed}: {cell.error}")
