"""Training throughput measurement for the simplification ablation."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from .train import MetricsRow, TrainConfig, Trainer


@dataclass
class ThroughputWindow:
    start_iteration: int
    end_iteration: int
    iters_per_second: float
    mean_points: float


def windows_from_metrics(rows: List[MetricsRow],
                         window: int = 500) -> List[ThroughputWindow]:
    """Iterations-per-second time series from recorded wall times."""
    out = []
    for lo in range(0, len(rows) - window + 1, window):
        chunk = rows[lo:lo + window]
        dt = chunk[-1].wall_time - (rows[lo - 1].wall_time if lo else 0.0)
        if dt <= 0:
            continue
        out.append(ThroughputWindow(
            start_iteration=chunk[0].iteration,
            end_iteration=chunk[-1].iteration,
            iters_per_second=len(chunk) / dt,
            mean_points=float(np.mean([r.points for r in chunk])),
        ))
    return out


@dataclass
class BenchReport:
    simplified: List[ThroughputWindow]
    unsimplified: List[ThroughputWindow]
    simplified_rows: List[MetricsRow]
    unsimplified_rows: List[MetricsRow]

    def post_convergence_ratio(self, tail_fraction: float = 0.25) -> float:
        """Ratio of tail-window throughput, simplified over unsimplified."""
        def tail_rate(wins):
            k = max(1, int(round(len(wins) * tail_fraction)))
            return float(np.median([w.iters_per_second for w in wins[-k:]]))
        return tail_rate(self.simplified) / tail_rate(self.unsimplified)

    def summary(self) -> str:
        lines = ["run,window_start,window_end,iters_per_sec,mean_points"]
        for name, wins in (("simplified", self.simplified),
                           ("unsimplified", self.unsimplified)):
            for w in wins:
                lines.append(f"{name},{w.start_iteration},{w.end_iteration},"
                             f"{w.iters_per_second:.3f},{w.mean_points:.1f}")
        return "\n".join(lines) + "\n"


def bench_throughput(scene, config: TrainConfig, iters: Optional[int] = None,
                     window: int = 500) -> BenchReport:
    """Train with and without simplification at the same seed and compare
    windowed iteration throughput and point counts."""
    iters = config.iters if iters is None else iters
    runs = {}
    for name, simplify in (("simplified", True), ("unsimplified", False)):
        cfg = replace(config, enable_simplify=simplify, iters=iters)
        trainer = Trainer(scene, cfg)
        trainer.fit()
        runs[name] = trainer.metrics
    return BenchReport(
        simplified=windows_from_metrics(runs["simplified"], window),
        unsimplified=windows_from_metrics(runs["unsimplified"], window),
        simplified_rows=runs["simplified"],
        unsimplified_rows=runs["unsimplified"],
    )
