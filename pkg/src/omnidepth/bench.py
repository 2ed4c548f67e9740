"""Wall-clock comparison of one hierarchical block against full self-attention
over all ``S * N`` tokens, next to the closed-form cost ratio."""

from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .aha import AhaConfig, AhaNetwork, complexity_report
from .numeric import layernorm, mhsa_forward

__all__ = ["BenchRow", "full_attention", "rows_to_csv", "run_bench", "time_median"]

CSV_FIELDS = ("S", "N", "P", "predicted_ratio", "aha_ms", "full_ms")


@dataclass(frozen=True)
class BenchRow:
    S: int
    N: int
    P: int
    predicted_ratio: float
    aha_ms: float
    full_ms: float


def time_median(fn, repeats: int = 5, warmup: int = 1) -> float:
    """Median wall time of ``fn()`` in milliseconds."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(samples)


def full_attention(net: AhaNetwork, feats: np.ndarray) -> np.ndarray:
    """``x + MHSA(LN(x))`` over every token of every frame jointly, reusing
    the first block's window-attention weights (no positional bias)."""
    s, c, h, w = feats.shape
    x = feats.transpose(0, 2, 3, 1).reshape(s * h * w, c)
    gamma, beta = net.weights["blocks.0.win_ln.gamma"], net.weights["blocks.0.win_ln.beta"]
    y, _ = mhsa_forward(layernorm(x, gamma, beta)[0], net._mhsa("blocks.0.win"))
    return x + y


def run_bench(
    frame_counts: Sequence[int] = (4, 8),
    token_grid: tuple[int, int] = (10, 20),
    cfg: AhaConfig | None = None,
    repeats: int = 5,
    seed: int = 0,
) -> list[BenchRow]:
    """Time one hierarchical block and the full-attention path for each ``S``."""
    base = cfg or AhaConfig()
    rows = []
    for s in frame_counts:
        run_cfg = replace(base, frames=max(s, base.frames))
        net = AhaNetwork(run_cfg)
        rng = np.random.default_rng(seed)
        feats = rng.standard_normal((s, run_cfg.channels, *token_grid))
        n = token_grid[0] * token_grid[1]
        p = run_cfg.window[0] * run_cfg.window[1]
        aha_ms = time_median(lambda: net.aha_block(feats, 0), repeats)
        full_ms = time_median(lambda: full_attention(net, feats), repeats)
        rows.append(BenchRow(s, n, p, complexity_report(s, n, p)["ratio"], aha_ms, full_ms))
    return rows


def rows_to_csv(rows: Iterable[BenchRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for r in rows:
        writer.writerow([r.S, r.N, r.P, f"{r.predicted_ratio:.6f}", f"{r.aha_ms:.3f}", f"{r.full_ms:.3f}"])
    return buf.getvalue()
