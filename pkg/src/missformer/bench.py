"""Attention complexity benchmark: counted core FLOPs and wall time.

Only the QK^T and AV products are counted as "core" FLOPs; the reduction
projection's own cost is reported in a separate column so the R^2 scaling of
the core is visible in isolation.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass

import numpy as np

from .attention import (
    AttentionConfig,
    EfficientSelfAttention,
    MultiHeadSelfAttention,
    count_flops,
)
from .tensor import Tensor, no_grad

COMPLEXITY_NOTE = (
    "note: keys/values are reduced on the 2-D token grid by R per side, so core "
    "FLOPs drop by R^2 when R doubles per side; prose complexity statements of "
    "the form O(N^2/R) correspond to a 1-D reshape reading of the same reduction."
)

BENCH_HEADER = (
    "N",
    "R",
    "grid",
    "std_core_flops",
    "eff_core_flops",
    "core_ratio",
    "reduction_proj_flops",
    "std_ms",
    "eff_ms",
)


@dataclass
class BenchRow:
    n: int
    r: int
    grid: int
    std_core_flops: int
    eff_core_flops: int
    core_ratio: float
    reduction_proj_flops: int
    std_ms: float
    eff_ms: float

    def as_tuple(self):
        return (
            self.n,
            self.r,
            f"{self.grid}x{self.grid}",
            self.std_core_flops,
            self.eff_core_flops,
            f"{self.core_ratio:.6f}",
            self.reduction_proj_flops,
            f"{self.std_ms:.3f}",
            f"{self.eff_ms:.3f}",
        )


def _median_ms(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append((time.perf_counter() - start) * 1e3)
    times.sort()
    return times[len(times) // 2]


def run_bench(
    token_counts,
    ratios,
    channels: int = 32,
    heads: int = 4,
    batch: int = 1,
    repeats: int = 5,
    seed: int = 0,
) -> tuple[list[BenchRow], list[str]]:
    rows: list[BenchRow] = []
    warnings: list[str] = []
    rng = np.random.default_rng(seed)
    for n in token_counts:
        side = math.isqrt(n)
        if side * side != n:
            warnings.append(f"skipped N={n}: token count is not a square grid")
            continue
        x = Tensor(rng.standard_normal((batch, n, channels)).astype(np.float32))
        std = MultiHeadSelfAttention(AttentionConfig(channels, heads), np.random.default_rng(1))
        with no_grad():
            with count_flops() as counter:
                std(x)
            std_flops = counter.core
            std_ms = _median_ms(lambda: std(x), repeats)
        for r in ratios:
            if side % r:
                warnings.append(f"skipped N={n}, R={r}: ratio does not divide grid side {side}")
                continue
            eff = EfficientSelfAttention(
                AttentionConfig(channels, heads, r), np.random.default_rng(1)
            )
            with no_grad():
                with count_flops() as counter:
                    eff(x, (side, side))
                eff_flops = counter.core
                eff_ms = _median_ms(lambda: eff(x, (side, side)), repeats)
            n_red = n // (r * r)
            proj_flops = 2 * batch * n_red * (channels * r * r) * channels
            rows.append(
                BenchRow(
                    n=n,
                    r=r,
                    grid=side,
                    std_core_flops=std_flops,
                    eff_core_flops=eff_flops,
                    core_ratio=eff_flops / std_flops,
                    reduction_proj_flops=proj_flops,
                    std_ms=std_ms,
                    eff_ms=eff_ms,
                )
            )
    return rows, warnings


def write_bench_csv(path: str, rows: list[BenchRow]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {COMPLEXITY_NOTE}\n")
        writer = csv.writer(fh)
        writer.writerow(BENCH_HEADER)
        for row in rows:
            writer.writerow(row.as_tuple())
