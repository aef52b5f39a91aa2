"""
Single-image latency benchmark for detectors
"""

import copy
import logging
import time
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from autodiff import Tensor, no_grad
from detector import DetectorModel, count_params_flops
from errors import ContractError
from utils.helpers import create_csv_content, format_table

logger = logging.getLogger(__name__)

MIN_WARMUP = 5
REPORT_HEADERS = [
    "model",
    "params",
    "flops",
    "runs",
    "mean_ms",
    "p50_ms",
    "p95_ms",
    "throughput_ips",
    "threads",
    "precision",
]


@dataclass
class BenchReport:
    model_name: str
    params: int
    flops: int
    latencies_ms: List[float] = field(default_factory=list)
    threads: int = 1
    precision: str = "float32"

    @property
    def mean(self) -> float:
        return float(np.mean(self.latencies_ms))

    @property
    def p50(self) -> float:
        return float(np.percentile(self.latencies_ms, 50))

    @property
    def p95(self) -> float:
        return float(np.percentile(self.latencies_ms, 95))

    @property
    def throughput(self) -> float:
        """Inferences per second"""
        return 1000.0 / self.mean

    def row(self) -> List[object]:
        return [
            self.model_name,
            self.params,
            self.flops,
            len(self.latencies_ms),
            self.mean,
            self.p50,
            self.p95,
            self.throughput,
            self.threads,
            self.precision,
        ]


def bench_latency(
    model: DetectorModel,
    runs: int = 100,
    warmup: int = MIN_WARMUP,
    threads: int = 1,
    seed: int = 0,
) -> BenchReport:
    """Wall-clock one-image forwards at float32 on a copy of the model; warmup runs are discarded"""
    if warmup < MIN_WARMUP:
        raise ContractError(f"warmup must be at least {MIN_WARMUP} runs, got {warmup}")
    if runs < 1:
        raise ContractError(f"runs must be positive, got {runs}")
    params, flops = count_params_flops(model)
    bench_model = copy.deepcopy(model).astype(np.float32)
    size = model.cfg.input_size
    image = Tensor(np.random.default_rng(seed).standard_normal((1, 3, size, size)).astype(np.float32))

    latencies: List[float] = []
    with no_grad():
        for i in range(warmup + runs):
            start = time.perf_counter()
            bench_model(image)
            elapsed = (time.perf_counter() - start) * 1000.0
            if i >= warmup:
                latencies.append(elapsed)

    report = BenchReport(model.cfg.name, params, flops, latencies, threads, "float32")
    logger.info(
        f"{report.model_name}: mean {report.mean:.2f} ms, p50 {report.p50:.2f} ms, p95 {report.p95:.2f} ms, "
        f"{report.throughput:.1f} img/s over {runs} runs"
    )
    return report


def reports_csv(reports: Sequence[BenchReport]) -> str:
    return create_csv_content(REPORT_HEADERS, [r.row() for r in reports])


def reports_table(reports: Sequence[BenchReport]) -> str:
    return format_table(REPORT_HEADERS, [r.row() for r in reports])
