"""
Reports Handler
Latency benchmark, checkpoint inspection and plot-data export (bench, inspect-ckpt, export-plot)
"""

import argparse
import logging
import os
from typing import List, Optional, Sequence

from bench import BenchReport, bench_latency, reports_csv, reports_table
from checkpoint import inspect_checkpoint, load_detector
from config import Config
from detector import DetectorModel, build_model, student_config, teacher_config
from errors import UsageError
from utils.helpers import format_table, read_csv_rows, require_file, write_text_atomic

logger = logging.getLogger(__name__)


def gnuplot_data(rows: Sequence[dict], columns: Optional[List[str]] = None) -> str:
    """Whitespace-separated columns with a commented header line"""
    if not rows:
        return ""
    columns = columns or list(rows[0].keys())
    missing = [c for c in columns if c not in rows[0]]
    if missing:
        raise UsageError(f"unknown column(s): {', '.join(missing)}")
    lines = ["# " + " ".join(columns)]
    for row in rows:
        lines.append(" ".join(row[c] if row[c] != "" else "NaN" for c in columns))
    return "\n".join(lines) + "\n"


class ReportsHandler:
    """Reporting commands"""

    def register(self, subparsers, common: argparse.ArgumentParser) -> None:
        bench = subparsers.add_parser("bench", parents=[common], help="single-image latency and FLOPs")
        bench.add_argument("--ckpt", nargs="+", default=[], help="detector checkpoint(s)")
        bench.add_argument("--model", nargs="+", choices=["student", "teacher"], default=[], help="freshly built model(s)")
        bench.add_argument("--image-size", dest="IMAGE_SIZE", type=int, help="input side for --model")
        bench.add_argument("--runs", dest="BENCH_RUNS", type=int)
        bench.add_argument("--warmup", dest="BENCH_WARMUP", type=int)
        bench.add_argument("--csv", help="also write the report CSV here")
        bench.set_defaults(handler=self.bench)

        inspect = subparsers.add_parser("inspect-ckpt", parents=[common], help="checkpoint header and tensor census")
        inspect.add_argument("--ckpt", required=True)
        inspect.set_defaults(handler=self.inspect_ckpt)

        plot = subparsers.add_parser("export-plot", parents=[common], help="metrics CSV to gnuplot data")
        plot.add_argument("--csv", required=True, help="metrics CSV written by a training command")
        plot.add_argument("--out", help="output path (default: input with .dat suffix)")
        plot.add_argument("--columns", help="comma-separated columns to keep, in order")
        plot.set_defaults(handler=self.export_plot)

    def bench(self, cfg: Config, args: argparse.Namespace) -> int:
        models: List[DetectorModel] = [load_detector(require_file(path, "checkpoint")) for path in args.ckpt]
        builders = {"student": student_config, "teacher": teacher_config}
        models += [build_model(builders[name](cfg.IMAGE_SIZE), seed=cfg.SEED) for name in args.model]
        if not models:
            raise UsageError("bench needs --ckpt or --model")

        reports: List[BenchReport] = [
            bench_latency(m, runs=cfg.BENCH_RUNS, warmup=cfg.BENCH_WARMUP, threads=cfg.THREADS, seed=cfg.SEED) for m in models
        ]
        print(reports_table(reports))
        if len(reports) > 1:
            ref = max(reports, key=lambda r: r.flops)
            for report in reports:
                if report is not ref:
                    print(
                        f"{report.model_name}/{ref.model_name}: params {report.params / ref.params:.3f}, "
                        f"flops {report.flops / ref.flops:.3f}, mean latency {report.mean / ref.mean:.3f}"
                    )
        csv_text = reports_csv(reports)
        if args.csv:
            write_text_atomic(args.csv, csv_text)
            logger.info(f"wrote bench report to {args.csv}")
        print()
        print(csv_text, end="")
        return 0

    def inspect_ckpt(self, cfg: Config, args: argparse.Namespace) -> int:
        info = inspect_checkpoint(require_file(args.ckpt, "checkpoint"))
        summary = [
            ["kind", info["kind"]],
            ["format version", info["version"]],
            ["params", f"{info['params']:,}"],
            ["size (MB, float32)", f"{info['size_mb']:.3f}"],
            ["file bytes", f"{info['file_bytes']:,}"],
        ]
        summary += [[f"config.{k}", v] for k, v in sorted(info["config"].items())]
        summary += [[f"extra.{k}", v] for k, v in sorted(info["extra"].items())]
        print(format_table(["field", "value"], summary))
        print()
        print(format_table(["tensor", "dtype", "shape", "count"], info["tensors"]))
        return 0

    def export_plot(self, cfg: Config, args: argparse.Namespace) -> int:
        rows = read_csv_rows(require_file(args.csv, "metrics CSV"))
        columns = [c.strip() for c in args.columns.split(",")] if args.columns else None
        out = args.out or os.path.splitext(args.csv)[0] + ".dat"
        write_text_atomic(out, gnuplot_data(rows, columns))
        print(f"wrote {len(rows)} rows to {out}")
        return 0


# Global instance
reports_handler = ReportsHandler()
