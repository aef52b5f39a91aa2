"""
Data Handler
Synthetic dataset generation (gen-data)
"""

import argparse
import logging

from config import Config
from scenegen import gen_dataset, write_dataset
from utils.helpers import format_table

logger = logging.getLogger(__name__)


class DataHandler:
    """Renders the synthetic box dataset and writes it to disk"""

    def register(self, subparsers, common: argparse.ArgumentParser) -> None:
        parser = subparsers.add_parser("gen-data", parents=[common], help="render a synthetic detection dataset")
        parser.add_argument("--out", dest="DATA_DIR", help="output dataset directory")
        parser.add_argument("--count", dest="DATASET_SIZE", type=int, help="number of images")
        parser.add_argument("--image-size", dest="IMAGE_SIZE", type=int, help="rendered image side in pixels")
        parser.add_argument("--workers", dest="DATA_WORKERS", type=int, help="render threads")
        parser.set_defaults(handler=self.gen_data)

    def gen_data(self, cfg: Config, args: argparse.Namespace) -> int:
        logger.info(f"generating {cfg.DATASET_SIZE} scenes at {cfg.IMAGE_SIZE}px into {cfg.DATA_DIR}")
        train, val = gen_dataset(
            cfg.DATASET_SIZE,
            cfg.SEED,
            image_size=cfg.IMAGE_SIZE,
            workers=cfg.DATA_WORKERS,
            progress=cfg.PROGRESS,
            train_fraction=cfg.TRAIN_FRACTION,
        )
        manifest = write_dataset(cfg.DATA_DIR, train, val, cfg.SEED, cfg.IMAGE_SIZE)
        rows = [
            ["train", manifest["train_count"]],
            ["val", manifest["val_count"]],
            ["class presence (r/b/k)", "/".join(str(c) for c in manifest["class_presence"])],  # type: ignore[attr-defined]
            ["norm mean", " ".join(f"{v:.4f}" for v in manifest["norm_mean"])],  # type: ignore[attr-defined]
            ["norm std", " ".join(f"{v:.4f}" for v in manifest["norm_std"])],  # type: ignore[attr-defined]
        ]
        print(format_table(["dataset", cfg.DATA_DIR], rows))
        return 0


# Global instance
data_handler = DataHandler()
