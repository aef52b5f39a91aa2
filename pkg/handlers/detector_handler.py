"""
Detector Handler
Teacher training, student distillation and mAP evaluation (train-teacher, distill, eval-map)
"""

import argparse
import logging
import os
from typing import List, Optional

from checkpoint import load_detector, save_checkpoint
from config import Config
from dataset import ground_truth_for
from detector import DetectorModel, build_model, count_params_flops, student_config, teacher_config
from distill import (
    KdConfig,
    class_average_precisions,
    compute_map,
    decode,
    distill_student,
    evaluation_loader,
    predict,
    train_teacher,
)
from errors import UsageError
from scenegen import DatasetHandle, Sample, load_dataset
from utils.helpers import format_table, require_file

logger = logging.getLogger(__name__)


def _load_data(cfg: Config) -> DatasetHandle:
    require_file(cfg.DATA_DIR, "dataset directory")
    dataset = load_dataset(cfg.DATA_DIR)
    if not dataset.train:
        raise UsageError(f"dataset {cfg.DATA_DIR} has no training images")
    return dataset


def _describe(model: DetectorModel) -> str:
    params, flops = count_params_flops(model)
    return f"{model.cfg.name}: {params:,} params, {flops / 1e9:.3f} GFLOPs at {model.cfg.input_size}px"


class DetectorHandler:
    """Detector-side commands"""

    def register(self, subparsers, common: argparse.ArgumentParser) -> None:
        teacher = subparsers.add_parser("train-teacher", parents=[common], help="train the teacher detector")
        self._add_training_flags(teacher)
        teacher.add_argument("--epochs", dest="TEACHER_EPOCHS", type=int, help="training epochs")
        teacher.set_defaults(handler=self.train_teacher)

        distill = subparsers.add_parser("distill", parents=[common], help="distill the student from a frozen teacher")
        self._add_training_flags(distill)
        distill.add_argument("--teacher", help="teacher checkpoint")
        distill.add_argument("--epochs", dest="STUDENT_EPOCHS", type=int, help="training epochs")
        distill.add_argument("--no-kd", action="store_true", help="train the student on detection loss only")
        distill.set_defaults(handler=self.distill)

        evaluate = subparsers.add_parser("eval-map", parents=[common], help="mAP of a detector checkpoint")
        evaluate.add_argument("--ckpt", required=True, help="detector checkpoint")
        evaluate.add_argument("--data", dest="DATA_DIR", help="dataset directory")
        evaluate.add_argument("--split", choices=["val", "train", "all"], default="val")
        evaluate.add_argument("--iou", dest="MAP_IOU", type=float, help="IoU match threshold")
        evaluate.set_defaults(handler=self.eval_map)

    def _add_training_flags(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--data", dest="DATA_DIR", help="dataset directory")
        parser.add_argument("--out", default="runs", help="output directory for checkpoint and logs")
        parser.add_argument("--image-size", dest="IMAGE_SIZE", type=int, help="model input side in pixels")
        parser.add_argument("--batch-size", dest="BATCH_SIZE", type=int)
        parser.add_argument("--lr", dest="LEARNING_RATE", type=float)

    def train_teacher(self, cfg: Config, args: argparse.Namespace) -> int:
        dataset = _load_data(cfg)
        model = build_model(teacher_config(cfg.IMAGE_SIZE), seed=cfg.SEED)
        logger.info(_describe(model))
        kd = KdConfig.from_config(cfg)
        result = train_teacher(model, dataset, kd, cfg.TEACHER_EPOCHS, args.out, cfg.SEED, cfg.PROGRESS)
        path = os.path.join(args.out, "teacher.ckpt")
        save_checkpoint(result.model, path, extra={"best_map": result.best_map, "best_epoch": result.best_epoch})
        print(f"teacher best val mAP@{cfg.MAP_IOU:g}: {result.best_map:.4f} (epoch {result.best_epoch}) -> {path}")
        return 0

    def distill(self, cfg: Config, args: argparse.Namespace) -> int:
        kd = KdConfig.from_config(cfg)
        teacher: Optional[DetectorModel] = None
        if args.no_kd:
            kd.lambda_kd = 0.0
            kd.lambda_feat = 0.0
            input_size = cfg.IMAGE_SIZE
        else:
            teacher = load_detector(require_file(args.teacher, "teacher checkpoint"))
            input_size = teacher.cfg.input_size
        dataset = _load_data(cfg)
        student = build_model(student_config(input_size), seed=cfg.SEED)
        logger.info(_describe(student))
        result = distill_student(student, teacher, dataset, kd, cfg.STUDENT_EPOCHS, args.out, cfg.SEED, cfg.PROGRESS)
        name = "student_nokd.ckpt" if args.no_kd else "student.ckpt"
        path = os.path.join(args.out, name)
        extra = {"best_map": result.best_map, "best_epoch": result.best_epoch, "kd": not args.no_kd}
        save_checkpoint(result.model, path, extra=extra)
        print(f"student best val mAP@{cfg.MAP_IOU:g}: {result.best_map:.4f} (epoch {result.best_epoch}) -> {path}")
        return 0

    def eval_map(self, cfg: Config, args: argparse.Namespace) -> int:
        model = load_detector(require_file(args.ckpt, "checkpoint"))
        require_file(cfg.DATA_DIR, "dataset directory")
        dataset = load_dataset(cfg.DATA_DIR)
        samples: List[Sample] = {"val": dataset.val, "train": dataset.train, "all": dataset.train + dataset.val}[args.split]
        if not samples:
            raise UsageError(f"split '{args.split}' of {cfg.DATA_DIR} is empty")
        raw = predict(model, evaluation_loader(samples, model, cfg.BATCH_SIZE, cfg.DATA_WORKERS))
        preds = decode(raw, cfg.MAP_CONF_THRESHOLD)
        gts = ground_truth_for(samples)
        aps = class_average_precisions(preds, gts, cfg.MAP_IOU)
        mean_ap = compute_map(preds, gts, cfg.MAP_IOU)
        rows = [[f"class {c}", ap] for c, ap in sorted(aps.items())]
        print(format_table(["class", "AP"], rows))
        print(f"mAP@{cfg.MAP_IOU:g}: {mean_ap:.6f}")
        return 0


# Global instance
detector_handler = DetectorHandler()
