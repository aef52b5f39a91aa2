"""
Detection loss, distillation losses, decoding, mAP and the teacher/student
training loops
"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from autodiff import Adam, Conv2d, ReduceLROnPlateau, Tensor, clip, log_softmax, maximum, minimum, no_grad
from dataset import BatchLoader, GroundTruth, ground_truth_for
from detector import Detection, DetectorModel, head_outputs
from errors import ContractError, DimensionError, TrainingError
from scenegen import DatasetHandle, Sample
from utils.geometry import box_iou
from utils.helpers import create_csv_content, format_float, write_text_atomic

logger = logging.getLogger(__name__)

TRAIN_LOG_HEADERS = ["epoch", "train_loss", "L_det", "L_KD", "L_feat", "val_mAP", "lr"]


@dataclass
class KdConfig:
    T: float = 2.0
    lambda_kd: float = 1.0
    lambda_feat: float = 0.25
    lr: float = 1e-4
    batch_size: int = 32
    conf_thresholds: Tuple[float, ...] = (0.25, 0.45)
    iou_weight: float = 2.0
    l1_weight: float = 1.0
    map_iou: float = 0.5
    map_conf_threshold: float = 0.001
    plateau_patience: int = 5
    lr_factor: float = 0.5
    min_lr: float = 1e-6
    augment: bool = True
    dump_every: int = 5
    workers: int = 2

    def __post_init__(self):
        if self.T <= 0:
            raise ContractError(f"temperature must be positive, got {self.T}")
        if self.lambda_kd < 0 or self.lambda_feat < 0:
            raise ContractError("distillation weights must be non-negative")

    @classmethod
    def from_config(cls, cfg) -> "KdConfig":
        return cls(
            T=cfg.KD_TEMPERATURE,
            lambda_kd=cfg.LAMBDA_KD,
            lambda_feat=cfg.LAMBDA_FEAT,
            lr=cfg.LEARNING_RATE,
            batch_size=cfg.BATCH_SIZE,
            conf_thresholds=tuple(cfg.CONF_THRESHOLDS),
            iou_weight=cfg.IOU_WEIGHT,
            l1_weight=cfg.L1_WEIGHT,
            map_iou=cfg.MAP_IOU,
            map_conf_threshold=cfg.MAP_CONF_THRESHOLD,
            plateau_patience=cfg.PLATEAU_PATIENCE,
            lr_factor=cfg.LR_FACTOR,
            min_lr=cfg.MIN_LR,
            augment=cfg.AUGMENT,
            dump_every=cfg.DUMP_EVERY,
            workers=cfg.DATA_WORKERS,
        )


# ======================================================================
# Losses
# ======================================================================


def box_iou_tensor(pred: Tensor, target: np.ndarray, eps: float = 1e-9) -> Tensor:
    """Elementwise IoU of ordered boxes [..., 4] against constant boxes [..., 4]"""
    lead = (slice(None),) * (pred.ndim - 1)
    px1, py1, px2, py2 = (pred[lead + (i,)] for i in range(4))
    gx1, gy1, gx2, gy2 = (Tensor(target[..., i]) for i in range(4))
    inter_w = clip(minimum(px2, gx2) - maximum(px1, gx1), 0.0, None)
    inter_h = clip(minimum(py2, gy2) - maximum(py1, gy1), 0.0, None)
    inter = inter_w * inter_h
    pred_area = (px2 - px1) * (py2 - py1)
    target_area = (gx2 - gx1) * (gy2 - gy1)
    return inter / (pred_area + target_area - inter + eps)


def det_loss(pred: Tensor, gt: GroundTruth, iou_weight: float = 2.0, l1_weight: float = 1.0) -> Tensor:
    """BCE on class presence + present-only iou_weight*(1 - IoU) + l1_weight*L1(corners), batch mean"""
    if pred.ndim != 3 or pred.shape[:2] != gt.present.shape or pred.shape[2] != 5:
        raise DimensionError(f"det_loss: prediction {pred.shape} does not match ground truth {gt.present.shape}")
    batch = pred.shape[0]
    conf_logits, boxes = head_outputs(pred)
    presence = gt.present.astype(np.float64)

    bce = conf_logits.softplus() - conf_logits * presence
    iou = box_iou_tensor(boxes, gt.boxes)
    l1 = (boxes - gt.boxes).abs().sum(axis=2)
    box_term = ((1.0 - iou) * iou_weight + l1 * l1_weight) * presence
    return (bce.sum() + box_term.sum()) * (1.0 / batch)


def kd_kl_loss(student_logits: Tensor, teacher_logits, T: float) -> Tensor:
    """T^2 * KL(softmax(teacher / T) || softmax(student / T)), averaged over the batch"""
    teacher = teacher_logits.data if isinstance(teacher_logits, Tensor) else np.asarray(teacher_logits, dtype=np.float64)
    if teacher.shape != student_logits.shape:
        raise DimensionError(f"kd_kl_loss: teacher {teacher.shape} vs student {student_logits.shape}")
    scaled = teacher / T
    shifted = scaled - scaled.max(axis=-1, keepdims=True)
    log_pt = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    pt = np.exp(log_pt)
    log_ps = log_softmax(student_logits * (1.0 / T), axis=-1)
    cross = (log_ps * pt).sum()
    entropy_term = float((pt * log_pt).sum())
    batch = student_logits.shape[0]
    return (entropy_term - cross) * (T * T / batch)


def feat_mse_loss(student_feat: Tensor, teacher_feat, adapter: Optional[Conv2d] = None) -> Tensor:
    """Mean squared difference after projecting student channels to teacher width"""
    target = teacher_feat.data if isinstance(teacher_feat, Tensor) else np.asarray(teacher_feat)
    if student_feat.shape[0] != target.shape[0] or student_feat.shape[2:] != target.shape[2:]:
        raise DimensionError(f"feat_mse_loss: spatial mismatch {student_feat.shape} vs {target.shape}")
    projected = adapter(student_feat) if adapter is not None else student_feat
    if projected.shape != target.shape:
        raise DimensionError(f"feat_mse_loss: channels {projected.shape[1]} vs teacher {target.shape[1]}")
    diff = projected - target
    return (diff * diff).mean()


def total_loss(l_det: Tensor, l_kd: Tensor, l_feat: Tensor, cfg: KdConfig) -> Tensor:
    return l_det + l_kd * cfg.lambda_kd + l_feat * cfg.lambda_feat


def make_adapter(student_channels: int, teacher_channels: int, seed: int = 0) -> Conv2d:
    return Conv2d(student_channels, teacher_channels, 1, np.random.default_rng(seed))


# ======================================================================
# Decoding and mAP
# ======================================================================


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def decode(pred, conf_threshold: float) -> List[List[Detection]]:
    """One list of detections per image: classes whose sigmoid confidence >= threshold"""
    raw = pred.data if isinstance(pred, Tensor) else np.asarray(pred)
    conf = _sigmoid(raw[:, :, 0])
    corners = _sigmoid(raw[:, :, 1:5])
    results: List[List[Detection]] = []
    for i in range(raw.shape[0]):
        dets: List[Detection] = []
        for c in range(raw.shape[1]):
            if conf[i, c] < conf_threshold:
                continue
            xa, ya, xb, yb = corners[i, c]
            x1, x2 = min(xa, xb), max(xa, xb)
            y1, y2 = min(ya, yb), max(ya, yb)
            if not (x1 < x2 and y1 < y2):
                logger.debug(f"skipping degenerate box for image {i} class {c}")
                continue
            dets.append(Detection(c, float(conf[i, c]), (float(x1), float(y1), float(x2), float(y2))))
        results.append(dets)
    return results


def average_precision(recall: np.ndarray, precision: np.ndarray) -> float:
    """Area under the precision envelope (all-point interpolation)"""
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def class_average_precisions(
    preds: Sequence[Sequence[Detection]], gts: GroundTruth, iou_thresh: float = 0.5
) -> Dict[int, float]:
    """AP per class that has at least one ground-truth box"""
    if len(preds) != len(gts):
        raise ContractError(f"{len(preds)} prediction lists for {len(gts)} images")
    aps: Dict[int, float] = {}
    num_classes = gts.present.shape[1]
    for c in range(num_classes):
        n_gt = int(gts.present[:, c].sum())
        if n_gt == 0:
            continue
        scored: List[Tuple[float, bool]] = []
        for i, dets in enumerate(preds):
            matched = False
            for det in sorted((d for d in dets if d.class_id == c), key=lambda d: -d.confidence):
                hit = bool(gts.present[i, c]) and not matched and box_iou(det.bbox, gts.boxes[i, c]) >= iou_thresh
                matched = matched or hit
                scored.append((det.confidence, hit))
        if not scored:
            aps[c] = 0.0
            continue
        confidences = np.array([s for s, _ in scored])
        hits = np.array([h for _, h in scored], dtype=np.float64)
        order = np.argsort(-confidences, kind="stable")
        confidences, hits = confidences[order], hits[order]
        tp = np.cumsum(hits)
        fp = np.cumsum(1.0 - hits)
        # one precision/recall point per distinct confidence, taken after the whole tie group
        last_of_group = np.r_[confidences[1:] != confidences[:-1], True]
        tp, fp = tp[last_of_group], fp[last_of_group]
        aps[c] = average_precision(tp / n_gt, tp / np.maximum(tp + fp, 1e-12))
    return aps


def compute_map(preds: Sequence[Sequence[Detection]], gts: GroundTruth, iou_thresh: float = 0.5) -> float:
    """Mean AP over classes with ground truth; 0.0 when no class has any"""
    aps = class_average_precisions(preds, gts, iou_thresh)
    return float(np.mean(list(aps.values()))) if aps else 0.0


# ======================================================================
# Training
# ======================================================================


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    l_det: float
    l_kd: float
    l_feat: float
    val_map: float
    lr: float

    def row(self) -> List[object]:
        return [self.epoch, self.train_loss, self.l_det, self.l_kd, self.l_feat, self.val_map, self.lr]


@dataclass
class TrainResult:
    model: DetectorModel
    best_map: float
    best_epoch: int
    history: List[EpochRecord] = field(default_factory=list)


def predict(model: DetectorModel, loader: BatchLoader) -> np.ndarray:
    """Raw head outputs [N, n, 5] for every sample, in loader order"""
    outputs = []
    with no_grad():
        for batch in loader.iter_epoch(0):
            outputs.append(model(Tensor(batch.images.astype(model_dtype(model)))).raw.data)
    if not outputs:
        return np.zeros((0, model.cfg.num_classes, 5))
    return np.concatenate(outputs, axis=0)


def model_dtype(model: DetectorModel) -> np.dtype:
    return model.parameters()[0].dtype


def evaluation_loader(samples: Sequence[Sample], model: DetectorModel, batch_size: int, workers: int = 2) -> BatchLoader:
    return BatchLoader(
        samples,
        batch_size,
        model.cfg.input_size,
        model.norm_mean,
        model.norm_std,
        shuffle=False,
        augment=False,
        workers=workers,
    )


def evaluate_map(
    model: DetectorModel,
    samples: Sequence[Sample],
    batch_size: int = 32,
    iou_thresh: float = 0.5,
    conf_threshold: float = 0.001,
    workers: int = 2,
) -> float:
    raw = predict(model, evaluation_loader(samples, model, batch_size, workers))
    return compute_map(decode(raw, conf_threshold), ground_truth_for(samples), iou_thresh)


def dump_detections(
    out_dir: str, epoch: int, samples: Sequence[Sample], raw: np.ndarray, thresholds: Sequence[float]
) -> None:
    """Write decoded detections as label files: class conf x1 y1 x2 y2"""
    for threshold in thresholds:
        target = os.path.join(out_dir, "detections", f"epoch_{epoch:03d}", f"conf_{threshold:g}")
        os.makedirs(target, exist_ok=True)
        for sample, dets in zip(samples, decode(raw, threshold)):
            stem = os.path.splitext(os.path.basename(sample.image_path))[0]
            lines = [
                f"{d.class_id} {format_float(d.confidence)} " + " ".join(format_float(v) for v in d.bbox) for d in dets
            ]
            with open(os.path.join(target, f"{stem}.txt"), "w", encoding="utf-8") as fh:
                fh.write("".join(line + "\n" for line in lines))


def _fit(
    model: DetectorModel,
    dataset: DatasetHandle,
    cfg: KdConfig,
    epochs: int,
    out_dir: Optional[str],
    seed: int,
    teacher: Optional[DetectorModel] = None,
    adapter: Optional[Conv2d] = None,
    progress: bool = False,
    log_name: str = "train_log.csv",
) -> TrainResult:
    model.set_normalization(dataset.norm_mean, dataset.norm_std)
    distilling = teacher is not None and (cfg.lambda_kd > 0 or cfg.lambda_feat > 0)
    params = model.parameters() + (adapter.parameters() if adapter is not None and distilling else [])
    optimizer = Adam(params, lr=cfg.lr)
    scheduler = ReduceLROnPlateau(
        optimizer, mode="max", factor=cfg.lr_factor, patience=cfg.plateau_patience, min_lr=cfg.min_lr
    )
    loader = BatchLoader(
        dataset.train,
        cfg.batch_size,
        model.cfg.input_size,
        dataset.norm_mean,
        dataset.norm_std,
        shuffle=True,
        augment=cfg.augment,
        seed=seed,
        workers=cfg.workers,
    )
    val_loader = evaluation_loader(dataset.val, model, cfg.batch_size, cfg.workers)
    val_gt = ground_truth_for(dataset.val)
    teacher_params = teacher.parameters() if teacher is not None else []

    history: List[EpochRecord] = []
    best_map, best_epoch = -1.0, 0
    best_state = model.state_dict()

    for epoch in range(1, epochs + 1):
        sums = np.zeros(4)
        batches = 0
        for batch_index, batch in enumerate(
            tqdm(loader.iter_epoch(epoch), total=len(loader), desc=f"epoch {epoch}", disable=not progress)
        ):
            images = Tensor(batch.images)
            out = model(images)
            l_det = det_loss(out.raw, batch.gt, cfg.iou_weight, cfg.l1_weight)
            l_kd = Tensor(0.0)
            l_feat = Tensor(0.0)
            if distilling:
                assert teacher is not None
                with no_grad():
                    t_out = teacher(images)
                l_kd = kd_kl_loss(out.raw[:, :, 0], t_out.raw[:, :, 0], cfg.T)
                l_feat = feat_mse_loss(out.features, t_out.features, adapter)
            loss = total_loss(l_det, l_kd, l_feat, cfg)
            if not math.isfinite(loss.item()):
                raise TrainingError("non-finite loss", epoch=epoch, batch_index=batch_index)

            optimizer.zero_grad()
            loss.backward()
            if any(p.grad is not None for p in teacher_params):
                raise TrainingError("gradient reached a frozen teacher parameter", epoch=epoch, batch_index=batch_index)
            optimizer.step()

            sums += (loss.item(), l_det.item(), l_kd.item(), l_feat.item())
            batches += 1
            logger.debug(f"epoch {epoch} batch {batch_index}: loss {loss.item():.6f}")

        raw_val = predict(model, val_loader)
        val_map = compute_map(decode(raw_val, cfg.map_conf_threshold), val_gt, cfg.map_iou)
        means = sums / max(batches, 1)
        record = EpochRecord(epoch, means[0], means[1], means[2], means[3], val_map, optimizer.lr)
        history.append(record)
        scheduler.step(val_map)
        logger.info(f"epoch {epoch}/{epochs}: loss {means[0]:.4f} val mAP@{cfg.map_iou} {val_map:.4f} lr {record.lr:g}")

        if val_map > best_map:
            best_map, best_epoch = val_map, epoch
            best_state = model.state_dict()
        if out_dir:
            write_text_atomic(
                os.path.join(out_dir, log_name), create_csv_content(TRAIN_LOG_HEADERS, [r.row() for r in history])
            )
            if cfg.dump_every > 0 and (epoch % cfg.dump_every == 0 or epoch == epochs):
                dump_detections(out_dir, epoch, dataset.val, raw_val, cfg.conf_thresholds)

    model.load_state_dict(best_state)
    logger.info(f"restored best epoch {best_epoch} (val mAP {best_map:.4f})")
    return TrainResult(model, max(best_map, 0.0), best_epoch, history)


def train_teacher(
    model: DetectorModel,
    dataset: DatasetHandle,
    cfg: KdConfig,
    epochs: int,
    out_dir: Optional[str] = None,
    seed: int = 0,
    progress: bool = False,
) -> TrainResult:
    """Detection loss only"""
    return _fit(model, dataset, cfg, epochs, out_dir, seed, progress=progress)


def distill_student(
    student: DetectorModel,
    teacher: Optional[DetectorModel],
    dataset: DatasetHandle,
    cfg: KdConfig,
    epochs: int,
    out_dir: Optional[str] = None,
    seed: int = 0,
    progress: bool = False,
) -> TrainResult:
    """Detection + tempered KL on confidence logits + stage-3 feature MSE against a frozen teacher"""
    adapter = None
    if teacher is not None:
        teacher.freeze()
        adapter = make_adapter(student.cfg.channels[2], teacher.cfg.channels[2], seed)
        if teacher.cfg.input_size != student.cfg.input_size:
            raise ContractError(
                f"teacher input {teacher.cfg.input_size} differs from student input {student.cfg.input_size}"
            )
    return _fit(student, dataset, cfg, epochs, out_dir, seed, teacher=teacher, adapter=adapter, progress=progress)
