"""Detection evaluation: ground-truth ingestion, greedy IoU matching under
the VOC protocol, per-class average precision, and mAP.

File formats (JSON lines, one object per line):
- ground truth: {"image": str, "class": str, "bbox": [xmin, ymin, xmax, ymax],
  "difficult": bool (optional, default false)}
- detections:   {"image": str, "class": str, "score": float, "bbox": [...]}

Boxes are corner-form in pixels.  AP modes: "voc11" (11-point interpolation,
the VOC2007 toolkit default), "area" (area under the interpolated PR curve),
and "coco" (area AP averaged over IoU thresholds 0.50:0.05:0.95).
"""

import json
from dataclasses import dataclass, field

import numpy as np

AP_MODES = ("voc11", "area", "coco")
COCO_THRESHOLDS = tuple((50 + 5 * i) / 100 for i in range(10))


class EvaluationError(ValueError):
    """Malformed evaluation input."""


@dataclass
class GroundTruthSet:
    classes: list[str]
    # class -> image -> list of (box, difficult)
    boxes: dict[str, dict[str, list[tuple[list[float], bool]]]]
    images: set[str] = field(default_factory=set)

    def num_gt(self, cls):
        return sum(1 for lst in self.boxes.get(cls, {}).values()
                   for _b, difficult in lst if not difficult)


def _require(record, key, kinds, where):
    if key not in record:
        raise EvaluationError(f"{where}: missing key {key!r}")
    value = record[key]
    if not isinstance(value, kinds):
        raise EvaluationError(f"{where}: key {key!r} has wrong type")
    return value


def _check_box(box, where):
    if (not isinstance(box, list) or len(box) != 4
            or not all(isinstance(v, (int, float)) for v in box)):
        raise EvaluationError(f"{where}: bbox must be [xmin,ymin,xmax,ymax]")
    return [float(v) for v in box]


def _read_jsonl(path):
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EvaluationError(
                    f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise EvaluationError(f"{path}:{lineno}: expected an object")
            yield lineno, record


def load_ground_truth(path):
    boxes: dict[str, dict[str, list]] = {}
    images = set()
    for lineno, record in _read_jsonl(path):
        where = f"{path}:{lineno}"
        image = _require(record, "image", str, where)
        cls = _require(record, "class", str, where)
        box = _check_box(_require(record, "bbox", list, where), where)
        difficult = record.get("difficult", False)
        if not isinstance(difficult, bool):
            raise EvaluationError(f"{where}: difficult must be a boolean")
        boxes.setdefault(cls, {}).setdefault(image, []).append(
            (box, difficult))
        images.add(image)
    return GroundTruthSet(sorted(boxes), boxes, images)


def load_detections(path):
    dets = []
    for lineno, record in _read_jsonl(path):
        where = f"{path}:{lineno}"
        image = _require(record, "image", str, where)
        cls = _require(record, "class", str, where)
        score = _require(record, "score", (int, float), where)
        box = _check_box(_require(record, "bbox", list, where), where)
        dets.append({"image": image, "class": cls, "score": float(score),
                     "bbox": box})
    return dets


def _iou(a, b):
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = ((a[2] - a[0]) * (a[3] - a[1])
             + (b[2] - b[0]) * (b[3] - b[1]) - inter)
    return inter / union if union > 0 else 0.0


def match_detections(dets, gts, iou_threshold=0.5):
    """Greedy VOC matching for one class.

    dets: [(image, score, box)]; gts: {image: [(box, difficult)]}.
    Detections are ranked by descending score (ties by input order); each is
    matched to the highest-IoU ground truth of its image.  Returns a label
    per ranked detection: True (TP), False (FP), or None (matched a
    difficult ground truth, counted neither way).
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][1], i))
    taken = {img: np.zeros(len(lst), dtype=bool) for img, lst in gts.items()}
    labels = []
    for i in order:
        image, _score, box = dets[i]
        candidates = gts.get(image, [])
        best, best_iou = -1, 0.0
        for gi, (gt_box, _diff) in enumerate(candidates):
            ov = _iou(box, gt_box)
            if ov > best_iou:
                best, best_iou = gi, ov
        if best < 0 or best_iou < iou_threshold:
            labels.append(False)
        elif candidates[best][1]:
            labels.append(None)
        elif not taken[image][best]:
            taken[image][best] = True
            labels.append(True)
        else:
            labels.append(False)
    return labels


def _pr_curve(labels, num_gt):
    """Cumulative precision/recall over ranked TP/FP labels (None removed)."""
    flags = np.array([lab for lab in labels if lab is not None], dtype=bool)
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / num_gt if num_gt else np.zeros(len(flags))
    precision = tp / np.maximum(tp + fp, 1)
    return recall, precision


def average_precision(labels, num_gt, mode="voc11"):
    """AP of one ranked label sequence; num_gt = 0 gives 0."""
    if mode not in ("voc11", "area"):
        raise EvaluationError(f"unknown AP mode {mode!r}")
    if num_gt == 0:
        return 0.0
    recall, precision = _pr_curve(labels, num_gt)
    if mode == "voc11":
        total = 0.0
        for i in range(11):
            mask = recall >= i / 10
            total += float(precision[mask].max()) if mask.any() else 0.0
        return total / 11
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    changed = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[changed + 1] - mrec[changed])
                        * mpre[changed + 1]))


def evaluate_map(detections_path, ground_truth_path, mode="voc11",
                 iou_threshold=0.5):
    """Per-class AP and mAP report for a detections file against a ground
    truth file.  mAP averages over the classes present in the ground truth;
    detections naming unknown classes are an error."""
    if mode not in AP_MODES:
        raise EvaluationError(f"unknown AP mode {mode!r}")
    gt = load_ground_truth(ground_truth_path)
    dets = load_detections(detections_path)
    known = set(gt.classes)
    for d in dets:
        if d["class"] not in known:
            raise EvaluationError(
                f"detection class {d['class']!r} not present in ground truth")
    per_class = {}
    for cls in gt.classes:
        class_dets = [(d["image"], d["score"], d["bbox"])
                      for d in dets if d["class"] == cls]
        class_gts = gt.boxes[cls]
        num_gt = gt.num_gt(cls)
        if mode == "coco":
            ap = sum(average_precision(
                match_detections(class_dets, class_gts, thr), num_gt, "area")
                for thr in COCO_THRESHOLDS) / len(COCO_THRESHOLDS)
        else:
            labels = match_detections(class_dets, class_gts, iou_threshold)
            ap = average_precision(labels, num_gt, mode)
        per_class[cls] = {
            "ap": ap,
            "num_gt": num_gt,
            "num_detections": len(class_dets),
            "zero_ground_truth": num_gt == 0,
        }
    aps = [v["ap"] for v in per_class.values()]
    return {
        "mode": mode,
        "iou_threshold": iou_threshold if mode != "coco" else None,
        "classes": per_class,
        "map": sum(aps) / len(aps) if aps else 0.0,
        "num_images": len(gt.images),
    }
