"""Single-shot detection post-processing: prior-box generation, box
decoding, greedy non-maximum suppression, and score thresholding.

Boxes use normalized [0,1] image coordinates.  Priors and decoded boxes are
(N,4) float64 arrays; priors are center form (cx, cy, w, h), decoded boxes
corner form (xmin, ymin, xmax, ymax).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

DEFAULT_VARIANCES = (0.1, 0.1, 0.2, 0.2)


@dataclass(frozen=True)
class PriorConfig:
    """Scale schedule for the prior boxes: per-head scales linearly spaced
    over [s_min, s_max], plus an extra scale sqrt(s_k * s_{k+1}) per head
    (the scale past the last head is s_extra)."""
    s_min: float = 0.2
    s_max: float = 0.9
    s_extra: float = 1.0
    clip: bool = True


@dataclass(frozen=True)
class Detection:
    class_id: int
    score: float
    box: tuple[float, float, float, float]   # xmin, ymin, xmax, ymax


def _ratios_for(boxes_per_cell):
    # 4 boxes: ratios {1, 1', 2, 1/2}; 6 boxes add {3, 1/3}
    extra_pairs, rem = divmod(boxes_per_cell - 2, 2)
    if rem or extra_pairs < 0 or extra_pairs > 2:
        raise ValueError(
            f"unsupported boxes_per_cell {boxes_per_cell} (want 2, 4 or 6)")
    return (2.0, 3.0)[:extra_pairs]


def generate_priors(head_geometry, config=None):
    """Center-form priors for a list of (H, W, boxes_per_cell) heads.

    Order is deterministic: head order, then row-major cells, then per-cell
    box order (scale s, extra scale, then wide/tall pairs per aspect ratio).
    """
    config = config or PriorConfig()
    m = len(head_geometry)
    scales = [config.s_min + (config.s_max - config.s_min) * k / (m - 1)
              for k in range(m)] if m > 1 else [config.s_min]
    scales.append(config.s_extra)
    rows = []
    for k, (fh, fw, boxes) in enumerate(head_geometry):
        s = scales[k]
        s_prime = float(np.sqrt(s * scales[k + 1]))
        dims = [(s, s), (s_prime, s_prime)][:min(boxes, 2)]
        for ar in _ratios_for(boxes):
            r = float(np.sqrt(ar))
            dims.append((s * r, s / r))
            dims.append((s / r, s * r))
        for i in range(fh):
            cy = (i + 0.5) / fh
            for j in range(fw):
                cx = (j + 0.5) / fw
                for w, h in dims:
                    rows.append((cx, cy, w, h))
    priors = np.asarray(rows, dtype=np.float64)
    if config.clip:
        np.clip(priors, 0.0, 1.0, out=priors)
    return priors


def decode_boxes(loc, priors, variances=DEFAULT_VARIANCES):
    """Offsets -> corner-form boxes clamped to [0,1].

    cx = prior.cx + loc0 * v0 * prior.w, cy likewise;
    w = prior.w * exp(loc2 * v2), h likewise.
    """
    loc = np.asarray(loc, dtype=np.float64)
    if loc.shape != priors.shape:
        raise ValueError(
            f"loc shape {loc.shape} does not match priors {priors.shape}")
    v = variances
    cx = priors[:, 0] + loc[:, 0] * v[0] * priors[:, 2]
    cy = priors[:, 1] + loc[:, 1] * v[1] * priors[:, 3]
    w = priors[:, 2] * np.exp(loc[:, 2] * v[2])
    h = priors[:, 3] * np.exp(loc[:, 3] * v[3])
    boxes = np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1)
    return np.clip(boxes, 0.0, 1.0)


def iou_matrix(a, b):
    """Pairwise intersection-over-union of corner-form boxes: (N,M)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[:, :, 0] * wh[:, :, 1]
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def nms(boxes, scores, iou_threshold=0.45, top_k=200):
    """Greedy suppression; returns kept indices in keep order.

    Candidates are visited by descending score (ties broken by lower index);
    a box is kept iff its IoU with every already-kept box is <= threshold.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if len(boxes) != len(scores):
        raise ValueError("boxes and scores length mismatch")
    order = np.argsort(-scores, kind="stable")
    keep: list[int] = []
    kept_boxes = np.empty((0, 4))
    for idx in order:
        if keep:
            if iou_matrix(boxes[idx], kept_boxes).max() > iou_threshold:
                continue
        keep.append(int(idx))
        kept_boxes = np.concatenate([kept_boxes, boxes[idx:idx + 1]])
        if len(keep) >= top_k:
            break
    return keep


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def flatten_head_outputs(head_geometry, loc_maps, conf_maps, num_classes):
    """Per-head (H,W,b*4) / (H,W,b*C) maps -> (N,4) offsets and (N,C) logits
    concatenated in prior order (head, row-major cell, box)."""
    locs, confs = [], []
    for (fh, fw, boxes), lm, cm in zip(head_geometry, loc_maps, conf_maps):
        if lm.shape != (fh, fw, boxes * 4):
            raise ValueError(
                f"loc map shape {lm.shape} != {(fh, fw, boxes * 4)}")
        if cm.shape != (fh, fw, boxes * num_classes):
            raise ValueError(
                f"conf map shape {cm.shape} != {(fh, fw, boxes * num_classes)}")
        locs.append(np.asarray(lm, np.float64).reshape(-1, 4))
        confs.append(np.asarray(cm, np.float64).reshape(-1, num_classes))
    return np.concatenate(locs), np.concatenate(confs)


@dataclass
class PostprocessResult:
    detections: list[Detection]
    degenerate_dropped: int


def _class_detections(cls, scores, boxes, valid, score_threshold,
                      iou_threshold, top_k):
    mask = valid & (scores > score_threshold)
    idx = np.nonzero(mask)[0]
    if idx.size == 0:
        return []
    keep = nms(boxes[idx], scores[idx], iou_threshold, top_k)
    return [Detection(cls, float(scores[idx[k]]), tuple(boxes[idx[k]]))
            for k in keep]


def postprocess(loc, logits, priors, score_threshold=0.01,
                iou_threshold=0.45, top_k=200, max_total=200,
                variances=DEFAULT_VARIANCES, workers=1):
    """Offsets + class logits -> scored detections.

    Class 0 is background and never emitted.  Scores are per-class softmax
    probabilities; boxes with zero area after decoding/clamping are dropped
    (counted, not an error).  Per-class greedy NMS, then a cross-class cap of
    max_total detections, sorted by descending score.  The workers argument
    only shards classes across threads; results do not depend on it.
    """
    loc = np.asarray(loc, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    if len(loc) != len(priors) or len(logits) != len(priors):
        raise ValueError(
            f"head outputs cover {len(loc)}/{len(logits)} priors, "
            f"expected {len(priors)}")
    probs = softmax(logits)
    boxes = decode_boxes(loc, priors, variances)
    valid = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
    dropped = int(np.count_nonzero(~valid))
    classes = range(1, probs.shape[1])
    args = [(c, probs[:, c], boxes, valid, score_threshold, iou_threshold,
             top_k) for c in classes]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_class = list(pool.map(lambda a: _class_detections(*a), args))
    else:
        per_class = [_class_detections(*a) for a in args]
    dets = [d for group in per_class for d in group]
    # stable: ties keep class order, then NMS keep order
    dets.sort(key=lambda d: -d.score)
    return PostprocessResult(dets[:max_total], dropped)
