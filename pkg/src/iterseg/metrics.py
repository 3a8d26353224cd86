"""
Evaluation: Dice, average symmetric surface distance, identification
accuracy, linearly weighted kappa and completeness accounting, with each
reference instance matched to the automatic instance it overlaps most.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .distance import squared_edt, surface
from .labeling import N_LABELS
from .volume import InstanceMask


class UndefinedMetricError(ValueError):
    pass


def _check_same_grid(a: InstanceMask, b: InstanceMask):
    if a.dims != b.dims or not np.allclose(a.spacing, b.spacing):
        raise ValueError(f"masks are on different grids: {a.dims}/{a.spacing} "
                         f"vs {b.dims}/{b.spacing}")


def match_instances(reference: InstanceMask, automatic: InstanceMask) -> dict[int, int | None]:
    """Map each reference id to the automatic id it overlaps most (ties: smaller id)."""
    _check_same_grid(reference, automatic)
    result = {}
    for rid in reference.instance_ids():
        hits = automatic.ids[reference.ids == rid]
        hits = hits[hits > 0]
        if hits.size == 0:
            result[rid] = None
            continue
        ids, counts = np.unique(hits, return_counts=True)
        result[rid] = int(ids[np.argmax(counts)])  # argmax takes the first, i.e. smallest id
    return result


def dice(a, b) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    total = a.sum() + b.sum()
    if total == 0:
        raise UndefinedMetricError("Dice is undefined for two empty sets")
    return 2.0 * float(np.logical_and(a, b).sum()) / float(total)


def _bbox(mask, margin=1):
    idx = np.argwhere(mask)
    lo = np.maximum(idx.min(axis=0) - margin, 0)
    hi = np.minimum(idx.max(axis=0) + margin + 1, mask.shape)
    return tuple(slice(l, h) for l, h in zip(lo, hi))


def assd(a, b, spacing=(1.0, 1.0, 1.0)) -> float:
    """Average symmetric surface distance in mm.

    Sum of distances from each surface voxel of ``a`` to the surface of
    ``b`` and vice versa, divided by the total number of surface voxels.
    """
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if not a.any() or not b.any():
        raise UndefinedMetricError("ASSD needs two non-empty masks")
    # crop to the joint bounding box; surfaces are taken on the full grid first
    sa, sb = surface(a), surface(b)
    box = _bbox(a | b, margin=0)
    sa, sb = sa[box], sb[box]
    da = np.sqrt(squared_edt(sb, spacing))[sa]
    db = np.sqrt(squared_edt(sa, spacing))[sb]
    return float((da.sum() + db.sum()) / (da.size + db.size))


def confusion_matrix(pairs, n_categories=N_LABELS) -> np.ndarray:
    m = np.zeros((n_categories, n_categories), dtype=np.int64)
    for true, pred in pairs:
        if not (1 <= true <= n_categories and 1 <= pred <= n_categories):
            raise ValueError(f"labels must be in 1..{n_categories}, got ({true}, {pred})")
        m[true - 1, pred - 1] += 1
    return m


def _kappa(matrix, weights) -> float:
    matrix = np.asarray(matrix, dtype=np.float64)
    total = matrix.sum()
    if total <= 0:
        raise UndefinedMetricError("kappa needs at least one pair")
    observed = matrix / total
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0))
    po = float((weights * observed).sum())
    pe = float((weights * expected).sum())
    if np.isclose(pe, 1.0, rtol=0, atol=1e-15):
        if np.isclose(po, 1.0, rtol=0, atol=1e-15):
            return 1.0
        raise UndefinedMetricError("chance agreement is 1; kappa undefined")
    return (po - pe) / (1.0 - pe)


def linear_weights(n: int) -> np.ndarray:
    i = np.arange(n)
    return 1.0 - np.abs(i[:, None] - i[None, :]) / (n - 1)


def weighted_kappa_matrix(matrix) -> float:
    """Linearly weighted kappa of a square confusion matrix."""
    n = len(matrix)
    return _kappa(matrix, linear_weights(n))


def weighted_kappa(pairs, n_categories=N_LABELS) -> float:
    """Linearly weighted kappa for ``(true, predicted)`` label pairs in ``1..n_categories``."""
    return weighted_kappa_matrix(confusion_matrix(pairs, n_categories))


def unweighted_kappa(pairs, n_categories=N_LABELS) -> float:
    return _kappa(confusion_matrix(pairs, n_categories), np.eye(n_categories))


@dataclass
class InstanceReport:
    id: int
    label: int
    matched_id: int | None
    predicted_label: int | None
    complete: bool
    classified_complete: bool | None
    dice: float | None = None
    assd: float | None = None


@dataclass
class ScanReport:
    scan: str
    direction: str
    instances: list[InstanceReport]
    aggregates: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"scan": self.scan, "direction": self.direction,
                "instances": [asdict(i) for i in self.instances],
                "aggregates": self.aggregates}


def _mean_sd(values):
    if not values:
        return {"mean": None, "sd": None, "n": 0}
    arr = np.asarray(values, dtype=float)
    return {"mean": float(arr.mean()), "sd": float(arr.std()), "n": int(arr.size)}


def evaluate_scan(reference: InstanceMask, automatic: InstanceMask, records=None,
                  detections: InstanceMask | None = None, scan: str = "",
                  direction: str = "up") -> ScanReport:
    """Score an automatic segmentation against the reference.

    Dice, ASSD and identification are computed for completely visible
    reference instances; an unmatched one scores Dice 0 and counts as an
    identification failure. Completeness classification is judged on every
    reference instance that was detected, using ``detections`` (all accepted
    instances, including those left out of ``automatic``) when given.
    ``records`` may override the labels stored in ``automatic``: a list of
    objects with ``instance_id``, ``final_label`` and ``complete``.
    """
    _check_same_grid(reference, automatic)
    detections = detections if detections is not None else automatic
    _check_same_grid(reference, detections)
    labels = {i: r.label for i, r in detections.records.items()}
    labels.update({i: r.label for i, r in automatic.records.items()})
    classified = {i: r.complete for i, r in detections.records.items()}
    for rec in records or ():
        if getattr(rec, "final_label", None) is not None:
            labels[rec.instance_id] = rec.final_label
        classified[rec.instance_id] = rec.complete

    seg_match = match_instances(reference, automatic)
    det_match = match_instances(reference, detections)
    instances, dices, assds, correct, pairs = [], [], [], [], []
    tp = tn = fp = fn = 0
    for rid in reference.instance_ids():
        ref_rec = reference.records[rid]
        ref_vox = reference.ids == rid
        aid = seg_match[rid]
        did = det_match[rid]
        is_complete_cls = classified.get(did) if did is not None else None
        report = InstanceReport(rid, ref_rec.label, aid,
                                labels.get(aid) if aid is not None else None,
                                ref_rec.complete, is_complete_cls)
        if ref_rec.complete and ref_vox.any():
            if aid is None:
                report.dice = 0.0
                correct.append(False)
            else:
                auto_vox = automatic.ids == aid
                report.dice = dice(ref_vox, auto_vox)
                report.assd = assd(ref_vox, auto_vox, reference.spacing)
                assds.append(report.assd)
                correct.append(labels.get(aid) == ref_rec.label)
                pairs.append((ref_rec.label, labels.get(aid)))
            dices.append(report.dice)
        if is_complete_cls is not None:
            if ref_rec.complete and is_complete_cls:
                tp += 1
            elif ref_rec.complete:
                fn += 1
            elif is_complete_cls:
                fp += 1
            else:
                tn += 1
        instances.append(report)

    judged = tp + tn + fp + fn
    kappa = None
    if pairs:
        try:
            kappa = weighted_kappa(pairs)
        except UndefinedMetricError:
            kappa = None
    aggregates = {
        "dice": _mean_sd(dices),
        "assd_mm": _mean_sd(assds),
        "identification_accuracy": float(np.mean(correct)) if correct else None,
        "weighted_kappa": kappa,
        "completeness_accuracy": (tp + tn) / judged if judged else None,
        "completeness_false_positives": fp,
        "completeness_false_negatives": fn,
        "n_reference": len(reference.instance_ids()),
        "n_reference_complete": len(dices),
        "n_automatic": len(automatic.instance_ids()),
    }
    return ScanReport(scan, direction, instances, aggregates)
