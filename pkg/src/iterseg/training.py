"""
Single-patch training: patch sampling from reference masks, augmentation,
and the Adam loop over the combined loss.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .loss import LossConfig, Targets, make_targets, total_loss
from .network import Adam, SegmentorConfig, TinyFCN
from .phantom import COMPLETENESS_TOLERANCE
from .segmentor import check_direction
from .volume import InstanceMask, PatchSpec, extract_array

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 0.001
    momentum_beta1: float = 0.99
    beta2: float = 0.999
    eps: float = 1e-8
    n_max: int = 2000
    random_patch_fraction: float = 0.25
    direction: str = "up"
    pad_value: float = 0.0
    # each enabled augmentation is applied with this probability
    augment_probability: float = 0.5
    noise: bool = True
    noise_sigma_range: tuple[float, float] = (0.0, 0.1)
    smoothing: bool = True
    smoothing_sigma_range: tuple[float, float] = (0.0, 1.0)
    zcrop: bool = True
    zcrop_range: tuple[int, int] = (1, 8)
    seed: int = 0

    def __post_init__(self):
        check_direction(self.direction)
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        for name in ("random_patch_fraction", "augment_probability",
                     "momentum_beta1", "beta2"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        for name in ("noise_sigma_range", "smoothing_sigma_range", "zcrop_range"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValueError(f"{name} must satisfy 0 <= lo <= hi")
            object.__setattr__(self, name, (lo, hi))


@dataclass
class TrainingSample:
    image: np.ndarray
    memory: np.ndarray
    targets: Targets
    random_draw: bool
    target_id: int | None = None
    # voxel count of the target instance in the whole scan, for completeness
    target_total: int = 0


def _instance_order(mask: InstanceMask, direction: str) -> list[int]:
    """Instance ids sorted in traversal order by z-centroid."""
    ids = [i for i in mask.instance_ids() if np.any(mask.ids == i)]
    z = np.arange(mask.dims[2])
    centroid = {}
    for iid in ids:
        per_slice = (mask.ids == iid).sum(axis=(0, 1))
        centroid[iid] = float((per_slice * z).sum() / per_slice.sum())
    return sorted(ids, key=lambda i: centroid[i], reverse=(direction == "down"))


def _targets_for(ids_patch, target_id, mask: InstanceMask, total: int,
                 spacing, loss_cfg: LossConfig) -> Targets:
    if target_id is None:
        return make_targets(np.zeros(ids_patch.shape, bool), 0, False, spacing, loss_cfg)
    t = ids_patch == target_id
    rec = mask.records[target_id]
    complete = rec.complete and (1.0 - t.sum() / total) <= COMPLETENESS_TOLERANCE
    return make_targets(t, rec.label, complete, spacing, loss_cfg)


def sample_training_patch(dataset, rng: np.random.Generator, patch_size,
                          cfg: TrainerConfig = TrainerConfig(),
                          loss_cfg: LossConfig = LossConfig()) -> TrainingSample:
    """Draw one training patch with memory and targets derived from the reference.

    With probability ``1 - random_patch_fraction`` the patch centre is drawn
    uniformly inside the bounding box of a random instance, which becomes the
    target and all instances before it (in traversal order) form the memory.
    Otherwise the centre is uniform over the volume and all bone in the patch
    goes into memory, leaving an empty target.
    """
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    image, mask = dataset[rng.integers(len(dataset))]
    dims = np.asarray(mask.dims)
    order = _instance_order(mask, cfg.direction)
    random_draw = bool(rng.random() < cfg.random_patch_fraction) or not order

    if random_draw:
        center = tuple(int(rng.integers(0, n)) for n in dims)
        spec = PatchSpec(center, patch_size, 0)
        ids_patch = extract_array(mask.ids, spec)
        memory = ids_patch > 0
        target_id, total = None, 0
    else:
        rank = int(rng.integers(len(order)))
        target_id = order[rank]
        vox = np.argwhere(mask.ids == target_id)
        lo, hi = vox.min(axis=0), vox.max(axis=0)
        center = tuple(int(rng.integers(l, h + 1)) for l, h in zip(lo, hi))
        spec = PatchSpec(center, patch_size, 0)
        ids_patch = extract_array(mask.ids, spec)
        memory = np.isin(ids_patch, order[:rank])
        total = len(vox)

    image_patch = extract_array(np.asarray(image.values, dtype=np.float64),
                                PatchSpec(center, patch_size, cfg.pad_value))
    targets = _targets_for(ids_patch, target_id, mask, total, image.spacing, loss_cfg)
    return TrainingSample(image_patch, memory.astype(np.float64), targets, random_draw,
                          target_id, total)


def augment(sample: TrainingSample, rng: np.random.Generator, cfg: TrainerConfig,
            loss_cfg: LossConfig = LossConfig(), spacing=(1.0, 1.0, 1.0)) -> TrainingSample:
    """Random noise and smoothing on the image, random z-cropping of the patch border.

    Cropping overwrites a slab at the lower or upper z border with the pad
    value, removes it from memory and target, and recomputes the target's
    weights and completeness.
    """
    image, memory, targets = sample.image, sample.memory, sample.targets
    p = cfg.augment_probability

    if cfg.noise and rng.random() < p:
        sigma = rng.uniform(*cfg.noise_sigma_range)
        if sigma > 0:
            image = image + rng.normal(0.0, sigma, size=image.shape)
    if cfg.smoothing and rng.random() < p:
        sigma = rng.uniform(*cfg.smoothing_sigma_range)
        if sigma > 0:
            image = ndimage.gaussian_filter(image, sigma, mode="nearest")
    if cfg.zcrop and rng.random() < p:
        width = int(rng.integers(cfg.zcrop_range[0], cfg.zcrop_range[1] + 1))
        width = min(width, image.shape[2])
        if width > 0:
            sl = slice(0, width) if rng.random() < 0.5 else slice(image.shape[2] - width, None)
            image = image.copy()
            memory = memory.copy()
            image[:, :, sl] = cfg.pad_value
            memory[:, :, sl] = 0
            t = targets.t.astype(bool).copy()
            t[:, :, sl] = False
            complete = bool(targets.complete)
            if sample.target_total:
                complete = complete and (1.0 - t.sum() / sample.target_total) <= COMPLETENESS_TOLERANCE
            label = targets.label if t.any() else 0
            targets = make_targets(t, label, complete and t.any(), spacing, loss_cfg)
    return TrainingSample(image, memory, targets, sample.random_draw, sample.target_id,
                          sample.target_total)


@dataclass
class TrainingRecord:
    iteration: int
    lam: float
    fp_soft: float
    fn_soft: float
    label_loss: float
    completeness_loss: float
    total: float


def train_step(net: TinyFCN, optimizer: Adam, sample: TrainingSample, n: int,
               loss_cfg: LossConfig) -> TrainingRecord:
    """Forward, loss at iteration ``n``, backward and one Adam update (batch size 1)."""
    pred, cache = net.forward(sample.image, sample.memory)
    breakdown, grads = total_loss(pred.S, pred.L, pred.C, sample.targets, n, loss_cfg)
    if not np.isfinite(breakdown.total):
        raise TrainingError(f"non-finite loss at iteration {n}: {breakdown}")
    param_grads = net.backward(cache, grads)
    for name, g in param_grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name} at iteration {n}")
    optimizer.step(net.params, param_grads)
    return TrainingRecord(n, float(breakdown.lam), breakdown.fp_soft, breakdown.fn_soft,
                          breakdown.label_loss, breakdown.completeness_loss,
                          float(breakdown.total))


def train(dataset, net_cfg: SegmentorConfig = SegmentorConfig(),
          cfg: TrainerConfig = TrainerConfig(), loss_cfg: LossConfig | None = None,
          net: TinyFCN | None = None, progress=None) -> tuple[TinyFCN, list[TrainingRecord]]:
    """Train a network for ``cfg.n_max`` single-patch iterations."""
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    if loss_cfg is None:
        loss_cfg = LossConfig(n_max=cfg.n_max)
    net = net or TinyFCN(net_cfg)
    optimizer = Adam(cfg.learning_rate, cfg.momentum_beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for n in range(cfg.n_max):
        sample = sample_training_patch(dataset, rng, net.config.patch_size, cfg, loss_cfg)
        sample = augment(sample, rng, cfg, loss_cfg, dataset[0][0].spacing)
        record = train_step(net, optimizer, sample, n, loss_cfg)
        history.append(record)
        if progress is not None:
            progress(record)
        if n % 100 == 0:
            log.info("iteration %d: lambda %.3f total %.2f", n, record.lam, record.total)
    return net, history


def write_history_csv(history: list[TrainingRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "lambda", "fp_soft", "fn_soft", "label_loss",
                         "completeness_loss", "total"])
        for r in history:
            writer.writerow([r.iteration, f"{r.lam:.9g}", f"{r.fp_soft:.9g}", f"{r.fn_soft:.9g}",
                             f"{r.label_loss:.9g}", f"{r.completeness_loss:.9g}",
                             f"{r.total:.9g}"])

