"""End-to-end orchestration: cohort splitting, the dice-loss training
loop with per-epoch curve logging, and full-volume inference."""

from __future__ import annotations

import copy
import csv
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import metrics, unet
from .autodiff import LabelTensor, Tensor
from .loss import LossConfig, dice_loss
from .nrrd import read_nrrd, validate_aligned
from .optim import AdamState, adam_step, zero_grads
from .preprocess import (CaseRecord, apply_normalization, crop_to_roi,
                         fit_normalization, uncrop_mask)
from .rng import stream_rng
from .unet import UNetConfig


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 1019
    batch: int = 1
    crop: int = 64
    eval_fraction: float = 10.0 / 152.0
    seed: int = 0
    augmentation: bool = False
    base_channels: int = 32

    def __post_init__(self):
        if self.crop % 8 != 0:
            raise ValueError(f"crop size must be divisible by 8, got {self.crop}")
        if self.augmentation:
            raise ValueError("data augmentation is disabled in this pipeline")


CURVE_COLUMNS = ("epoch", "train_loss", "eval_loss", "eval_dsc",
                 "eval_hd_mm", "eval_assd_mm")


def split_cohort(cases, eval_fraction, seed):
    """Seeded shuffle split into (train, eval); eval holds
    round(fraction * N) cases, at least 1."""
    if len(cases) < 2:
        raise ValueError("need at least 2 cases to split")
    order = stream_rng(seed, "shuffle").permutation(len(cases))
    n_eval = max(1, round(eval_fraction * len(cases)))
    eval_idx = set(order[:n_eval].tolist())
    train = [c for i, c in enumerate(cases) if i not in eval_idx]
    eval_ = [c for i, c in enumerate(cases) if i in eval_idx]
    return train, eval_


def _case_to_input(pet_crop, prostate_crop, norm_stats, dtype):
    """Stack normalized PET and prostate contour into a (1,2,D,H,W)
    tensor; volume [x,y,z] indexing maps to (z,y,x) data layout."""
    pet = apply_normalization(pet_crop, norm_stats)
    chans = np.stack([pet.data.transpose(2, 1, 0),
                      prostate_crop.data.transpose(2, 1, 0)])
    return Tensor(chans[None].astype(dtype))


def _label_to_tensor(label_crop, dtype):
    return LabelTensor(label_crop.data.transpose(2, 1, 0)[None, None].astype(dtype))


def _mask_from_output(arr5):
    """(1,1,D,H,W) array back to volume [x,y,z] indexing."""
    return np.asarray(arr5)[0, 0].transpose(2, 1, 0)


@dataclass
class TrainResult:
    model: unet.Model          # final epoch
    best_model: unet.Model     # lowest eval dice loss
    best_epoch: int
    norm_stats: object
    curve: list = field(default_factory=list)


def _snapshot(model):
    params = {k: Tensor(v.data.copy(), requires_grad=True)
              for k, v in model.params.items()}
    bn = {k: v.copy() for k, v in model.bn_stats.items()}
    return unet.Model(copy.deepcopy(model.config), params, bn, model.dtype)


def _eval_epoch(model, eval_prepared, loss_cfg):
    losses, dscs, hds, assds = [], [], [], []
    for case_id, x, y, label_data, prostate_data, spacing in eval_prepared:
        prob = unet.forward(model, x, training=False)
        losses.append(float(dice_loss(prob, y, loss_cfg).data))
        pred = _mask_from_output(prob.data) > 0.5
        pred &= prostate_data > 0
        ref = label_data > 0
        dscs.append(metrics.dsc(pred, ref))
        if pred.any() and ref.any():
            hds.append(metrics.hausdorff_mm(pred, ref, spacing))
            assds.append(metrics.assd_mm(pred, ref, spacing))
    hd = float(np.mean(hds)) if hds else float("nan")
    assd = float(np.mean(assds)) if assds else float("nan")
    return float(np.mean(losses)), float(np.mean(dscs)), hd, assd


def train(train_cases, eval_cases, cfg, progress=None):
    """Train the network on cropped, normalized cases.

    Every case must carry a gtv_label already restricted to the prostate.
    Returns the final and best-eval-loss models plus the per-epoch curve
    log. Deterministic for a fixed seed.
    """
    for c in train_cases + eval_cases:
        if c.gtv_label is None:
            raise ValueError(f"case {c.case_id} has no training label")

    train_crops = [crop_to_roi(c.mask_labels(), cfg.crop)[0] for c in train_cases]
    eval_crops = [crop_to_roi(c.mask_labels(), cfg.crop)[0] for c in eval_cases]
    norm_stats = fit_normalization([c.pet for c in train_crops])

    dtype = np.float32
    model = unet.build(
        UNetConfig(base_channels=cfg.base_channels), seed=stream_rng(cfg.seed, "init"),
        dtype=dtype)
    state = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    loss_cfg = LossConfig()

    train_prepared = [
        (c.case_id,
         _case_to_input(c.pet, c.prostate, norm_stats, dtype),
         _label_to_tensor(c.gtv_label, dtype))
        for c in train_crops]
    eval_prepared = [
        (c.case_id,
         _case_to_input(c.pet, c.prostate, norm_stats, dtype),
         _label_to_tensor(c.gtv_label, dtype),
         c.gtv_label.data, c.prostate.data, c.pet.spacing)
        for c in eval_crops]

    order_rng = stream_rng(cfg.seed, "epoch-order")
    curve = []
    best_loss, best_epoch, best_model = math.inf, -1, None
    for epoch in range(1, cfg.epochs + 1):
        order = order_rng.permutation(len(train_prepared))
        epoch_losses = []
        for i in order:
            case_id, x, y = train_prepared[i]
            prob = unet.forward(model, x, training=True)
            loss = dice_loss(prob, y, loss_cfg)
            if not np.isfinite(loss.data):
                raise RuntimeError(
                    f"non-finite dice loss at epoch {epoch}, case {case_id}")
            loss.backward()
            adam_step(model.params, state)
            zero_grads(model.params)
            epoch_losses.append(float(loss.data))

        eval_loss, eval_dsc, eval_hd, eval_assd = _eval_epoch(
            model, eval_prepared, loss_cfg)
        row = {
            "epoch": epoch,
            "train_loss": float(np.mean(epoch_losses)),
            "eval_loss": eval_loss,
            "eval_dsc": eval_dsc,
            "eval_hd_mm": eval_hd,
            "eval_assd_mm": eval_assd,
        }
        curve.append(row)
        if progress is not None:
            progress(row)
        if eval_loss < best_loss:
            best_loss, best_epoch = eval_loss, epoch
            best_model = _snapshot(model)

    return TrainResult(model=model, best_model=best_model, best_epoch=best_epoch,
                       norm_stats=norm_stats, curve=curve)


def write_curve_csv(curve, path):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CURVE_COLUMNS)
        w.writeheader()
        for row in curve:
            w.writerow({k: row[k] for k in CURVE_COLUMNS})


def predict(model, norm_stats, pet, prostate, crop=64, threshold=0.5):
    """Full inference on an un-cropped case at 2 mm spacing.

    Crop around the prostate, normalize with the checkpoint statistics,
    forward, threshold, restrict to the prostate and un-crop back to the
    original grid. Returns (mask Volume, timing dict with 'compute_sec').
    """
    t0 = time.perf_counter()
    validate_aligned(pet, prostate)
    case = CaseRecord(case_id="predict", pet=pet, prostate=prostate)
    if not (prostate.data > 0).any():
        # nothing inside the gland: empty prediction on the original grid
        from .nrrd import Volume
        empty = Volume(data=np.zeros(pet.dims, dtype=np.float32),
                       spacing=pet.spacing, origin=pet.origin, kind="mask")
        return empty, {"compute_sec": time.perf_counter() - t0}
    cropped, offset = crop_to_roi(case, crop)
    x = _case_to_input(cropped.pet, cropped.prostate, norm_stats, model.dtype)
    prob = unet.forward(model, x, training=False)
    pred = _mask_from_output(prob.data) > threshold
    pred &= cropped.prostate.data > 0
    out = uncrop_mask(pred.astype(np.float32), offset, pet.spacing, pet.origin,
                      space=pet.space)
    return out, {"compute_sec": time.perf_counter() - t0}


# -- case manifests: JSON array of per-case file paths --

def write_manifest(entries, path):
    with open(path, "w") as f:
        json.dump(entries, f, indent=2)


def load_manifest(path):
    """Read a manifest into CaseRecords, resolving relative paths against
    the manifest's directory. Labels are restricted to the prostate."""
    with open(path) as f:
        entries = json.load(f)
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    cases = []
    for e in entries:
        case = CaseRecord(
            case_id=str(e["id"]),
            pet=read_nrrd(resolve(e["pet_path"]), kind="pet"),
            prostate=read_nrrd(resolve(e["prostate_path"]), kind="mask"),
            gtv_label=(read_nrrd(resolve(e["gtv_path"]), kind="mask")
                       if e.get("gtv_path") else None),
            histo_ref=(read_nrrd(resolve(e["histo_path"]), kind="mask")
                       if e.get("histo_path") else None),
        )
        cases.append(case.mask_labels())
    return cases
