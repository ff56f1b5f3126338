"""Mini-batch training with per-epoch history and best-epoch weights.

The schedule is deliberately plain: fixed learning rate, fixed epoch count,
Adam, categorical cross-entropy, 80/20 split. The returned model carries
the weights of the epoch with the best validation mean IoU, not the last
epoch.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .data import LabelMask, atomic_write_text
from .errors import ConfigurationError, ContractError, TrainingError
from .metrics import ConfusionMatrix, confusion, iou
from .patching import PatchSet
from .segnet import Model, NUM_CLASSES, ProbabilityMap

OPTIMIZERS = ("adam",)
LOSSES = ("categorical_cross_entropy",)
ADAM_BETAS = (0.9, 0.999)


@dataclass
class Hyperparams:
    learning_rate: float = 1e-5
    epochs: int = 30
    batch_size: int = 8
    optimizer: str = "adam"
    loss: str = "categorical_cross_entropy"
    val_fraction: float = 0.2
    split_seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be at least 1")
        if not (0.0 < self.val_fraction < 1.0):
            raise ConfigurationError("val_fraction must lie strictly between 0 and 1")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"optimizer must be one of {OPTIMIZERS}")
        if self.loss not in LOSSES:
            raise ConfigurationError(f"loss must be one of {LOSSES}")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_mean_iou: list = field(default_factory=list)
    best_epoch: int = -1

    def epochs_run(self) -> int:
        return len(self.train_loss)

    def to_csv(self, path) -> None:
        lines = ["epoch,train_loss,val_loss,val_mean_iou"]
        for i, (tl, vl, vi) in enumerate(
            zip(self.train_loss, self.val_loss, self.val_mean_iou)
        ):
            lines.append(f"{i},{tl:.6f},{vl:.6f},{vi:.6f}")
        atomic_write_text(path, "\n".join(lines) + "\n")


def split_dataset(ps: PatchSet, val_fraction: float, seed: int,
                  by_image: bool = False) -> tuple[PatchSet, PatchSet]:
    """Shuffle-split into train/val of sizes ceil((1-f)n) and the rest.

    `by_image` splits whole source images instead, so overlapping patches
    of one scan never straddle the two sides; sizes then follow the image
    counts rather than the exact patch arithmetic.
    """
    n = len(ps)
    if n == 0:
        raise ContractError("cannot split an empty patch set")
    if not (0.0 < val_fraction < 1.0):
        raise ConfigurationError("val_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    if by_image:
        sources = sorted({geom.source_id for _, _, geom in ps})
        order = rng.permutation(len(sources))
        n_train_src = math.ceil((1.0 - val_fraction) * len(sources))
        train_src = {sources[i] for i in order[:n_train_src]}
        train_idx = [i for i, (_, _, g) in enumerate(ps.patches) if g.source_id in train_src]
        val_idx = [i for i, (_, _, g) in enumerate(ps.patches) if g.source_id not in train_src]
    else:
        order = rng.permutation(n)
        n_train = math.ceil((1.0 - val_fraction) * n)
        train_idx = sorted(order[:n_train].tolist())
        val_idx = sorted(order[n_train:].tolist())
    train = PatchSet([ps.patches[i] for i in train_idx], ps.patch_px, ps.stride_px)
    val = PatchSet([ps.patches[i] for i in val_idx], ps.patch_px, ps.stride_px)
    return train, val


def cross_entropy(pm: ProbabilityMap, mask: LabelMask) -> float:
    """Mean over pixels of -log p(true class), probabilities clamped at 1e-12."""
    labels = mask.labels
    if pm.probs.shape[1:] != labels.shape:
        raise ContractError(
            f"shape mismatch: probs {pm.probs.shape[1:]} vs mask {labels.shape}"
        )
    h, w = labels.shape
    p_true = pm.probs[labels, np.arange(h)[:, None], np.arange(w)[None, :]]
    return float(np.mean(-np.log(np.maximum(p_true, 1e-12))))


def _batches(patches, batch_size, order):
    for i in range(0, len(order), batch_size):
        idx = order[i:i + batch_size]
        tiles = np.stack([patches[j][0] for j in idx])
        labels = np.stack([patches[j][1] for j in idx])
        x = torch.from_numpy(tiles).float().unsqueeze(1)
        y = torch.from_numpy(labels.astype(np.int64))
        yield x, y


def evaluate_on_patches(model: Model, ps: PatchSet, batch_size: int = 8) -> tuple[float, float]:
    """(mean CE loss, mean IoU) over a patch set, IoU by global counts."""
    model.eval()
    total_loss = 0.0
    n_batches = 0
    cm = ConfusionMatrix(np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64))
    with torch.no_grad():
        for x, y in _batches(ps.patches, batch_size, range(len(ps))):
            logits = model.forward_logits(x)
            total_loss += float(F.cross_entropy(logits, y))
            pred = logits.argmax(dim=1).numpy()
            for k in range(pred.shape[0]):
                cm = cm + confusion(pred[k], y[k].numpy())
            n_batches += 1
    return total_loss / max(1, n_batches), iou(cm).mean_iou


def train(model: Model, data: PatchSet, hp: Hyperparams, *,
          split_by_image: bool = False) -> tuple[Model, TrainHistory]:
    """Train on the given patches, validating on an internal split.

    Returns the model loaded with its best-validation-IoU weights plus the
    full per-epoch history. A non-finite batch loss aborts with a
    TrainingError carrying the history up to that point. `split_by_image`
    keeps all patches of one scan on the same side of the split.
    """
    for _, mtile, geom in data:
        if mtile is None:
            raise ContractError(f"patch at ({geom.row0},{geom.col0}) has no mask")
    history = TrainHistory()
    if hp.epochs == 0:
        return model, history
    train_ps, val_ps = split_dataset(data, hp.val_fraction, hp.split_seed,
                                     by_image=split_by_image)
    opt = torch.optim.Adam(model.parameters(), lr=hp.learning_rate, betas=ADAM_BETAS)
    rng = np.random.default_rng(hp.split_seed)
    best_state = None
    best_iou = -1.0
    for epoch in range(hp.epochs):
        model.train()
        order = rng.permutation(len(train_ps)).tolist()
        epoch_loss = 0.0
        n_batches = 0
        for x, y in _batches(train_ps.patches, hp.batch_size, order):
            opt.zero_grad()
            loss = F.cross_entropy(model.forward_logits(x), y)
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss in epoch {epoch}", history=history
                )
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach())
            n_batches += 1
        val_loss, val_miou = evaluate_on_patches(model, val_ps, hp.batch_size)
        history.train_loss.append(epoch_loss / max(1, n_batches))
        history.val_loss.append(val_loss)
        history.val_mean_iou.append(val_miou)
        if val_miou > best_iou:
            best_iou = val_miou
            history.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
    if best_state is not None:
        model.load_state_dict(best_state)
    return model, history
