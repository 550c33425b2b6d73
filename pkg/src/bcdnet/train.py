"""Training loop, evaluation and the diagnostics the CLI dumps."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import spatial
from . import tensor as tn
from .attention import batch_mean
from .config import ExperimentConfig
from .model import BCDNet, compute_losses
from .objective import SGD, LossWeights, lr_at, sample_pk, total_loss
from .retrieval import RetrievalResult, evaluate
from .supervision import estimate_supervision
from .synth import DataConfig, Dataset, build_splits, random_erase
from .tensor import Tensor

log = logging.getLogger(__name__)


class NumericError(ArithmeticError):
    """A loss became NaN or infinite during training."""


def data_config(cfg: ExperimentConfig) -> DataConfig:
    return DataConfig(
        num_train_ids=cfg.num_train_ids,
        imgs_per_train_id=cfg.imgs_per_train_id,
        num_test_ids=cfg.num_test_ids,
        imgs_per_test_id=cfg.imgs_per_test_id,
        max_shift=cfg.max_shift,
        num_cameras=cfg.num_cameras,
        parts=cfg.num_parts,
        height=cfg.input_height,
        width=cfg.input_width,
        seed=cfg.data_seed,
    )


def loss_weights(cfg: ExperimentConfig) -> LossWeights:
    return LossWeights(cfg.alpha, cfg.lambda1, cfg.lambda2, cfg.use_bcca_loss, cfg.use_part_reg, cfg.use_holistic_reg)


def augment(images: np.ndarray, cfg: ExperimentConfig, rng: np.random.Generator) -> np.ndarray:
    out = images.copy()
    for i in range(len(out)):
        if cfg.flip and rng.random() < 0.5:
            out[i] = out[i][:, :, ::-1]
        if cfg.random_erase > 0:
            out[i] = random_erase(out[i], cfg.random_erase, rng)
    return out


@dataclass
class TrainResult:
    model: BCDNet
    history: list[dict] = field(default_factory=list)
    label_map: np.ndarray | None = None


def train(cfg: ExperimentConfig, train_set: Dataset, log_path=None, progress: bool = False) -> TrainResult:
    """Train one configuration; every random draw derives from ``cfg.seed``."""
    cfg.check()
    data, label_map = train_set.relabeled()
    model = BCDNet(cfg, num_classes=len(label_map))
    opt = SGD(model.named_parameters(), cfg.momentum, cfg.weight_decay)
    weights = loss_weights(cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    steps = cfg.batches_per_epoch or max(1, math.ceil(len(data) / cfg.batch_size))
    history = []
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg.lr, cfg.lr_milestones, cfg.lr_factor)
        start = time.perf_counter()
        sums: dict[str, float] = {}
        for _ in range(steps):
            batch = sample_pk(data.ids, cfg.P, cfg.A, rng)
            images = augment(data.images[batch.indices], cfg, rng)
            out = model(Tensor(images))
            terms = compute_losses(out, batch.labels, cfg)
            loss = total_loss(terms, weights)
            value = loss.item()
            if not math.isfinite(value):
                tn.get_tape().clear()
                raise NumericError(f"non-finite loss {value} at epoch {epoch}")
            opt.zero_grad()
            tn.backward(loss)
            opt.step(lr)
            for key, v in {**terms.scalars(), "total": value}.items():
                sums[key] = sums.get(key, 0.0) + v
        record = {"epoch": epoch, **{k: v / steps for k, v in sums.items()}, "lr": lr,
                  "wall_seconds": time.perf_counter() - start}
        history.append(record)
        if log_path is not None:
            with open(log_path, "a") as fh:
                fh.write(json.dumps(record) + "\n")
        if progress:
            log.info("epoch %d loss %.4f lr %.4g", epoch, record["total"], lr)
    return TrainResult(model, history, label_map)


def evaluate_model(model: BCDNet, test_set: Dataset) -> RetrievalResult:
    q = test_set.split == "query"
    g = test_set.split == "gallery"
    emb = model.embed(test_set.images)
    return evaluate(emb[q], test_set.ids[q], test_set.cams[q], emb[g], test_set.ids[g], test_set.cams[g])


# -- diagnostics ---------------------------------------------------------------


def diagnostic_batch(cfg: ExperimentConfig, train_set: Dataset) -> np.ndarray:
    """A fixed PK batch of training images, seeded by ``cfg.seed``."""
    batch = sample_pk(train_set.ids, cfg.P, cfg.A, np.random.default_rng([cfg.seed, 2]))
    return train_set.images[batch.indices]


def batch_diagnostics(model: BCDNet, images: np.ndarray) -> dict[str, np.ndarray]:
    """Supervision matrix, attention weights and height profiles for one batch.

    Runs in training mode (batch statistics) without recording gradients, so
    the quantities are exactly what the losses would see for this batch.
    """
    cfg = model.config
    was_training = model.training
    model.train()
    saved = [(s.running_mean.copy(), s.running_var.copy()) for s in model.named_buffers().values()]
    try:
        with tn.no_grad():
            out = model(Tensor(images))
    finally:
        for s, (m, v) in zip(model.named_buffers().values(), saved):
            s.running_mean, s.running_var = m, v
        model.train(was_training)
    H = out.T.shape[2]
    result = {
        "supervision": estimate_supervision(out.T.data, cfg.num_parts, cfg.beta, cfg.supervision_variant),
        "part_profiles": np.stack([spatial.part_profile(F).data for F in out.maps]),
        "part_targets": np.stack([spatial.part_target(k, cfg.num_parts, H, cfg.effective_gamma) for k in range(cfg.num_parts)]),
        "holistic_profile": spatial.holistic_profile(out.maps).data,
        "holistic_target": spatial.holistic_target(H),
    }
    if out.weights:
        result["attention"] = np.stack([w.data for w in out.weights], axis=1)  # (N, K, C)
        result["mean_attention"] = np.stack([batch_mean(w).data for w in out.weights])  # (K, C)
    return result


def attention_diversity(mean_attention: np.ndarray) -> float:
    """Mean pairwise cosine similarity among the K batch-mean attention vectors."""
    unit = mean_attention / np.linalg.norm(mean_attention, axis=1, keepdims=True)
    sim = unit @ unit.T
    iu = np.triu_indices(len(unit), k=1)
    return float(sim[iu].mean())


def band_mass(profiles: np.ndarray) -> np.ndarray:
    """Share of each part profile's mass falling on that part's own rows."""
    K, H = profiles.shape
    r = H // K
    return np.array([profiles[k, k * r : (k + 1) * r].sum() for k in range(K)])


def load_data(cfg: ExperimentConfig, root=None) -> tuple[Dataset, Dataset]:
    """Synthetic splits from disk when ``root`` holds a manifest, else rendered in memory."""
    if root is not None and (Path(root) / "manifest.csv").exists():
        from .synth import load_dataset

        return load_dataset(root)
    return build_splits(data_config(cfg))
