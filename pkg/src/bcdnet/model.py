"""The part-aware network: backbone, K attended sub-networks, optional stripes."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import attention as att
from . import spatial, tnsio
from . import tensor as tn
from .backbone import Backbone
from .config import ExperimentConfig
from .nn import Module
from .objective import LossTerms, batch_hard_triplet, cross_entropy_part
from .subnets import PartSubnet, SubnetOutput, assemble_holistic, stripe_subnets_forward
from .supervision import estimate_supervision
from .tensor import BatchNormState, Tensor


@dataclass
class ForwardOutput:
    T: Tensor
    weights: list[Tensor]  # per-part (N, C) attention; empty without attention
    parts: list[SubnetOutput]
    h: Tensor
    stripe_logits: list[Tensor] = field(default_factory=list)

    @property
    def features(self) -> list[Tensor]:
        return [p.feature for p in self.parts]

    @property
    def maps(self) -> list[Tensor]:
        return [p.maps for p in self.parts]


class BCDNet(Module):
    def __init__(self, config: ExperimentConfig, num_classes: int):
        config.check()
        self.config = config
        self.num_classes = num_classes
        rng = np.random.default_rng(config.seed)
        K, C, D = config.num_parts, config.backbone_channels, config.subnet_width
        self.backbone = Backbone(config.backbone(), rng, K)
        self.attention = [att.ChannelAttention(C, rng, config.reduction) for _ in range(K)] if config.channel_attention else []
        self.subnets = [PartSubnet(C, D, num_classes, rng) for _ in range(K)]
        self.stripe_subnets = [PartSubnet(C, D, num_classes, rng) for _ in range(K)] if config.extra_stripe_subnets else []
        # batch-mean attention used at test time by the shared-attention variant
        self.mean_attention = [BatchNormState(C) for _ in range(K)] if config.attention_variant == "variant2" else []

    def _attend(self, k: int, T: Tensor) -> tuple[Tensor | None, Tensor]:
        if not self.attention:
            return None, T
        w = self.attention[k](T)
        if self.config.attention_variant != "variant2":
            return w, att.recalibrate(w, T)
        n, c = w.shape
        state = self.mean_attention[k]
        if self.training:
            mean = att.batch_mean(w)
            state.running_mean = (1 - state.momentum) * state.running_mean + state.momentum * mean.data
        else:
            mean = Tensor(state.running_mean)
        shared = tn.repeat_rows(tn.reshape(mean, (1, c)), n)
        return w, att.recalibrate(shared, T)

    def __call__(self, images: Tensor) -> ForwardOutput:
        T = self.backbone(images)
        weights, outs = [], []
        for k, net in enumerate(self.subnets):
            w, Tk = self._attend(k, T)
            if w is not None:
                weights.append(w)
            outs.append(net(Tk, classify=self.training))
        h = assemble_holistic([o.feature for o in outs])
        stripe_logits = stripe_subnets_forward(T, self.stripe_subnets) if self.training and self.stripe_subnets else []
        return ForwardOutput(T, weights, outs, h, stripe_logits)

    def embed(self, images: np.ndarray, batch: int = 128) -> np.ndarray:
        """Eval-mode (N, K*D) embeddings; no classifiers, stripes or losses."""
        was_training = self.training
        self.eval()
        try:
            with tn.no_grad():
                chunks = [self(Tensor(images[i : i + batch])).h.data for i in range(0, len(images), batch)]
        finally:
            self.train(was_training)
        return np.concatenate(chunks)


def compute_losses(out: ForwardOutput, labels, config: ExperimentConfig, supervision: np.ndarray | None = None) -> LossTerms:
    """Every active objective term for one training batch."""
    terms = LossTerms()
    terms.identity = [cross_entropy_part(p.logits, labels) for p in out.parts]
    terms.triplet = batch_hard_triplet(out.h, labels, config.alpha)
    terms.stripe_identity = [cross_entropy_part(lg, labels) for lg in out.stripe_logits]
    if config.channel_attention and config.use_bcca_loss:
        if supervision is None:
            supervision = estimate_supervision(out.T.data, config.num_parts, config.beta, config.supervision_variant)
        for k, w in enumerate(out.weights):
            if config.attention_variant == "variant1":
                loss = att.per_image_bcca_loss(w, supervision[:, k])
            else:
                loss = att.bcca_loss(att.batch_mean(w), supervision[:, k])
            if loss is not None:
                terms.attention.append(loss)
    if config.use_part_reg:
        terms.part_reg = spatial.part_losses(out.maps, config.effective_gamma)
    if config.use_holistic_reg:
        terms.holistic_reg = spatial.holistic_loss(out.maps)
    return terms


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(model: BCDNet, directory, extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, p in model.named_parameters().items():
        fname = f"{name}.tns"
        tnsio.save(directory / fname, p.data)
        entries[name] = fname
    for name, state in model.named_buffers().items():
        for attr in ("running_mean", "running_var"):
            key = f"{name}.{attr}"
            tnsio.save(directory / f"{key}.tns", getattr(state, attr))
            entries[key] = f"{key}.tns"
    for k, state in enumerate(model.mean_attention):
        key = f"mean_attention.{k}.running_mean"
        tnsio.save(directory / f"{key}.tns", state.running_mean)
        entries[key] = f"{key}.tns"
    manifest = {
        "config": model.config.to_dict(),
        "config_hash": model.config.content_hash(),
        "num_classes": model.num_classes,
        "entries": entries,
        **(extra or {}),
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_checkpoint(directory) -> BCDNet:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    config = ExperimentConfig.from_dict(manifest["config"])
    model = BCDNet(config, manifest["num_classes"])
    entries = manifest["entries"]
    for name, p in model.named_parameters().items():
        p.data = tnsio.load(directory / entries[name]).reshape(p.shape)
    for name, state in model.named_buffers().items():
        state.running_mean = tnsio.load(directory / entries[f"{name}.running_mean"])
        state.running_var = tnsio.load(directory / entries[f"{name}.running_var"])
    for k, state in enumerate(model.mean_attention):
        state.running_mean = tnsio.load(directory / entries[f"mean_attention.{k}.running_mean"])
    return model
