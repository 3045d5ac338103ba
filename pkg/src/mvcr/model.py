"""Small transformer encoder with augmentation hooks after each layer.

Layers are numbered 1..N to match the insertion-layer convention used by the
augmentation config. The encoder returns both the final hidden states and
the pre-augmentation activations at every insertion layer, which the
training harness feeds to the reconstruction loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import augment, nn
from . import tensor as T
from .augment import AugmentationTrace, MvcrConfig
from .autoencoders import StochasticHae
from .nn import AttentionBlock, LinearLayer, NormParams, ParamGroup
from .tensor import Tensor

TASKS = ("sequence-classify", "token-tag")


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 4
    hidden_dim: int = 64
    n_heads: int = 4
    ffn_dim: int = 128
    vocab_size: int = 256
    max_seq_len: int = 32
    task: str = "sequence-classify"
    num_classes: int = 2

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError(f"need at least one layer, got {self.num_layers}")
        if self.hidden_dim % self.n_heads != 0:
            raise ValueError(f"hidden dim {self.hidden_dim} not divisible by "
                             f"{self.n_heads} heads")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")


@dataclass
class Batch:
    """One minibatch; labels are [b] for sequence tasks, [b, s] for token
    tasks with label_mask marking scored positions."""

    ids: np.ndarray  # int [b, s]
    labels: np.ndarray
    pad_mask: np.ndarray | None = None  # bool [b, s], True at real tokens
    label_mask: np.ndarray | None = None  # bool [b, s], token task only


@dataclass
class EncoderModel:
    cfg: EncoderConfig
    token_emb: Tensor
    pos_emb: Tensor
    blocks: list[AttentionBlock]
    final_norm: NormParams
    head: LinearLayer
    mvcr_cfg: MvcrConfig = field(default_factory=MvcrConfig)
    pools: dict[int, list[StochasticHae]] = field(default_factory=dict)

    @classmethod
    def create(cls, cfg: EncoderConfig,
               mvcr_cfg: MvcrConfig | None = None, seed: int = 0,
               dtype=np.float32) -> "EncoderModel":
        gen = np.random.default_rng(seed)
        d = cfg.hidden_dim
        bound = 1.0 / np.sqrt(d)
        model = cls(
            cfg=cfg,
            token_emb=Tensor(gen.uniform(-bound, bound,
                                         (cfg.vocab_size, d)).astype(dtype),
                             requires_grad=True),
            pos_emb=Tensor(gen.uniform(-bound, bound,
                                       (cfg.max_seq_len, d)).astype(dtype),
                           requires_grad=True),
            blocks=[AttentionBlock.create(gen, d, cfg.n_heads, cfg.ffn_dim,
                                          dtype)
                    for _ in range(cfg.num_layers)],
            final_norm=NormParams.create(d, dtype),
            head=LinearLayer.create(gen, cfg.num_classes, d, dtype),
            mvcr_cfg=mvcr_cfg or MvcrConfig(),
        )
        if model.mvcr_cfg.insertion_layers:
            model.pools = augment.build_pools(gen, model.mvcr_cfg, d,
                                              cfg.num_layers, dtype)
        return model

    # -- parameter bookkeeping ------------------------------------------------

    def backbone_params(self) -> list[Tensor]:
        out = [self.token_emb, self.pos_emb]
        for b in self.blocks:
            out.extend(b.params())
        out.extend(self.final_norm.params())
        return out

    def hae_params(self) -> list[Tensor]:
        out: list[Tensor] = []
        for layer in sorted(self.pools):
            for hae in self.pools[layer]:
                out.extend(hae.params())
        return out

    def param_groups(self) -> list[ParamGroup]:
        groups = [ParamGroup("backbone", self.backbone_params()),
                  ParamGroup("head", self.head.params()),
                  ParamGroup("hae", self.hae_params())]
        nn.validate_groups(groups, self.all_params())
        return groups

    def all_params(self) -> list[Tensor]:
        return self.backbone_params() + self.head.params() + self.hae_params()

    def named_params(self) -> dict[str, Tensor]:
        out = {"emb.token": self.token_emb, "emb.pos": self.pos_emb}
        for i, b in enumerate(self.blocks, start=1):
            out.update(b.named_params(f"block{i}"))
        out.update(self.final_norm.named_params("final_norm"))
        out.update(self.head.named_params("head"))
        for layer in sorted(self.pools):
            for m, hae in enumerate(self.pools[layer]):
                out.update(hae.named_params(f"hae.layer{layer}.member{m}"))
        return out

    # -- forward --------------------------------------------------------------

    def encode(self, ids: np.ndarray, mode: str, seed: int = 0, step: int = 0,
               pad_mask: np.ndarray | None = None,
               trace: AugmentationTrace | None = None,
               baseline: tuple[str, float] | None = None,
               mvcr_at_inference: bool = False,
               ) -> tuple[Tensor, dict[int, Tensor]]:
        """Returns (final hidden states [b, s, d], pre-augmentation
        activations at each insertion layer)."""
        ids = np.asarray(ids)
        b, s = ids.shape
        if s > self.cfg.max_seq_len:
            raise ValueError(f"sequence length {s} exceeds the maximum "
                             f"{self.cfg.max_seq_len}")
        if ids.size and ids.max() >= self.cfg.vocab_size:
            raise ValueError(f"token id {ids.max()} outside vocab "
                             f"{self.cfg.vocab_size}")
        mvcr_mode = "train" if (mode == "train" or mvcr_at_inference) \
            else "eval"
        training = mode == "train"

        h = T.add(T.embedding(self.token_emb, ids),
                  T.tile_leading(T.slice_axis(self.pos_emb, 0, 0, s), b))
        insert_acts: dict[int, Tensor] = {}
        for n, block in enumerate(self.blocks, start=1):
            h = block.forward(h, pad_mask)
            if baseline is not None and training:
                kind, strength = baseline
                if kind == "dropout":
                    h = nn.dropout(h, strength, seed, step, n)
                elif kind == "gaussian_noise":
                    h = nn.gaussian_noise(h, strength, seed, step, n)
            if n in self.pools:
                insert_acts[n] = h
                h = augment.mvcr_layer_forward(
                    h, self.pools[n], self.mvcr_cfg, seed, step, n,
                    mvcr_mode, pad_mask, trace)
        return self.final_norm.forward(h), insert_acts

    def task_forward(self, batch: Batch, mode: str, seed: int = 0,
                     step: int = 0, trace: AugmentationTrace | None = None,
                     baseline: tuple[str, float] | None = None,
                     mvcr_at_inference: bool = False,
                     ) -> tuple[Tensor, np.ndarray, dict[int, Tensor]]:
        """Returns (task loss, hard predictions, insertion activations)."""
        labels = np.asarray(batch.labels)
        if labels.size and labels.max() >= self.cfg.num_classes:
            raise ValueError(f"label {labels.max()} outside "
                             f"{self.cfg.num_classes} classes")
        h, insert_acts = self.encode(batch.ids, mode, seed, step,
                                     batch.pad_mask, trace, baseline,
                                     mvcr_at_inference)
        b, s, d = h.shape
        if self.cfg.task == "sequence-classify":
            pooled = T.reshape(T.slice_axis(h, 1, 0, 1), (b, d))
            logits = self.head.forward(pooled)  # [b, C]
            loss = T.mean_all(T.cross_entropy(logits, labels))
            preds = np.argmax(logits.data, axis=-1)
        else:
            logits = self.head.forward(h)  # [b, s, C]
            ce = T.cross_entropy(logits, labels)  # [b, s]
            mask = batch.label_mask
            if mask is None:
                mask = np.ones_like(labels, dtype=bool)
            weights = mask.astype(h.data.dtype)
            loss = T.scale(T.sum_all(T.mul(ce, Tensor(weights))),
                           1.0 / max(int(mask.sum()), 1))
            preds = np.argmax(logits.data, axis=-1)
        return loss, preds, insert_acts

    # -- plug-out -------------------------------------------------------------

    def strip_augmentation(self) -> "EncoderModel":
        """Same backbone and head parameters, no pools, no gated branch."""
        return EncoderModel(
            cfg=self.cfg,
            token_emb=self.token_emb,
            pos_emb=self.pos_emb,
            blocks=self.blocks,
            final_norm=self.final_norm,
            head=self.head,
            mvcr_cfg=replace(self.mvcr_cfg, enabled=False,
                             insertion_layers=(), pool_dims=()),
            pools={},
        )
