"""Wiring stochastic autoencoder pools into a backbone.

A pool of M hierarchical autoencoders sits after each configured layer.
During training each gated position routes through one uniformly chosen pool
member; at eval time (or when disabled) the layer output passes through
untouched, which is the whole point: the pools can be deleted after training.

Random draws are counter-based on (seed, step, layer, token, purpose), so
gate decisions never depend on pool size, batch iteration order, or each
other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from . import tensor as T
from .autoencoders import AutoencoderSpec, GateDraw, StochasticHae, Vae, \
    VaeMember
from .tensor import Tensor

GRANULARITIES = ("token", "layer")
MEMBER_KINDS = ("hae", "ae", "vae")


@dataclass(frozen=True)
class MvcrConfig:
    """Where pools sit and how their gates behave."""

    insertion_layers: tuple[int, ...] = ()  # 1-based layer indices
    pool_dims: tuple[int, ...] = ()  # one compression dim per pool member
    n_subs: int = 1  # sub-AEs inside each pool member
    layer_gate_prob: float = 0.5
    sub_skip_prob: float = 0.3
    granularity: str = "token"
    enabled: bool = True
    recon_into_backbone: bool = False  # let recon gradients reach the backbone
    member_kind: str = "hae"  # hae | ae (no sub-pool) | vae
    vae_beta: float = 1e-3  # KL weight when member_kind is vae
    mid_activation: bool = False  # tanh at the bottleneck, off by default

    def __post_init__(self):
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"granularity must be one of {GRANULARITIES}, "
                             f"got {self.granularity!r}")
        if self.member_kind not in MEMBER_KINDS:
            raise ValueError(f"member kind must be one of {MEMBER_KINDS}, "
                             f"got {self.member_kind!r}")
        for name in ("layer_gate_prob", "sub_skip_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.vae_beta < 0:
            raise ValueError(f"vae_beta must be >= 0, got {self.vae_beta}")
        if self.insertion_layers and not self.pool_dims:
            raise ValueError("insertion layers set but pool_dims is empty")
        if any(l < 1 for l in self.insertion_layers):
            raise ValueError("insertion layers are 1-based; got "
                             f"{self.insertion_layers}")

    @property
    def pool_size(self) -> int:
        return len(self.pool_dims)


def default_pool_dims(hidden_dim: int) -> tuple[int, ...]:
    """Three increasingly wide bottlenecks scaled to the backbone width."""
    if hidden_dim == 768:
        return (128, 256, 512)
    if hidden_dim == 64:
        return (16, 24, 48)
    dims = (max(hidden_dim // 4, 1), max(3 * hidden_dim // 8, 2),
            max(3 * hidden_dim // 4, 3))
    if dims[-1] >= hidden_dim:
        raise ValueError(f"hidden dim {hidden_dim} too small for a pool")
    return dims


def _make_member(gen: np.random.Generator, cfg: MvcrConfig, hidden_dim: int,
                 dh: int, index: int, dtype, mid_activation: bool):
    if cfg.member_kind == "vae":
        return VaeMember(Vae.create(gen, hidden_dim, dh, dtype), index,
                         cfg.vae_beta)
    spec = AutoencoderSpec(hidden_dim, dh, ()) if cfg.member_kind == "ae" \
        else AutoencoderSpec.halved_subs(hidden_dim, dh, cfg.n_subs)
    return StochasticHae.create(gen, spec, dtype=dtype,
                                sub_skip_prob=cfg.sub_skip_prob,
                                mid_activation=mid_activation)


def build_pools(gen: np.random.Generator, cfg: MvcrConfig, hidden_dim: int,
                n_layers: int, dtype=np.float32,
                mid_activation: bool | None = None,
                ) -> dict[int, list]:
    """One pool of M members per insertion layer."""
    bad = [l for l in cfg.insertion_layers if not 1 <= l <= n_layers]
    if bad:
        raise ValueError(
            f"insertion layers {bad} outside backbone depth {n_layers}")
    mid = cfg.mid_activation if mid_activation is None else mid_activation
    pools: dict[int, list] = {}
    for layer in sorted(set(cfg.insertion_layers)):
        pools[layer] = [
            _make_member(gen, cfg, hidden_dim, dh, i, dtype, mid)
            for i, dh in enumerate(cfg.pool_dims)]
    return pools


@dataclass
class AugmentationTrace:
    """Observability for one training step's stochastic decisions."""

    apply_masks: dict[int, np.ndarray] = field(default_factory=dict)
    member_picks: dict[int, np.ndarray] = field(default_factory=dict)
    sub_gate_z: dict[int, np.ndarray] = field(default_factory=dict)
    layer_draws: list[GateDraw] = field(default_factory=list)
    recon_losses: dict[int, list[float]] = field(default_factory=dict)

    def n_gated(self, layer: int) -> int:
        mask = self.apply_masks.get(layer)
        return 0 if mask is None else int(mask.sum())

    def record_tokens(self, layer: int, apply_mask: np.ndarray,
                      picks: np.ndarray, sub_z: np.ndarray) -> None:
        # picks / sub_z are stored for gated positions only
        self.apply_masks[layer] = apply_mask
        self.member_picks[layer] = picks[apply_mask]
        self.sub_gate_z[layer] = sub_z[apply_mask]


def stochastic_select(pool: list[StochasticHae], x: Tensor, seed: int,
                      step: int, layer: int, token: int = rng.LAYER_WIDE,
                      trace: AugmentationTrace | None = None,
                      ) -> tuple[Tensor, int]:
    """Route x through one uniformly chosen pool member (single draw)."""
    if not pool:
        raise ValueError("empty pool")
    member = 0 if len(pool) == 1 else rng.choice(
        seed, step, layer, token, rng.POOL_CHOICE, len(pool))
    out, draw = pool[member].stochastic_forward(x, seed, step, layer, token)
    if trace is not None:
        trace.layer_draws.append(draw)
    return out, member


def _token_ids(b: int, s: int) -> np.ndarray:
    return np.arange(b * s).reshape(b, s)


def _feature_mask(mask: np.ndarray, d: int, dtype) -> Tensor:
    return Tensor(np.repeat(mask[..., None].astype(dtype), d, axis=-1))


def mvcr_layer_forward(x: Tensor, pool: list[StochasticHae], cfg: MvcrConfig,
                       seed: int, step: int, layer: int, mode: str,
                       pad_mask: np.ndarray | None = None,
                       trace: AugmentationTrace | None = None) -> Tensor:
    """Stochastically augment one layer's output x of shape [b, s, d].

    Eval mode, a disabled config, or a zero gate probability pass x through
    unchanged. In train mode every gated position routes through one pool
    member; padding positions never gate.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    if mode == "eval" or not cfg.enabled or cfg.layer_gate_prob == 0.0:
        return x
    if not pool:
        raise ValueError("empty pool")
    b, s, d = x.shape

    if cfg.granularity == "layer":
        z = rng.uniform(seed, step, layer, rng.LAYER_WIDE, rng.LAYER_GATE)
        if trace is not None:
            trace.apply_masks[layer] = np.full(
                (1,), z <= cfg.layer_gate_prob)
        if z > cfg.layer_gate_prob:
            if trace is not None:
                trace.layer_draws.append(
                    GateDraw(step, layer, rng.LAYER_WIDE, z, -1))
            return x
        out, _ = stochastic_select(pool, x, seed, step, layer,
                                   trace=trace)
        if pad_mask is None:
            return out
        keep = _feature_mask(pad_mask, d, x.data.dtype)
        drop = _feature_mask(~pad_mask, d, x.data.dtype)
        return T.add(T.mul(out, keep), T.mul(x, drop))

    # token granularity: independent (gate, member, sub-gate) per position
    tokens = _token_ids(b, s)
    gate_z = rng.uniform(seed, step, layer, tokens, rng.LAYER_GATE)
    apply = gate_z <= cfg.layer_gate_prob
    if pad_mask is not None:
        apply &= pad_mask
    picks = rng.choice(seed, step, layer, tokens, rng.POOL_CHOICE, len(pool))
    sub_z = rng.uniform(seed, step, layer, tokens, rng.SUB_GATE)
    sub_pick = rng.choice(seed, step, layer, tokens, rng.SUB_CHOICE,
                          max(cfg.n_subs, 1))
    if trace is not None:
        trace.record_tokens(layer, apply, picks, sub_z)
    if not apply.any():
        return x

    out = T.mul(x, _feature_mask(~apply, d, x.data.dtype))
    for m, hae in enumerate(pool):
        sel = apply & (picks == m)
        if not sel.any():
            continue
        routed = hae.stochastic_tokens(x, sub_z, sub_pick, seed, step, layer)
        out = T.add(out, T.mul(routed, _feature_mask(sel, d, x.data.dtype)))
    return out


def reconstruction_loss(x: Tensor, pool: list[StochasticHae], cfg: MvcrConfig,
                        seed: int, step: int, layer: int,
                        pad_mask: np.ndarray | None = None,
                        trace: AugmentationTrace | None = None) -> Tensor:
    """Mean squared error between x and every pool member's output, averaged
    over members, real tokens, batch, and features.

    Every member contributes every step, whatever the forward pass selected.
    Member gates re-roll on a per-member stream. Gradients reach only the
    pool unless cfg.recon_into_backbone is set.
    """
    if not pool:
        raise ValueError("empty pool")
    target = x if cfg.recon_into_backbone else x.detach()
    b, s, d = target.shape
    tokens = _token_ids(b, s)

    if pad_mask is not None and not pad_mask.all():
        n_real = int(pad_mask.sum())
        mask = _feature_mask(pad_mask, d, target.data.dtype)
    else:
        n_real, mask = b * s, None

    total: Tensor | None = None
    per_member: list[float] = []
    for m, hae in enumerate(pool):
        gp = rng.member_purpose(rng.SUB_GATE, m)
        cp = rng.member_purpose(rng.SUB_CHOICE, m)
        if cfg.granularity == "layer":
            out, _ = hae.stochastic_forward(target, seed, step, layer,
                                            gate_purpose=gp,
                                            choice_purpose=cp)
        else:
            sub_z = rng.uniform(seed, step, layer, tokens, gp)
            sub_pick = rng.choice(seed, step, layer, tokens, cp,
                                  max(cfg.n_subs, 1))
            out = hae.stochastic_tokens(target, sub_z, sub_pick, seed, step,
                                        layer)
        diff = T.sub(target, out)
        sq = T.mul(diff, diff)
        if mask is not None:
            sq = T.mul(sq, mask)
        member_loss = T.scale(T.sum_all(sq), 1.0 / (n_real * d))
        kl = getattr(hae, "pop_kl", lambda: None)()
        if kl is not None:  # variational members fold in beta * KL
            member_loss = T.add(member_loss, kl)
        per_member.append(float(member_loss.data))
        total = member_loss if total is None else T.add(total, member_loss)
    if trace is not None:
        trace.recon_losses[layer] = per_member
    return T.scale(total, 1.0 / len(pool))


def plug_out(model):
    """Backbone + head with every pool removed; forward has no gated branch."""
    return model.strip_augmentation()
