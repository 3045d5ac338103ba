"""Autoencoder family: plain, hierarchical with a sub-pool, and variational.

The stochastic hierarchical autoencoder (HAE) compresses d -> d_hat -> d and,
with probability 1 - sub_skip_prob, detours the middle representation through
a randomly chosen sub-autoencoder (d_hat -> d_sub -> d_hat). The skip branch
is graph-identical to the plain autoencoder, which is what lets the whole
stack be removed at inference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from . import tensor as T
from .nn import LinearLayer
from .tensor import Tensor

SUB_SKIP_PROB = 0.3  # skip the sub-pool when the gate draw is at or below this


@dataclass(frozen=True)
class AutoencoderSpec:
    """Dimensions of one (possibly hierarchical) autoencoder."""

    input_dim: int
    compression_dim: int
    sub_dims: tuple[int, ...] = ()

    def __post_init__(self):
        d, dh = self.input_dim, self.compression_dim
        if not 0 < dh < d:
            raise ValueError(
                f"compression dim must satisfy 0 < {dh} < {d}")
        for ds in self.sub_dims:
            if not 0 < ds < dh:
                raise ValueError(
                    f"sub dim must satisfy 0 < {ds} < {dh}")

    @classmethod
    def halved_subs(cls, input_dim: int, compression_dim: int,
                    n_subs: int) -> "AutoencoderSpec":
        """Sub-AEs all at half the compression dim."""
        return cls(input_dim, compression_dim,
                   (max(compression_dim // 2, 1),) * n_subs)


@dataclass
class GateDraw:
    """One stochastic routing decision, reproducible from its counters."""

    step: int
    layer: int
    token: int  # LAYER_WIDE sentinel for a layer-level draw
    z: float
    branch: int  # -1 = skip branch, otherwise sub-AE index


@dataclass
class Autoencoder:
    """Two-projection bottleneck: up(down(x)), optionally tanh in the middle."""

    down: LinearLayer
    up: LinearLayer
    mid_activation: bool = False

    @classmethod
    def create(cls, gen: np.random.Generator, in_dim: int, mid_dim: int,
               dtype=np.float32, mid_activation: bool = False) -> "Autoencoder":
        return cls(down=LinearLayer.create(gen, mid_dim, in_dim, dtype),
                   up=LinearLayer.create(gen, in_dim, mid_dim, dtype),
                   mid_activation=mid_activation)

    @property
    def in_dim(self) -> int:
        return self.down.in_dim

    def encode(self, x: Tensor) -> Tensor:
        mid = self.down.forward(x)
        return T.tanh(mid) if self.mid_activation else mid

    def forward(self, x: Tensor) -> Tensor:
        return self.up.forward(self.encode(x))

    def params(self) -> list[Tensor]:
        return self.down.params() + self.up.params()

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {**self.down.named_params(f"{prefix}.down"),
                **self.up.named_params(f"{prefix}.up")}


@dataclass
class StochasticHae:
    """Hierarchical autoencoder with a stochastically gated sub-AE pool."""

    spec: AutoencoderSpec
    down: LinearLayer  # d -> d_hat
    up: LinearLayer  # d_hat -> d
    subs: list[Autoencoder]  # each d_hat -> d_sub -> d_hat
    sub_skip_prob: float = SUB_SKIP_PROB
    mid_activation: bool = False

    @classmethod
    def create(cls, gen: np.random.Generator, spec: AutoencoderSpec,
               dtype=np.float32, sub_skip_prob: float = SUB_SKIP_PROB,
               mid_activation: bool = False) -> "StochasticHae":
        d, dh = spec.input_dim, spec.compression_dim
        return cls(
            spec=spec,
            down=LinearLayer.create(gen, dh, d, dtype),
            up=LinearLayer.create(gen, d, dh, dtype),
            subs=[Autoencoder.create(gen, dh, ds, dtype, mid_activation)
                  for ds in spec.sub_dims],
            sub_skip_prob=sub_skip_prob,
            mid_activation=mid_activation,
        )

    def encode(self, x: Tensor) -> Tensor:
        mid = self.down.forward(x)
        return T.tanh(mid) if self.mid_activation else mid

    def forward_plain(self, x: Tensor) -> Tensor:
        """up(down(x)), no sub-pool."""
        return self.up.forward(self.encode(x))

    def forward(self, x: Tensor, sub_index: int | None = None) -> Tensor:
        """Deterministic forward; sub_index None takes the skip branch."""
        if sub_index is None:
            return self.forward_plain(x)
        if not 0 <= sub_index < len(self.subs):
            raise IndexError(
                f"sub index {sub_index} outside pool of {len(self.subs)}")
        return self.up.forward(self.subs[sub_index].forward(self.encode(x)))

    def _branch(self, z: float, seed: int, step: int, layer: int,
                token, purpose_choice: int) -> int:
        if z <= self.sub_skip_prob or not self.subs:
            return -1
        return rng.choice(seed, step, layer, token, purpose_choice,
                          len(self.subs))

    def stochastic_forward(self, x: Tensor, seed: int, step: int, layer: int,
                           token: int = rng.LAYER_WIDE,
                           gate_purpose: int = rng.SUB_GATE,
                           choice_purpose: int = rng.SUB_CHOICE,
                           ) -> tuple[Tensor, GateDraw]:
        """One gate draw routing the whole tensor (layer-level granularity)."""
        z = rng.uniform(seed, step, layer, token, gate_purpose)
        branch = self._branch(z, seed, step, layer, token, choice_purpose)
        out = self.forward(x, None if branch < 0 else branch)
        return out, GateDraw(step, layer, token, z, branch)

    def stochastic_tokens(self, x: Tensor, sub_z: np.ndarray,
                          sub_pick: np.ndarray, seed: int = 0, step: int = 0,
                          layer: int = 0) -> Tensor:
        """Per-token routing: x is [b, s, d]; sub_z, sub_pick are [b, s].

        Tokens with sub_z <= sub_skip_prob keep the plain bottleneck; the
        rest detour through their picked sub-AE. Implemented by mixing the
        middle representation with one-hot masks so all tokens share one
        graph. The counter arguments exist for interface parity with noise
        members and are unused here: the routing arrays decide everything.
        """
        mid = self.encode(x)
        if not self.subs:
            return self.up.forward(mid)
        dtype = x.data.dtype
        skip = (sub_z <= self.sub_skip_prob)
        dh = self.spec.compression_dim
        mix = T.mul(mid, Tensor(np.repeat(
            skip[..., None].astype(dtype), dh, axis=-1)))
        for i, sub in enumerate(self.subs):
            sel = (~skip) & (sub_pick == i)
            if not sel.any():
                continue
            mask = Tensor(np.repeat(sel[..., None].astype(dtype), dh, axis=-1))
            mix = T.add(mix, T.mul(sub.forward(mid), mask))
        return self.up.forward(mix)

    def params(self) -> list[Tensor]:
        out = self.down.params() + self.up.params()
        for s in self.subs:
            out.extend(s.params())
        return out

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out = {**self.down.named_params(f"{prefix}.down"),
               **self.up.named_params(f"{prefix}.up")}
        for i, s in enumerate(self.subs):
            out.update(s.named_params(f"{prefix}.sub{i}"))
        return out


@dataclass
class Vae:
    """Diagonal-Gaussian variational autoencoder (ablation stand-in)."""

    enc_mu: LinearLayer  # d -> d_hat
    enc_logvar: LinearLayer  # d -> d_hat
    dec: LinearLayer  # d_hat -> d

    @classmethod
    def create(cls, gen: np.random.Generator, in_dim: int, mid_dim: int,
               dtype=np.float32) -> "Vae":
        return cls(enc_mu=LinearLayer.create(gen, mid_dim, in_dim, dtype),
                   enc_logvar=LinearLayer.create(gen, mid_dim, in_dim, dtype),
                   dec=LinearLayer.create(gen, in_dim, mid_dim, dtype))

    def forward(self, x: Tensor, seed: int, step: int, layer: int,
                training: bool = True,
                noise_purpose: int = rng.VAE_NOISE) -> tuple[Tensor, Tensor]:
        """Returns (reconstruction, kl). Eval mode decodes the mean."""
        mu = self.enc_mu.forward(x)
        logvar = self.enc_logvar.forward(x)
        if not np.isfinite(logvar.data).all():
            raise FloatingPointError(
                "VAE log-variance is non-finite; check encoder weights")
        if training:
            child = rng.derive_seed(seed, step, layer, rng.LAYER_WIDE,
                                    noise_purpose)
            eps = np.random.default_rng(child).standard_normal(
                size=logvar.shape).astype(x.data.dtype)
            std = T.exp(T.scale(logvar, 0.5))
            sample = T.add(mu, T.mul(std, Tensor(eps)))
        else:
            sample = mu
        out = self.dec.forward(sample)
        # KL(N(mu, sigma^2) || N(0, I)) = 1/2 sum(mu^2 + sigma^2 - 1 - logvar),
        # summed over the latent axis, averaged over positions
        term = T.sub(T.add(T.mul(mu, mu), T.exp(logvar)),
                     T.shift(logvar, 1.0))
        n_positions = max(int(np.prod(mu.shape[:-1])), 1)
        kl = T.scale(T.sum_all(term), 0.5 / n_positions)
        return out, kl

    def params(self) -> list[Tensor]:
        return self.enc_mu.params() + self.enc_logvar.params() + self.dec.params()

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {**self.enc_mu.named_params(f"{prefix}.mu"),
                **self.enc_logvar.named_params(f"{prefix}.logvar"),
                **self.dec.named_params(f"{prefix}.dec")}


@dataclass
class VaeMember:
    """Adapts a VAE to the pool-member interface the augmenter expects.

    There is no sub-gate: every routed position gets a fresh reparameterized
    sample on a per-member counter stream. The KL term of the latest forward
    is parked in pop_kl so the reconstruction loss can fold in beta * KL
    without the augmenter knowing member internals.
    """

    vae: Vae
    index: int  # position in the pool, namespaces the noise stream
    kl_beta: float = 1e-3

    def __post_init__(self):
        self._pending_kl: Tensor | None = None

    def _run(self, x: Tensor, seed: int, step: int, layer: int) -> Tensor:
        out, kl = self.vae.forward(
            x, seed, step, layer, training=True,
            noise_purpose=rng.member_purpose(rng.VAE_NOISE, self.index))
        self._pending_kl = T.scale(kl, self.kl_beta)
        return out

    def stochastic_forward(self, x: Tensor, seed: int, step: int, layer: int,
                           token: int = rng.LAYER_WIDE,
                           gate_purpose: int = rng.SUB_GATE,
                           choice_purpose: int = rng.SUB_CHOICE,
                           ) -> tuple[Tensor, GateDraw]:
        out = self._run(x, seed, step, layer)
        return out, GateDraw(step, layer, token, 0.0, -1)

    def stochastic_tokens(self, x: Tensor, sub_z: np.ndarray,
                          sub_pick: np.ndarray, seed: int = 0, step: int = 0,
                          layer: int = 0) -> Tensor:
        # the routing arrays are gate machinery for hierarchical members;
        # a VAE's only stochasticity is its sampling noise
        return self._run(x, seed, step, layer)

    def pop_kl(self) -> Tensor | None:
        kl, self._pending_kl = self._pending_kl, None
        return kl

    def params(self) -> list[Tensor]:
        return self.vae.params()

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return self.vae.named_params(prefix)
