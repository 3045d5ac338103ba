"""Layer primitives and the baseline regularizers.

Everything here is a thin container of Tensors plus a forward function built
from tape ops. Parameter creation takes a numpy Generator so callers control
seeding; dtype is fixed per layer at creation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from . import tensor as T
from .tensor import Tensor


def _uniform_fan_in(gen: np.random.Generator, out_dim: int, in_dim: int, dtype):
    bound = 1.0 / np.sqrt(in_dim)
    return gen.uniform(-bound, bound, size=(out_dim, in_dim)).astype(dtype)


@dataclass
class LinearLayer:
    """Affine map x -> x @ weight.T + bias, weight shaped [out, in]."""

    weight: Tensor
    bias: Tensor

    @classmethod
    def create(cls, gen: np.random.Generator, out_dim: int, in_dim: int,
               dtype=np.float32) -> "LinearLayer":
        return cls(
            weight=Tensor(_uniform_fan_in(gen, out_dim, in_dim, dtype),
                          requires_grad=True),
            bias=Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True),
        )

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def forward(self, x: Tensor) -> Tensor:
        return T.affine(x, self.weight, self.bias)

    def params(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


@dataclass
class NormParams:
    """Learned gain and bias applied after last-axis standardization."""

    gain: Tensor
    bias: Tensor

    @classmethod
    def create(cls, dim: int, dtype=np.float32) -> "NormParams":
        return cls(
            gain=Tensor(np.ones(dim, dtype=dtype), requires_grad=True),
            bias=Tensor(np.zeros(dim, dtype=dtype), requires_grad=True),
        )

    def forward(self, x: Tensor) -> Tensor:
        return T.add(T.mul(T.layernorm(x), self.gain), self.bias)

    def params(self) -> list[Tensor]:
        return [self.gain, self.bias]

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.gain": self.gain, f"{prefix}.bias": self.bias}


@dataclass
class AttentionBlock:
    """Pre-norm self-attention + feed-forward residual block."""

    n_heads: int
    norm1: NormParams
    wq: LinearLayer
    wk: LinearLayer
    wv: LinearLayer
    wo: LinearLayer
    norm2: NormParams
    ff1: LinearLayer
    ff2: LinearLayer

    @classmethod
    def create(cls, gen: np.random.Generator, d: int, n_heads: int,
               ffn_dim: int, dtype=np.float32) -> "AttentionBlock":
        if d % n_heads != 0:
            raise ValueError(
                f"model dim {d} not divisible by head count {n_heads}")
        mk = lambda o, i: LinearLayer.create(gen, o, i, dtype)
        return cls(
            n_heads=n_heads,
            norm1=NormParams.create(d, dtype),
            wq=mk(d, d), wk=mk(d, d), wv=mk(d, d), wo=mk(d, d),
            norm2=NormParams.create(d, dtype),
            ff1=mk(ffn_dim, d), ff2=mk(d, ffn_dim),
        )

    def _split_heads(self, x: Tensor, b: int, s: int) -> Tensor:
        dh = x.shape[-1] // self.n_heads
        return T.transpose(T.reshape(x, (b, s, self.n_heads, dh)),
                           (0, 2, 1, 3))  # [b, h, s, dh]

    def forward(self, x: Tensor, pad_mask: np.ndarray | None = None,
                return_attn: bool = False):
        """x: [b, s, d]; pad_mask: bool [b, s], True where real tokens."""
        b, s, d = x.shape
        dh = d // self.n_heads
        h = self.norm1.forward(x)
        q = self._split_heads(self.wq.forward(h), b, s)
        k = self._split_heads(self.wk.forward(h), b, s)
        v = self._split_heads(self.wv.forward(h), b, s)
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))),
                         1.0 / np.sqrt(dh))  # [b, h, s, s]
        if pad_mask is not None:
            bias = np.where(pad_mask[:, None, None, :], 0.0, -1e9)
            bias = np.broadcast_to(bias, (b, self.n_heads, s, s))
            scores = T.add(scores, Tensor(bias.astype(x.data.dtype)))
        attn = T.softmax_last(scores)
        mixed = T.matmul(attn, v)  # [b, h, s, dh]
        mixed = T.reshape(T.transpose(mixed, (0, 2, 1, 3)), (b, s, d))
        x = T.add(x, self.wo.forward(mixed))
        x = T.add(x, self.ff2.forward(T.gelu(self.ff1.forward(
            self.norm2.forward(x)))))
        if return_attn:
            return x, attn
        return x

    def params(self) -> list[Tensor]:
        out = []
        for m in (self.norm1, self.wq, self.wk, self.wv, self.wo,
                  self.norm2, self.ff1, self.ff2):
            out.extend(m.params())
        return out

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, m in (("norm1", self.norm1), ("wq", self.wq),
                        ("wk", self.wk), ("wv", self.wv), ("wo", self.wo),
                        ("norm2", self.norm2), ("ff1", self.ff1),
                        ("ff2", self.ff2)):
            out.update(m.named_params(f"{prefix}.{name}"))
        return out


@dataclass
class ParamGroup:
    """Named set of trainable parameters with a shared freeze switch."""

    name: str  # backbone | head | hae
    params: list[Tensor] = field(default_factory=list)
    frozen: bool = False


def validate_groups(groups: list[ParamGroup],
                    all_params: list[Tensor]) -> None:
    """Every trainable parameter must sit in exactly one group."""
    counts: dict[int, int] = {}
    for g in groups:
        for p in g.params:
            counts[id(p)] = counts.get(id(p), 0) + 1
    for p in all_params:
        n = counts.get(id(p), 0)
        if n != 1:
            raise ValueError(
                f"parameter {p!r} appears in {n} groups, expected exactly 1")


# ---------------------------------------------------------------------------
# baseline regularizers

BASELINE_KINDS = ("dropout", "gaussian_noise", "weight_decay_to_init", "mixout")


def _gen_for(seed: int, step: int, layer: int) -> np.random.Generator:
    child = rng.derive_seed(seed, step, layer, rng.LAYER_WIDE,
                            rng.BASELINE_NOISE)
    return np.random.default_rng(child)


def dropout(x: Tensor, p: float, seed: int, step: int, layer: int,
            training: bool = True) -> Tensor:
    """Zero activations with prob p and rescale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout prob must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    gen = _gen_for(seed, step, layer)
    keep = (gen.random(size=x.shape) >= p).astype(x.data.dtype)
    keep *= x.data.dtype.type(1.0 / (1.0 - p))
    return T.mul(x, Tensor(keep))


def gaussian_noise(x: Tensor, scale: float, seed: int, step: int, layer: int,
                   training: bool = True) -> Tensor:
    """Add scale * standard normal noise elementwise."""
    if not training or scale == 0.0:
        return x
    gen = _gen_for(seed, step, layer)
    noise = (scale * gen.standard_normal(size=x.shape)).astype(x.data.dtype)
    return T.add(x, Tensor(noise))


def weight_decay_to_init(params: list[Tensor], inits: list[np.ndarray],
                         lam: float) -> Tensor:
    """Penalty (lam/2) * sum of squared distances from the initial values."""
    if len(params) != len(inits):
        raise ValueError("params and inits must align one-to-one")
    total = None
    for w, w0 in zip(params, inits):
        d = T.sub(w, Tensor(np.asarray(w0, dtype=w.data.dtype)))
        sq = T.sum_all(T.mul(d, d))
        total = sq if total is None else T.add(total, sq)
    return T.scale(total, lam / 2.0)


def mixout(params: list[Tensor], inits: list[np.ndarray], p: float,
           seed: int, step: int) -> None:
    """Swap each parameter element back to its initial value with prob p.

    Mutates parameter data in place; call between optimizer steps.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"mixout prob must be in [0, 1], got {p}")
    if p == 0.0:
        return
    gen = _gen_for(seed, step, rng.LAYER_WIDE)
    for w, w0 in zip(params, inits):
        swap = gen.random(size=w.shape) < p
        w.data = np.where(swap, np.asarray(w0, dtype=w.data.dtype), w.data)
