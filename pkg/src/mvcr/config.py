"""Flat dotted-key experiment configs.

A config file is plain text, one `key = value` per line, `#` comments on
their own lines. Namespaces are dotted (task.*, model.*, mvcr.*, train.*,
output.*). Every key has a default; unknown keys are an error rather than a
silently ignored typo. The same flat dict format is what sweep drivers
generate and what checkpoints echo back.
"""

from __future__ import annotations

import difflib
from dataclasses import dataclass

import numpy as np

from . import data
from .augment import MvcrConfig
from .model import EncoderConfig, EncoderModel
from .training import TrainSchedule

TASK_KINDS = ("seq-classify", "token-tag")


def _parse_bool(s: str) -> bool:
    if s not in ("true", "false"):
        raise ValueError(f"expected true or false, got {s!r}")
    return s == "true"


def _parse_ints(s: str) -> tuple[int, ...]:
    return tuple(int(p) for p in s.split(",") if p.strip() != "")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


_PARSERS = {int: int, float: float, bool: _parse_bool, str: str,
            tuple: _parse_ints}

# key -> (type, default)
KEYS: dict[str, tuple[type, object]] = {
    "task.kind": (str, "seq-classify"),
    "task.n_train": (int, 256),
    "task.n_dev": (int, 128),
    "task.n_test": (int, 256),
    "task.vocab": (int, 64),
    "task.seq_len": (int, 16),
    "task.num_classes": (int, 2),
    "task.num_tags": (int, 3),
    "task.spurious_train": (float, 0.9),
    "model.layers": (int, 4),
    "model.hidden_dim": (int, 64),
    "model.heads": (int, 4),
    "model.ffn_dim": (int, 128),
    "model.max_seq_len": (int, 32),
    "mvcr.layers": (tuple, ()),
    "mvcr.pool_dims": (tuple, (16, 24, 48)),
    "mvcr.n_subs": (int, 1),
    "mvcr.layer_gate_prob": (float, 0.5),
    "mvcr.sub_skip_prob": (float, 0.3),
    "mvcr.granularity": (str, "token"),
    "mvcr.kind": (str, "hae"),
    "mvcr.vae_beta": (float, 1e-3),
    "mvcr.recon_into_backbone": (bool, False),
    "mvcr.mid_activation": (bool, False),
    "train.total_epochs": (int, 100),
    "train.pretrain_epochs": (int, 20),
    "train.batch_size": (int, 32),
    "train.lr_task": (float, 2e-5),
    "train.lr_mse": (float, 2e-3),
    "train.seed": (int, 0),
    "train.baseline": (str, "none"),
    "train.baseline_strength": (float, 0.0),
    "train.eval_every": (int, 1),
    "output.dir": (str, "runs/default"),
}


def parse_config_text(text: str) -> dict[str, str]:
    """Raw key -> value strings; no typing, no defaults."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, "
                             f"got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def check_keys(flat: dict[str, str]) -> None:
    unknown = sorted(set(flat) - set(KEYS))
    if unknown:
        hints = []
        for k in unknown:
            close = difflib.get_close_matches(k, KEYS, n=1)
            hints.append(f"{k!r}" + (f" (did you mean {close[0]!r}?)"
                                     if close else ""))
        raise ValueError("unknown config keys: " + ", ".join(hints))


def resolve(flat: dict[str, str]) -> dict[str, object]:
    """Typed values for every key, defaults filled in, unknowns rejected."""
    check_keys(flat)
    out: dict[str, object] = {}
    for key, (typ, default) in KEYS.items():
        if key in flat:
            try:
                out[key] = _PARSERS[typ](flat[key])
            except ValueError as e:
                raise ValueError(f"bad value for {key}: {e}") from None
        else:
            out[key] = default
    return out


def format_config(flat: dict[str, str]) -> str:
    return "".join(f"{k} = {flat[k]}\n" for k in sorted(flat))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run needs: data, model, augmentation, schedule."""

    task_kind: str
    n_train: int
    n_dev: int
    n_test: int
    vocab: int
    seq_len: int
    num_classes: int
    num_tags: int
    spurious_train: float
    encoder: EncoderConfig
    mvcr: MvcrConfig | None
    schedule: TrainSchedule
    output_dir: str

    @classmethod
    def from_flat(cls, flat: dict[str, str]) -> "ExperimentConfig":
        v = resolve(flat)
        kind = v["task.kind"]
        if kind not in TASK_KINDS:
            raise ValueError(f"task.kind must be one of {TASK_KINDS}, "
                             f"got {kind!r}")
        if v["model.max_seq_len"] < v["task.seq_len"]:
            raise ValueError(
                f"model.max_seq_len {v['model.max_seq_len']} shorter than "
                f"task.seq_len {v['task.seq_len']}")
        num_classes = v["task.num_classes"] if kind == "seq-classify" \
            else v["task.num_tags"] + 1  # tag 0 is background
        encoder = EncoderConfig(
            num_layers=v["model.layers"],
            hidden_dim=v["model.hidden_dim"],
            n_heads=v["model.heads"],
            ffn_dim=v["model.ffn_dim"],
            vocab_size=v["task.vocab"],
            max_seq_len=v["model.max_seq_len"],
            task="sequence-classify" if kind == "seq-classify"
            else "token-tag",
            num_classes=num_classes,
        )
        mvcr = None
        if v["mvcr.layers"]:
            mvcr = MvcrConfig(
                insertion_layers=v["mvcr.layers"],
                pool_dims=v["mvcr.pool_dims"],
                n_subs=v["mvcr.n_subs"],
                layer_gate_prob=v["mvcr.layer_gate_prob"],
                sub_skip_prob=v["mvcr.sub_skip_prob"],
                granularity=v["mvcr.granularity"],
                member_kind=v["mvcr.kind"],
                vae_beta=v["mvcr.vae_beta"],
                recon_into_backbone=v["mvcr.recon_into_backbone"],
                mid_activation=v["mvcr.mid_activation"],
            )
            too_wide = [d for d in mvcr.pool_dims
                        if d >= encoder.hidden_dim]
            if too_wide:
                raise ValueError(f"pool dims {too_wide} not below hidden "
                                 f"dim {encoder.hidden_dim}")
        baseline = v["train.baseline"]
        schedule = TrainSchedule(
            total_epochs=v["train.total_epochs"],
            pretrain_epochs=v["train.pretrain_epochs"],
            batch_size=v["train.batch_size"],
            lr_task=v["train.lr_task"],
            lr_mse=v["train.lr_mse"],
            seed=v["train.seed"],
            baseline_kind=None if baseline == "none" else baseline,
            baseline_strength=v["train.baseline_strength"],
            eval_every=v["train.eval_every"],
        )
        return cls(
            task_kind=kind,
            n_train=v["task.n_train"], n_dev=v["task.n_dev"],
            n_test=v["task.n_test"], vocab=v["task.vocab"],
            seq_len=v["task.seq_len"], num_classes=v["task.num_classes"],
            num_tags=v["task.num_tags"],
            spurious_train=v["task.spurious_train"],
            encoder=encoder, mvcr=mvcr, schedule=schedule,
            output_dir=v["output.dir"],
        )

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        return cls.from_flat(parse_config_text(text))

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as f:
            return cls.from_text(f.read())

    def to_flat(self) -> dict[str, str]:
        mv = self.mvcr
        values = {
            "task.kind": self.task_kind,
            "task.n_train": self.n_train,
            "task.n_dev": self.n_dev,
            "task.n_test": self.n_test,
            "task.vocab": self.vocab,
            "task.seq_len": self.seq_len,
            "task.num_classes": self.num_classes,
            "task.num_tags": self.num_tags,
            "task.spurious_train": self.spurious_train,
            "model.layers": self.encoder.num_layers,
            "model.hidden_dim": self.encoder.hidden_dim,
            "model.heads": self.encoder.n_heads,
            "model.ffn_dim": self.encoder.ffn_dim,
            "model.max_seq_len": self.encoder.max_seq_len,
            "mvcr.layers": mv.insertion_layers if mv else (),
            "mvcr.pool_dims": mv.pool_dims if mv
            else KEYS["mvcr.pool_dims"][1],
            "mvcr.n_subs": mv.n_subs if mv else KEYS["mvcr.n_subs"][1],
            "mvcr.layer_gate_prob": mv.layer_gate_prob if mv
            else KEYS["mvcr.layer_gate_prob"][1],
            "mvcr.sub_skip_prob": mv.sub_skip_prob if mv
            else KEYS["mvcr.sub_skip_prob"][1],
            "mvcr.granularity": mv.granularity if mv
            else KEYS["mvcr.granularity"][1],
            "mvcr.kind": mv.member_kind if mv else KEYS["mvcr.kind"][1],
            "mvcr.vae_beta": mv.vae_beta if mv else KEYS["mvcr.vae_beta"][1],
            "mvcr.recon_into_backbone": mv.recon_into_backbone if mv
            else KEYS["mvcr.recon_into_backbone"][1],
            "mvcr.mid_activation": mv.mid_activation if mv
            else KEYS["mvcr.mid_activation"][1],
            "train.total_epochs": self.schedule.total_epochs,
            "train.pretrain_epochs": self.schedule.pretrain_epochs,
            "train.batch_size": self.schedule.batch_size,
            "train.lr_task": self.schedule.lr_task,
            "train.lr_mse": self.schedule.lr_mse,
            "train.seed": self.schedule.seed,
            "train.baseline": self.schedule.baseline_kind or "none",
            "train.baseline_strength": self.schedule.baseline_strength,
            "train.eval_every": self.schedule.eval_every,
            "output.dir": self.output_dir,
        }
        return {k: _fmt(v) for k, v in values.items()}

    def to_text(self) -> str:
        return format_config(self.to_flat())

    # -- builders -------------------------------------------------------------

    def build_dataset(self) -> data.TaskData:
        sizes = (self.n_train, self.n_dev, self.n_test)
        if self.task_kind == "seq-classify":
            return data.generate_seq_task(
                sizes, vocab=self.vocab, seq_len=self.seq_len,
                num_classes=self.num_classes, seed=self.schedule.seed,
                spurious_strength_train=self.spurious_train)
        return data.generate_token_task(
            sizes, vocab=self.vocab, seq_len=self.seq_len,
            num_tags=self.num_tags, seed=self.schedule.seed)

    def build_model(self, dtype=np.float32) -> EncoderModel:
        return EncoderModel.create(self.encoder, self.mvcr,
                                   seed=self.schedule.seed, dtype=dtype)


def apply_overrides(flat: dict[str, str],
                    overrides: list[str]) -> dict[str, str]:
    """Apply `key=value` strings on top of a parsed config."""
    out = dict(flat)
    for ov in overrides:
        if "=" not in ov:
            raise ValueError(f"override {ov!r} is not key=value")
        key, value = (p.strip() for p in ov.split("=", 1))
        out[key] = value
    check_keys(out)
    return out
