"""Command-line surface: train, eval, fig1-demo, ablate, inspect.

Every command is reproducible from (config, seed); artifacts differ only in
timestamp fields. Relative output directories resolve under the
MVCR_OUTPUT_ROOT environment variable when it is set.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import ablate, augment, checkpoint, data, pgm, rng, training
from . import config as cfg_mod
from . import tensor as T
from .autoencoders import Autoencoder
from .model import EncoderModel
from .tensor import Tape, Tensor
from .training import Adam

ENV_OUTPUT_ROOT = "MVCR_OUTPUT_ROOT"


def resolve_output_dir(dir_str) -> Path:
    p = Path(dir_str)
    if p.is_absolute():
        return p
    root = os.environ.get(ENV_OUTPUT_ROOT)
    return Path(root) / p if root else p


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2))


# ---------------------------------------------------------------------------
# train

def cmd_train(args) -> int:
    cfg_path = Path(args.config)
    if not cfg_path.exists():
        raise FileNotFoundError(f"config file not found: {cfg_path}")
    flat = cfg_mod.parse_config_text(cfg_path.read_text())
    flat = cfg_mod.apply_overrides(flat, args.override)
    if args.seed is not None:
        flat = cfg_mod.apply_overrides(flat, [f"train.seed={args.seed}"])
    exp = cfg_mod.ExperimentConfig.from_flat(flat)

    outdir = resolve_output_dir(exp.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    model = exp.build_model()
    dataset = exp.build_dataset()
    run = training.run_training(model, dataset, exp.schedule,
                                log_path=outdir / "run.jsonl")

    echo = exp.to_text()
    seed = exp.schedule.seed
    checkpoint.save_checkpoint(outdir / "final.ckpt", run.final_state, seed,
                               echo)
    checkpoint.save_checkpoint(outdir / "best.ckpt", run.best_state, seed,
                               echo)
    # the deployable artifact: best parameters with every pool removed
    training.load_state(model, run.best_state)
    stripped = augment.plug_out(model)
    stripped_echo = dataclasses.replace(exp, mvcr=None).to_text()
    checkpoint.save_model(outdir / "plugout.ckpt", stripped, seed,
                          stripped_echo)

    test_at_best = None
    for rec in run.history:
        if rec["epoch"] == run.best_epoch:
            test_at_best = rec["test_metric"]
    _emit({
        "best_epoch": run.best_epoch,
        "best_dev": None if run.best_dev == -np.inf else run.best_dev,
        "test_at_best": test_at_best,
        "epochs_run": len(run.history),
        "log": str(outdir / "run.jsonl"),
        "checkpoints": {k: str(outdir / f"{k}.ckpt")
                        for k in ("final", "best", "plugout")},
    })
    return 0


# ---------------------------------------------------------------------------
# eval / inspect

def _load_model(path):
    ckpt_path = Path(path)
    if not ckpt_path.exists():
        raise FileNotFoundError(f"checkpoint not found: {ckpt_path}")
    ck = checkpoint.load_checkpoint(ckpt_path)
    exp = cfg_mod.ExperimentConfig.from_text(ck.config_text)
    model = exp.build_model(dtype=ck.dtype)
    training.load_state(model, dict(ck.params))
    return ck, exp, model


def cmd_eval(args) -> int:
    ck, exp, model = _load_model(args.checkpoint)
    dataset = exp.build_dataset()
    split = {"train": dataset.train, "dev": dataset.dev,
             "test": dataset.test}[args.split]
    metric = training.evaluate(model, split, exp.schedule.batch_size,
                               mvcr_at_inference=args.with_mvcr)
    _emit({
        "checkpoint": str(args.checkpoint),
        "split": args.split,
        "n": len(split),
        "metric_name": "accuracy" if exp.encoder.task == "sequence-classify"
        else "token_f1",
        "metric": metric,
        "with_mvcr": bool(args.with_mvcr),
    })
    return 0


def cmd_inspect(args) -> int:
    ck, exp, model = _load_model(args.checkpoint)
    counts = {"backbone": 0, "head": 0, "hae": 0}
    for name, arr in ck.params.items():
        if name.startswith("head."):
            counts["head"] += arr.size
        elif name.startswith("hae."):
            counts["hae"] += arr.size
        else:
            counts["backbone"] += arr.size
    vanilla = EncoderModel.create(exp.encoder, None, seed=0, dtype=ck.dtype)
    vanilla_count = sum(p.data.size for p in vanilla.all_params())
    matches = counts["backbone"] + counts["head"] == vanilla_count
    _emit({
        "checkpoint": str(args.checkpoint),
        "seed": ck.seed,
        "dtype": str(np.dtype(ck.dtype)),
        "params": {**counts, "total": sum(counts.values())},
        "vanilla_param_count": int(vanilla_count),
        "plug_out_matches_vanilla": bool(matches),
    })
    return 0 if matches else 1


# ---------------------------------------------------------------------------
# fig1-demo

def _train_denoiser(dim: int, seed: int, sigma: float, epochs: int,
                    lr: float, batch: int, n_train: int, n_test: int):
    """Linear bottleneck autoencoder: noisy glyphs in, clean glyphs out."""
    train = data.generate_digits(
        n_train, sigma, seed=rng.derive_seed(seed, 0, 0, 0, rng.DATA_ORDER))
    test = data.generate_digits(
        n_test, sigma, seed=rng.derive_seed(seed, 0, 0, 1, rng.DATA_ORDER))
    gen = np.random.default_rng(rng.derive_seed(seed, 0, 0, 2, rng.DATA_ORDER))
    ae = Autoencoder.create(gen, 784, dim, dtype=np.float64)
    opt = Adam(lr)
    for epoch in range(epochs):
        order = np.random.default_rng(
            rng.derive_seed(seed, epoch, 0, 3, rng.DATA_ORDER)
        ).permutation(n_train)
        for i in range(0, n_train, batch):
            idx = order[i:i + batch]
            xb = Tensor(train.noisy[idx].astype(np.float64))
            yb = Tensor(train.clean[idx].astype(np.float64))
            with Tape() as tape:
                loss = T.mse(ae.forward(xb), yb)
            grads = T.backward(tape, loss)
            opt.step(ae.params(), grads)
    with Tape():
        recon = ae.forward(Tensor(test.noisy.astype(np.float64)))
        mse = float(T.mse(recon, Tensor(test.clean.astype(np.float64))).data)
    return mse, test, recon.data


def cmd_fig1(args) -> int:
    dims = tuple(int(d) for d in args.dims.split(","))
    if any(not 0 < d < 784 for d in dims):
        raise ValueError(f"dims must be in (0, 784), got {dims}")
    if args.sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {args.sigma}")
    outdir = resolve_output_dir(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    results: dict[int, list[float]] = {d: [] for d in dims}
    for seed in range(args.seeds):
        for dim in dims:
            mse, test, recon = _train_denoiser(
                dim, seed, args.sigma, args.epochs, lr=2e-3, batch=128,
                n_train=args.n_train, n_test=args.n_test)
            results[dim].append(mse)
            if seed == 0:
                k = min(8, len(test.clean))
                grid = pgm.tile_images(
                    np.concatenate([test.noisy[:k], recon[:k],
                                    test.clean[:k]]), cols=k)
                pgm.write_pgm(outdir / f"recon_dim{dim:03d}.pgm", grid)

    with open(outdir / "mse.csv", "w") as f:
        f.write("dim,seed,mse,mse_mean,mse_std\n")
        for dim in dims:
            mean = float(np.mean(results[dim]))
            std = float(np.std(results[dim]))
            for seed, mse in enumerate(results[dim]):
                f.write(f"{dim},{seed},{mse!r},{mean!r},{std!r}\n")

    means = {d: float(np.mean(results[d])) for d in dims}
    by_size = sorted(dims)
    _emit({
        "sigma": args.sigma,
        "seeds": args.seeds,
        "mse_mean": {str(d): means[d] for d in dims},
        "wider_is_better": all(
            means[a] > means[b] for a, b in zip(by_size, by_size[1:])),
        "outdir": str(outdir),
    })
    return 0


# ---------------------------------------------------------------------------
# ablate

def cmd_ablate(args) -> int:
    grid_path = Path(args.grid)
    if not grid_path.exists():
        raise FileNotFoundError(f"grid file not found: {grid_path}")
    spec = ablate.parse_grid(grid_path)
    base_dir = spec.base.get("output.dir", cfg_mod.KEYS["output.dir"][1])
    csv_path = ablate.run_grid(spec, output_root=resolve_output_dir(base_dir))
    _emit({
        "grid": spec.name,
        "points": len(ablate.expand_points(spec)),
        "seeds": list(spec.seeds),
        "csv": str(csv_path),
    })
    return 0


# ---------------------------------------------------------------------------
# argument surface

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvcr",
        description="Stochastic autoencoder augmentation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="override train.seed")
    p.add_argument("--override", action="append", default=[],
                   metavar="KEY=VALUE", help="override any config key")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--with-mvcr", action="store_true",
                   help="keep the stochastic path active at inference")
    p.add_argument("--split", choices=("train", "dev", "test"),
                   default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fig1-demo",
                       help="compression-fidelity demo on noisy glyphs")
    p.add_argument("--dims", default="49,98,392")
    p.add_argument("--sigma", type=float, default=0.3)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--n-train", type=int, default=1500)
    p.add_argument("--n-test", type=int, default=400)
    p.add_argument("--outdir", default="runs/fig1")
    p.set_defaults(func=cmd_fig1)

    p = sub.add_parser("ablate", help="run a sweep grid, emit a CSV matrix")
    p.add_argument("--grid", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("inspect",
                       help="parameter counts and plug-out verification")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
