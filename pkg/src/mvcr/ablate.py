"""Config sweeps: expand a grid file into runs, emit a comparison CSV.

A grid file reuses the flat key=value format. `grid.*` keys steer the
driver, `vary.<config key> = a | b | c` enumerates candidate values, and any
plain config key becomes part of the shared base. Points are the Cartesian
product of the vary axes; every point runs once per seed with train.seed
forced to that seed.

The CSV has one row per (point, seed) plus aggregate columns repeated on
each row of a point:

    point,<vary keys...>,seed,dev_metric,test_metric,test_mean,test_std

test_mean/test_std aggregate test_metric over the point's seeds (population
stddev). Missing metrics (runs that never evaluated) stay empty.
"""

from __future__ import annotations

import csv
import itertools
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as cfg_mod
from . import training


@dataclass(frozen=True)
class GridSpec:
    name: str
    seeds: tuple[int, ...]
    jobs: int
    base: dict[str, str]
    vary: dict[str, tuple[str, ...]]  # insertion-ordered sweep axes

    @property
    def axes(self) -> list[str]:
        return list(self.vary)


def parse_grid(path) -> GridSpec:
    path = Path(path)
    flat = cfg_mod.parse_config_text(path.read_text())
    name = path.stem
    seeds: tuple[int, ...] = (0,)
    jobs = 1
    base: dict[str, str] = {}
    vary: dict[str, tuple[str, ...]] = {}
    for key, value in flat.items():
        if key == "grid.name":
            name = value
        elif key == "grid.seeds":
            seeds = tuple(int(s) for s in value.split(",") if s.strip())
            if not seeds:
                raise ValueError("grid.seeds is empty")
        elif key == "grid.jobs":
            jobs = int(value)
            if jobs < 1:
                raise ValueError(f"grid.jobs must be >= 1, got {jobs}")
        elif key == "grid.base":
            base_path = (path.parent / value).resolve()
            base.update(cfg_mod.parse_config_text(base_path.read_text()))
        elif key.startswith("grid."):
            raise ValueError(f"unknown grid key {key!r}")
        elif key.startswith("vary."):
            target = key[len("vary."):]
            if target not in cfg_mod.KEYS:
                raise ValueError(f"vary target {target!r} is not a config "
                                 "key")
            values = tuple(v.strip() for v in value.split("|"))
            if len(values) < 1:
                raise ValueError(f"vary.{target} has no values")
            vary[target] = values
        else:
            base[key] = value  # inline base override
    cfg_mod.check_keys(base)
    return GridSpec(name, seeds, jobs, base, vary)


def expand_points(spec: GridSpec) -> list[dict[str, str]]:
    """One override dict per grid point, in row-major axis order."""
    axes = spec.axes
    if not axes:
        return [{}]
    return [dict(zip(axes, combo))
            for combo in itertools.product(*(spec.vary[a] for a in axes))]


def _run_point(args: tuple[dict, int, str]) -> tuple[float | None,
                                                     float | None]:
    """Train one (point, seed) run; returns (best dev, test at best)."""
    flat, seed, run_dir = args
    flat = dict(flat, **{"train.seed": str(seed)})
    exp = cfg_mod.ExperimentConfig.from_flat(flat)
    model = exp.build_model()
    dataset = exp.build_dataset()
    os.makedirs(run_dir, exist_ok=True)
    run = training.run_training(model, dataset, exp.schedule,
                                log_path=os.path.join(run_dir, "run.jsonl"))
    test = None
    for rec in run.history:
        if rec["epoch"] == run.best_epoch:
            test = rec["test_metric"]
    dev = run.best_dev if run.best_dev != float("-inf") else None
    return dev, test


def run_grid(spec: GridSpec, output_root=None) -> Path:
    """Run every (point, seed) pair and write <grid dir>/results.csv."""
    base_dir = spec.base.get("output.dir",
                             cfg_mod.KEYS["output.dir"][1])
    root = Path(output_root) if output_root else Path(base_dir)
    grid_dir = root / spec.name
    grid_dir.mkdir(parents=True, exist_ok=True)

    points = expand_points(spec)
    jobs_args = []
    for i, overrides in enumerate(points):
        flat = cfg_mod.apply_overrides(spec.base, [])
        flat.update(overrides)
        for seed in spec.seeds:
            run_dir = grid_dir / f"point{i:03d}" / f"seed{seed}"
            jobs_args.append((flat, seed, str(run_dir)))

    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            results = list(pool.map(_run_point, jobs_args))
    else:
        results = [_run_point(a) for a in jobs_args]

    # regroup into per-point rows with aggregate columns
    n_seeds = len(spec.seeds)
    csv_path = grid_dir / "results.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["point", *spec.axes, "seed", "dev_metric",
                         "test_metric", "test_mean", "test_std"])
        for i, overrides in enumerate(points):
            chunk = results[i * n_seeds:(i + 1) * n_seeds]
            tests = [t for _, t in chunk if t is not None]
            mean = repr(float(np.mean(tests))) if tests else ""
            std = repr(float(np.std(tests))) if tests else ""
            for seed, (dev, test) in zip(spec.seeds, chunk):
                writer.writerow([
                    i, *[overrides.get(a, "") for a in spec.axes], seed,
                    "" if dev is None else repr(dev),
                    "" if test is None else repr(test), mean, std])
    return csv_path


def run_grid_file(path, output_root=None) -> Path:
    return run_grid(parse_grid(path), output_root)
