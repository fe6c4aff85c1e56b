"""Seeded multi-run orchestration and aggregation."""

import csv
import io
import json
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..envs import env_from_spec
from ..exceptions import ConfigurationError, DivergenceError
from ..training import RUN_CSV_HEADER, make_trainer
from ..valuestore import store_to_dict
from ..mixer import mixer_to_dict
from .config import load_experiment
from .metrics import percentile_band
from .plotting import AGGREGATE_HEADER, render_curves

WORKERS_ENV = "VDLAB_WORKERS"


@dataclass
class RunResult:
    trainer: str
    seed: int
    csv_text: str
    diverged: bool
    message: str
    checkpoint: dict

    @property
    def stem(self):
        return f"{self.trainer}-seed{self.seed}"

    def series(self):
        rows = list(csv.DictReader(io.StringIO(self.csv_text)))
        return [int(r["env_steps"]) for r in rows], [float(r["win_rate"]) for r in rows]


def _checkpoint_payload(snapshot):
    return {
        name: (mixer_to_dict(obj) if name == "mixer" else store_to_dict(obj))
        for name, obj in snapshot.items()
    }


def run_single(env_spec, trainer_name, train_config):
    """One (trainer, seed) run; divergence is captured, not raised."""
    env = env_from_spec(env_spec)
    trainer = make_trainer(trainer_name, train_config)
    try:
        trainer.fit(env)
        diverged, message = False, ""
    except DivergenceError as exc:
        diverged, message = True, str(exc)
    report = trainer.report_
    return RunResult(
        trainer_name,
        train_config.seed,
        report.to_csv(),
        diverged,
        message,
        _checkpoint_payload(report.checkpoints) if report.checkpoints else {},
    )


def worker_count(default=1):
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"{WORKERS_ENV}={raw!r} is not an integer") from None
    if n < 1:
        raise ConfigurationError(f"{WORKERS_ENV} must be >= 1")
    return n


def aggregate(results):
    """Aggregate CSV text from finished runs; diverged runs are left out."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(AGGREGATE_HEADER)
    by_trainer = {}
    for r in results:
        if not r.diverged:
            by_trainer.setdefault(r.trainer, []).append(r)
    for name in sorted(by_trainer):
        runs = sorted(by_trainer[name], key=lambda r: r.seed)
        series = [r.series() for r in runs]
        steps = series[0][0]
        if len(series) == 1:
            med = lo = hi = np.asarray(series[0][1])
        else:
            med, lo, hi = percentile_band(series)
        for k, step in enumerate(steps):
            writer.writerow([name, step, f"{med[k]:.6f}", f"{lo[k]:.6f}", f"{hi[k]:.6f}", len(runs)])
    return buf.getvalue()


def run_experiment(config_path, force=False, seeds=None, workers=None):
    """Run every (trainer, seed) pair and write per-run CSVs, checkpoints,
    ``aggregate.csv``, ``curves.svg`` and ``runs.json`` to ``output_dir``.

    Returns the list of :class:`RunResult`.
    """
    cfg = load_experiment(config_path)
    if seeds is not None:
        cfg.seeds = list(seeds)
        cfg.__post_init__()
    out = cfg.output_dir
    if os.path.exists(out) and os.listdir(out):
        if not force:
            raise ConfigurationError(f"output_dir {out!r} exists and is not empty; pass --force to overwrite")
        shutil.rmtree(out)
    os.makedirs(out, exist_ok=True)

    jobs = [(cfg.env, t, cfg.train_config(s)) for t, s in cfg.runs()]
    n_workers = workers or worker_count()
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(n_workers, len(jobs))) as pool:
            results = list(pool.map(run_single, *zip(*jobs)))
    else:
        results = [run_single(*job) for job in jobs]

    # single writer: everything hits disk here, in a fixed order
    for r in results:
        with open(os.path.join(out, r.stem + ".csv"), "w", newline="") as fh:
            fh.write(r.csv_text)
        if r.checkpoint:
            with open(os.path.join(out, r.stem + ".ckpt.json"), "w") as fh:
                json.dump(r.checkpoint, fh)
    summary = {
        "config": cfg.to_dict(),
        "runs": [{"trainer": r.trainer, "seed": r.seed, "diverged": r.diverged, "message": r.message} for r in results],
    }
    with open(os.path.join(out, "runs.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    agg_path = os.path.join(out, "aggregate.csv")
    with open(agg_path, "w", newline="") as fh:
        fh.write(aggregate(results))
    if any(not r.diverged for r in results):
        render_curves(agg_path, os.path.join(out, "curves.svg"))
    return results
