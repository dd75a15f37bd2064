"""Preset experiment suites on the 8-mode ring and a cache for deterministic runs."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

from .harness import ExperimentConfig, load_run, parse_config, run_experiment
from .trainers import RunRecord

RING_RADIUS = 2.0
# the perturbation bound is 0.006 per unit of data scale; the ring radius sets the scale
C_MAX_PER_UNIT = 0.006

SUITE_VARIANTS = {
    "fastgan": {},
    "robgan_revert": {"loss": "robgan"},
    "no_adv": {"c_max": 0.0},
}


def ring_base(out_dir: str, seed: int = 0, total_iters: int = 20000) -> ExperimentConfig:
    return ExperimentConfig(
        name="ring8",
        seed=seed,
        out_dir=out_dir,
        trainer="fastgan",
        dataset="gaussian_ring",
        modes=8,
        radius=RING_RADIUS,
        mode_std=0.02,
        dataset_size=8000,
        total_iters=total_iters,
        c_max=C_MAX_PER_UNIT * RING_RADIUS,
        metric_every=500,
        metric_samples=10000,
    )


def directional_suite(out_dir: str, seeds=(0, 1, 2), total_iters: int = 20000) -> dict[tuple[str, int], ExperimentConfig]:
    suite = {}
    for seed in seeds:
        base = ring_base(out_dir, seed, total_iters)
        for variant, kw in SUITE_VARIANTS.items():
            suite[variant, seed] = replace(base, name=f"{variant}-seed{seed}", **kw)
    return suite


def run_or_load(config: ExperimentConfig) -> RunRecord:
    """Reuse a finished run directory whose snapshot matches ``config``; otherwise run.

    Runs are bit-deterministic given the config, so a matching completed
    directory is the same result the run would produce again. ``out_dir`` is
    ignored in the match since the same directory may be spelled relative or absolute.
    """
    run_dir = Path(config.out_dir) / config.name
    snap = run_dir / "config.snapshot"
    if (
        snap.exists()
        and (run_dir / "summary.json").exists()
        and replace(parse_config(snap), out_dir=config.out_dir) == config
    ):
        record = load_run(run_dir)
        if record.status == "completed":
            return record
    return run_experiment(config)
