"""Experiment configs, seeded runs, run-directory artifacts, comparisons and sweeps."""

from __future__ import annotations

import csv
import io
import json
import os
import shutil
import struct
import tempfile
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import tomli
import tomli_w

from .autodiff import NonFiniteError
from .games import (
    GameSpec,
    build_mlp_gan,
    make_bilinear_game,
    make_dirac_game,
    make_quadratic_game,
    sample_gaussian_mixture,
)
from .losses import CLASSIFICATION_TERMS, LOSS_KINDS, GanObjective, LossCoefficients
from .metrics import METRIC_FIELDS, GeneratorEvaluator
from .trainers import (
    AdamConfig,
    DivergedError,
    RunRecord,
    SingularHessianError,
    StepReport,
    TrainerConfig,
    TrainingDiverged,
)
from .trainers.game_rules import STEP_RULES
from .trainers.gan import GAN_TRAINERS

GAME_KINDS = ("bilinear", "quadratic", "dirac")
DATASET_KINDS = ("gaussian_ring",)
TRAINER_RULES = tuple(STEP_RULES) + tuple(GAN_TRAINERS)
STEP_COLUMNS = ("iter", "lr", "loss_d", "loss_g", "grad_norm_d", "grad_norm_g", "eps_inf_norm")
PARAMS_MAGIC = b"FGLP"
PARAMS_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "run"
    seed: int = 0
    out_dir: str = "runs"
    trainer: str = "fastgan"
    # exactly one of game / dataset
    game: str = ""
    dataset: str = ""
    # analytic games
    game_A: tuple = ()
    game_B: tuple = ()
    game_C: tuple = ()
    x0: tuple = ()
    y0: tuple = ()
    eta_x: float = 0.1
    eta_y: float = 0.1
    game_iters: int = 1000
    # mixture data
    modes: int = 8
    radius: float = 2.0
    mode_std: float = 0.02
    dataset_size: int = 8000
    dataset_seed: int = 0
    # networks
    noise_dim: int = 4
    hidden_width: int = 32
    depth: int = 2
    # losses
    loss: str = "fastgan"
    alpha_c_f: float = 1.0
    alpha_c_g: float = 1.0
    disable_kl: bool = False
    disable_g_class: bool = False
    classification_term: str = "log_prob"
    # optimizer and schedule
    eta0: float = 2e-4
    decay_rate: float = 0.5
    kappa: float = 0.0
    max_d_step: int = 1
    max_adv_step: int = 2
    c_max: float = 0.006
    adam: bool = True
    beta1: float = 0.0
    beta2: float = 0.9
    adam_epsilon: float = 1e-8
    batch_size: int = 64
    total_iters: int = 20000
    constant_lr: bool = False
    perturb_fake: bool = False
    g_lr_scale: float = 1.0
    # evaluation
    metric_every: int = 500
    metric_samples: int = 10000
    radius_mult: float = 3.0

    def __post_init__(self):
        if self.kappa == 0.0:
            # unset: decay to half the base rate after a third of the run
            object.__setattr__(self, "kappa", self.total_iters / 3.0)
        for key in ("game_A", "game_B", "game_C", "x0", "y0"):
            object.__setattr__(self, key, _freeze(getattr(self, key)))
        _validate(self)

    @property
    def is_game(self) -> bool:
        return bool(self.game)

    def problem_key(self) -> tuple:
        """What two runs must share to be comparable."""
        if self.is_game:
            return ("game", self.game, self.game_A, self.game_B, self.game_C)
        return ("dataset", self.dataset, self.modes, self.radius, self.mode_std, self.dataset_size, self.dataset_seed)

    def trainer_config(self) -> TrainerConfig:
        return TrainerConfig(
            eta0=self.eta0,
            decay_rate=self.decay_rate,
            kappa=self.kappa,
            max_d_step=self.max_d_step,
            max_adv_step=self.max_adv_step,
            c_max=self.c_max,
            adam=AdamConfig(self.beta1, self.beta2, self.adam_epsilon) if self.adam else None,
            coeffs=self.coefficients(),
            batch_size=self.batch_size,
            total_iters=self.total_iters,
            seed=self.seed,
            constant_lr=self.constant_lr,
            perturb_fake=self.perturb_fake,
            g_lr_scale=self.g_lr_scale,
        )

    def coefficients(self) -> LossCoefficients:
        return LossCoefficients(
            alpha_c_f=self.alpha_c_f,
            alpha_c_g=self.alpha_c_g,
            use_kl=not self.disable_kl,
            use_g_class=not self.disable_g_class,
        )


_FIELD_TYPES = {f.name: type(f.default) for f in fields(ExperimentConfig)}
_SCALAR_TYPES = (bool, int, float, str)


def _freeze(v):
    if isinstance(v, (list, tuple)):
        return tuple(_freeze(x) for x in v)
    return float(v)


def _thaw(v):
    if isinstance(v, tuple):
        return [_thaw(x) for x in v]
    return v


def _need(cond: bool, key: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{key}: {message}")


def _validate(c: ExperimentConfig) -> None:
    _need(bool(c.game) != bool(c.dataset), "game/dataset", "exactly one of 'game' or 'dataset' must be set")
    _need(c.trainer in TRAINER_RULES, "trainer", f"must be one of {', '.join(TRAINER_RULES)}; got {c.trainer!r}")
    _need(bool(c.name) and "/" not in c.name, "name", "must be a non-empty name without '/'")
    if c.game:
        _need(c.game in GAME_KINDS, "game", f"must be one of {', '.join(GAME_KINDS)}; got {c.game!r}")
        _need(c.trainer in STEP_RULES, "trainer", f"{c.trainer!r} trains networks; analytic games need one of {', '.join(STEP_RULES)}")
        _need(c.game_iters >= 1, "game_iters", "must be >= 1")
        _need(c.eta_x > 0 and c.eta_y > 0, "eta_x", "step sizes must be positive")
        if c.game == "quadratic":
            _need(bool(c.game_A and c.game_B and c.game_C), "game_A", "quadratic game needs game_A, game_B and game_C")
    else:
        _need(c.dataset in DATASET_KINDS, "dataset", f"must be one of {', '.join(DATASET_KINDS)}; got {c.dataset!r}")
        _need(c.trainer in GAN_TRAINERS, "trainer", f"{c.trainer!r} is an analytic-game rule; datasets need one of {', '.join(GAN_TRAINERS)}")
        _need(c.modes >= 2, "modes", "must be >= 2")
        _need(c.mode_std > 0, "mode_std", "must be positive")
        _need(c.dataset_size >= c.modes, "dataset_size", "must be >= modes")
        _need(min(c.noise_dim, c.hidden_width, c.depth) >= 1, "hidden_width", "network sizes must be >= 1")
        _need(c.metric_every >= 1, "metric_every", "must be >= 1")
        _need(c.metric_samples > 2, "metric_samples", "must exceed the data dimension")
    _need(c.loss in LOSS_KINDS, "loss", f"must be one of {', '.join(LOSS_KINDS)}; got {c.loss!r}")
    _need(c.classification_term in CLASSIFICATION_TERMS, "classification_term", f"must be one of {', '.join(CLASSIFICATION_TERMS)}")
    _need(not c.disable_kl or c.loss == "fastgan", "disable_kl", f"only applies to the fastgan loss, not {c.loss!r}")
    _need(
        c.classification_term == "log_prob" or c.loss == "fastgan",
        "classification_term",
        f"raw_prob only applies to the fastgan loss, not {c.loss!r}",
    )
    _need(not c.perturb_fake or c.trainer == "fastgan", "perturb_fake", "only applies to the fastgan trainer")
    for key in ("alpha_c_f", "alpha_c_g"):
        _need(0 < getattr(c, key) <= 1, key, "must lie in (0, 1]")
    _need(c.eta0 > 0, "eta0", "must be positive")
    _need(0 < c.decay_rate <= 1, "decay_rate", "must lie in (0, 1]")
    _need(c.kappa > 0, "kappa", "must be positive")
    _need(c.c_max >= 0, "c_max", "must be >= 0")
    _need(0 <= c.beta1 < 1 and 0 <= c.beta2 < 1, "beta1", "Adam betas must lie in [0, 1)")
    for key in ("batch_size", "total_iters", "max_d_step", "max_adv_step"):
        _need(getattr(c, key) >= 1, key, "must be >= 1")


def _coerce(key: str, value):
    want = _FIELD_TYPES[key]
    if want is tuple:
        _need(isinstance(value, list), key, f"expected an array, got {type(value).__name__}")
        return value
    if want is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    _need(isinstance(value, want) and not (want is int and isinstance(value, bool)), key, f"expected {want.__name__}, got {type(value).__name__}")
    return value


def config_from_mapping(data: dict) -> ExperimentConfig:
    unknown = sorted(set(data) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}")
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"{nested[0]}: tables are not supported; use flat keys")
    try:
        return ExperimentConfig(**{k: _coerce(k, v) for k, v in data.items()})
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: parse error {exc}") from exc
    return config_from_mapping(data)


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such config file")
    return parse_config_text(path.read_text(), str(path))


def emit_config(config: ExperimentConfig) -> str:
    """Every field, defaults included, in declaration order."""
    return tomli_w.dumps({k: _thaw(v) for k, v in asdict(config).items()})


# ---------------------------------------------------------------------------
# artifacts


def write_params(path, arrays: dict[str, np.ndarray]) -> None:
    """magic, version, count; per array: name, ndim, shape; then float64 little-endian data."""
    buf = io.BytesIO()
    buf.write(PARAMS_MAGIC)
    buf.write(struct.pack("<II", PARAMS_VERSION, len(arrays)))
    for name, a in arrays.items():
        raw = name.encode()
        buf.write(struct.pack("<I", len(raw)) + raw)
        buf.write(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape))
    for a in arrays.values():
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_params(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != PARAMS_MAGIC:
        raise ValueError(f"{path}: not a parameter file")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != PARAMS_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    off, table = 12, []
    for _ in range(count):
        (n,) = struct.unpack_from("<I", raw, off)
        name = raw[off + 4 : off + 4 + n].decode()
        off += 4 + n
        (ndim,) = struct.unpack_from("<I", raw, off)
        shape = struct.unpack_from(f"<{ndim}Q", raw, off + 4)
        off += 4 + 8 * ndim
        table.append((name, shape))
    out = {}
    for name, shape in table:
        size = int(np.prod(shape))
        out[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(shape).copy()
        off += 8 * size
    return out


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _step_row(rep: StepReport) -> tuple:
    return (rep.iteration, rep.lr, rep.loss_d, rep.loss_g, rep.grad_norm_d, rep.grad_norm_g, rep.eps_inf_norm)


def _write_run_dir(record: RunRecord, config: ExperimentConfig, extra: dict) -> Path:
    """Assemble everything in a sibling temp dir, then rename into place."""
    root = Path(config.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    final = root / config.name
    tmp = Path(tempfile.mkdtemp(prefix=f".{config.name}.", dir=root))
    (tmp / "config.snapshot").write_text(emit_config(config))
    (tmp / "steps.csv").write_text(_csv_text(STEP_COLUMNS, [_step_row(s) for s in record.steps]))
    if record.metrics:
        (tmp / "metrics.csv").write_text(
            _csv_text(("iter",) + METRIC_FIELDS, [[m["iter"]] + [m[k] for k in METRIC_FIELDS] for m in record.metrics])
        )
    params = {}
    for group, arrays in record.final_params.items():
        for i, a in enumerate(arrays):
            params[f"{group}.{i}"] = np.asarray(a, dtype=np.float64)
    write_params(tmp / "final_params.bin", params)
    summary = {
        "name": config.name,
        "status": record.status,
        "seed": record.seed,
        "iterations": len(record.steps),
        "final_metrics": record.metrics[-1] if record.metrics else None,
        "timings": record.timings,
        "error": record.error,
        "feature_space": "identity|frozen_classifier",
    }
    summary.update(extra)
    (tmp / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if final.exists():
        trash = Path(tempfile.mkdtemp(prefix=f".{config.name}.old.", dir=root))
        os.replace(final, trash / "run")
        os.replace(tmp, final)
        shutil.rmtree(trash)
    else:
        os.replace(tmp, final)
    record.run_dir = str(final)
    return final


# ---------------------------------------------------------------------------
# running


def build_game(config: ExperimentConfig) -> GameSpec:
    if config.game == "bilinear":
        return make_bilinear_game(np.array(config.game_A or ((1.0,),)))
    if config.game == "quadratic":
        return make_quadratic_game(np.array(config.game_A), np.array(config.game_B), np.array(config.game_C))
    return make_dirac_game()


def build_dataset(config: ExperimentConfig):
    return sample_gaussian_mixture(config.modes, config.radius, config.mode_std, config.dataset_size, config.dataset_seed)


def game_start(config: ExperimentConfig, game: GameSpec):
    x0 = np.array(config.x0) if config.x0 else np.ones(game.min_player_dim)
    y0 = np.array(config.y0) if config.y0 else np.ones(game.max_player_dim)
    if x0.size != game.min_player_dim or y0.size != game.max_player_dim:
        raise ConfigError(f"x0/y0: expected sizes {game.min_player_dim}/{game.max_player_dim}, got {x0.size}/{y0.size}")
    return x0, y0


def _run_game(config: ExperimentConfig) -> RunRecord:
    game = build_game(config)
    x, y = game_start(config, game)
    step = STEP_RULES[config.trainer]
    record = RunRecord(seed=config.seed, config=config)
    t0 = time.perf_counter()
    try:
        for t in range(config.game_iters):
            x, y = step(game, (x, y), config.eta_x, config.eta_y)
            gx, gy = game.gradients(x, y)
            f = game.value(x, y)
            record.steps.append(
                StepReport(t + 1, t + 1, t + 1, 0, config.eta_x, f, f, float(np.linalg.norm(gy)), float(np.linalg.norm(gx)), 0.0)
            )
    except DivergedError as exc:
        record.status = "diverged"
        record.error = str(exc)
        x, y = exc.last_point if exc.last_point is not None else (x, y)
    except NonFiniteError as exc:
        # the step stayed finite but f or its gradient at the new point overflowed
        record.status = "diverged"
        record.error = str(exc)
    except SingularHessianError as exc:
        record.status = "failed"
        record.error = str(exc)
    record.timings["train_seconds"] = time.perf_counter() - t0
    record.final_params = {"x": [np.asarray(x)], "y": [np.asarray(y)]}
    return record


def _run_gan(config: ExperimentConfig) -> RunRecord:
    dataset = build_dataset(config)
    networks = build_mlp_gan(config.noise_dim, config.hidden_width, config.depth, dataset.dim, dataset.class_count, config.seed)
    objective = GanObjective(config.loss, config.coefficients(), config.classification_term)
    evaluator = GeneratorEvaluator(
        dataset, config.metric_samples, seed=config.seed, radius_mult=config.radius_mult, classifier_seed=config.dataset_seed
    )
    tcfg = config.trainer_config()
    seen: list[StepReport] = []
    metrics = [dict(iter=0, **evaluator(networks).to_row())]
    eval_seconds = 0.0

    def hook(it, nets, rep):
        nonlocal eval_seconds
        seen.append(rep)
        done = it + 1
        if done % config.metric_every == 0 or done == config.total_iters:
            t = time.perf_counter()
            metrics.append(dict(iter=done, **evaluator(nets).to_row()))
            eval_seconds += time.perf_counter() - t
        return None

    trainer = GAN_TRAINERS[config.trainer]
    t0 = time.perf_counter()
    try:
        _, record = trainer(networks, dataset, objective, tcfg, hook)
    except TrainingDiverged as exc:
        record = exc.record
        record.status = "diverged"
        record.error = record.error or str(exc)
        record.timings["failing_step"] = asdict(exc.report) if exc.report else None
        record.final_params = {
            "generator": [p.data.copy() for p in networks.g_params],
            "discriminator": [p.data.copy() for p in networks.d_params],
        }
    except KeyboardInterrupt:
        record = RunRecord(steps=list(seen), seed=config.seed, status="interrupted", config=config)
        record.final_params = {
            "generator": [p.data.copy() for p in networks.g_params],
            "discriminator": [p.data.copy() for p in networks.d_params],
        }
    record.metrics = metrics
    record.config = config
    record.timings["wall_seconds"] = time.perf_counter() - t0
    record.timings["eval_seconds"] = eval_seconds
    return record


def run_experiment(config: ExperimentConfig, write: bool = True) -> RunRecord:
    """Run one config; artifacts land atomically in ``out_dir/name``."""
    record = _run_game(config) if config.is_game else _run_gan(config)
    if write:
        failing = record.timings.pop("failing_step", None)
        _write_run_dir(record, config, {"failing_step": failing} if failing else {})
    if record.status == "interrupted":
        raise KeyboardInterrupt
    return record


# ---------------------------------------------------------------------------
# loading, comparison, sweeps


def _read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def load_run(run_dir) -> RunRecord:
    run_dir = Path(run_dir)
    config = parse_config(run_dir / "config.snapshot")
    summary = json.loads((run_dir / "summary.json").read_text())
    metrics = []
    if (run_dir / "metrics.csv").exists():
        for row in _read_csv(run_dir / "metrics.csv"):
            metrics.append({"iter": int(row["iter"]), **{k: float(row[k]) for k in METRIC_FIELDS if k != "sample_count"}, "sample_count": int(row["sample_count"])})
    record = RunRecord(metrics=metrics, seed=summary["seed"], status=summary["status"], config=config, error=summary.get("error", ""))
    record.run_dir = str(run_dir)
    return record


def iterations_to_threshold(iters: Sequence[int], values: Sequence[float], threshold: float) -> Optional[int]:
    """First iteration whose value is <= threshold, or None if never reached."""
    for it, v in zip(iters, values):
        if v <= threshold:
            return int(it)
    return None


@dataclass
class Comparison:
    threshold: float
    rows: list[dict]

    COLUMNS = ("name", "status", "final_fid", "best_fid", "final_mode_coverage", "final_conditional_entropy", "final_classifier_score", "iters_to_threshold")

    def to_csv(self) -> str:
        return _csv_text(self.COLUMNS, [[("" if r[c] is None else r[c]) for c in self.COLUMNS] for r in self.rows])

    def to_text(self) -> str:
        lines = [f"fid threshold {self.threshold:.6g}"]
        lines.append(f"{'name':<28} {'status':<11} {'final_fid':>11} {'best_fid':>11} {'cover':>6} {'cond_ent':>9} {'iters_to_thr':>12}")
        for r in self.rows:
            reach = "not reached" if r["iters_to_threshold"] is None else str(r["iters_to_threshold"])
            lines.append(
                f"{r['name']:<28} {r['status']:<11} {r['final_fid']:>11.5g} {r['best_fid']:>11.5g} "
                f"{r['final_mode_coverage']:>6.3f} {r['final_conditional_entropy']:>9.5f} {reach:>12}"
            )
        return "\n".join(lines) + "\n"


def compare_runs(records: Sequence[RunRecord], threshold: Optional[float] = None) -> Comparison:
    """Final/best metrics and iterations-to-threshold; threshold defaults to the first record's final FID."""
    if len(records) < 2:
        raise ValueError("compare_runs needs at least two records")
    keys = {r.config.problem_key() for r in records}
    if len(keys) > 1:
        raise ValueError("records were trained on different games/datasets; refusing to compare")
    if any(not r.metrics for r in records):
        raise ValueError("every record needs metric rows to compare")
    if threshold is None:
        threshold = records[0].metrics[-1]["fid"]
    rows = []
    for r in records:
        iters = [m["iter"] for m in r.metrics]
        fids = [m["fid"] for m in r.metrics]
        last = r.metrics[-1]
        rows.append(
            {
                "name": r.config.name,
                "status": r.status,
                "final_fid": last["fid"],
                "best_fid": min(fids),
                "final_mode_coverage": last["mode_coverage"],
                "final_conditional_entropy": last["conditional_entropy"],
                "final_classifier_score": last["classifier_score"],
                "iters_to_threshold": iterations_to_threshold(iters, fids, threshold),
            }
        )
    return Comparison(float(threshold), rows)


def sweep_configs(config: ExperimentConfig, path: str, values: Sequence) -> list[ExperimentConfig]:
    if path not in _FIELD_TYPES:
        raise ConfigError(f"{path}: unknown config key")
    if _FIELD_TYPES[path] not in _SCALAR_TYPES:
        raise ConfigError(f"{path}: not a scalar field")
    if path in ("name", "out_dir"):
        raise ConfigError(f"{path}: sweeping the run location is not meaningful")
    if not values:
        raise ConfigError("values: empty value list")
    out = []
    for v in values:
        v = _coerce(path, v)
        out.append(replace(config, **{path: v, "name": f"{config.name}-{path}={v}"}))
    return out


def sweep(config: ExperimentConfig, path: str, values: Sequence) -> list[RunRecord]:
    """One run per value with the shared base seed; writes a collated summary CSV."""
    records = [run_experiment(c) for c in sweep_configs(config, path, values)]
    rows = []
    for v, r in zip(values, records):
        last = r.metrics[-1] if r.metrics else {}
        rows.append([v, r.status] + [last.get(k, "") for k in METRIC_FIELDS])
    out = Path(config.out_dir) / f"{config.name}-sweep-{path}.csv"
    out.write_text(_csv_text((path, "status") + METRIC_FIELDS, rows))
    return records


ABLATION_ROWS = {
    "fastgan": {},
    "revert_robgan_loss": {"loss": "robgan"},
    "disable_adv_training": {"c_max": 0.0},
    "constant_lr": {"constant_lr": True},
    "disable_kl": {"disable_kl": True},
}


def ablation_configs(config: ExperimentConfig) -> list[ExperimentConfig]:
    """The full method plus one row per single ablation."""
    return [replace(config, name=f"{config.name}-{row}", **kw) for row, kw in ABLATION_ROWS.items()]
