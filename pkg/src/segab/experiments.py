"""Experiment orchestration: config parsing, scheme sweeps, metrics files,
aggregation with bootstrap confidence bands, and plots.

An experiment is a grid of (drop, realization, scheme) cells.  A drop fixes
device locations and shadowing; every realization under it redraws fading.
Each cell writes its own metrics CSV; the aggregate (per scheme and round:
mean and a 90% bootstrap band) is recomputed from those files so it can be
reproduced offline.  All randomness derives from the master seed, so a rerun
of the same config yields byte-identical metrics files.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__ as _pkg_version
from .baselines import Scheme
from .channel import dbm_to_watt, draw_geometries
from .errors import ConfigError
from .fl import RunConfig, SeedBundle, run_training
from .linalg import SeededRng
from .tasks import LogisticTask, MlpTask, make_blobs_dataset, solve_optimum

METRIC_COLUMNS = [
    "round", "channel_uses", "gap", "accuracy", "worst_H",
    "scheme", "drop", "realization",
]

_SWEEP_PARAMS = {
    "S_t": "n_segments",
    "n_segments": "n_segments",
    "gamma": "gamma",
    "n_antennas": "n_antennas",
    "N": "n_antennas",
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment description; mirrors the config-file keys."""

    n_antennas: int = 8
    n_devices: int = 5
    n_segments: int = 3
    gamma: float = 0.1
    power_dbm: float = 47.0
    noise_dbm: float = -96.0
    schemes: tuple = ("IdealSeg", "SegAB")
    rounds: int = 10
    local_iters: int = 5
    eta: float | None = None
    batch_size: int = 40
    n_drops: int = 1
    n_realizations: int = 1
    master_seed: int = 0
    out_dir: str = "runs"
    rho: float = 0.2
    task_name: str = "logistic"
    n_features: int = 16
    n_classes: int = 4
    n_per_device: int = 120
    l2_reg: float = 0.1
    test_size: int = 512
    # Recorded for provenance only; no computed quantity uses them.
    bandwidth_mhz: float | None = 10.0
    carrier_ghz: float | None = 2.0

    def __post_init__(self):
        if not self.schemes:
            raise ConfigError("config field 'schemes' must not be empty")
        for s in self.schemes:
            try:
                Scheme(s)
            except ValueError:
                valid = ", ".join(m.value for m in Scheme)
                raise ConfigError(
                    f"config field 'schemes' has unknown entry {s!r} "
                    f"(valid: {valid})"
                ) from None
        positive = ["n_antennas", "n_devices", "n_segments", "rounds",
                    "local_iters", "batch_size", "n_drops", "n_realizations",
                    "n_features", "n_classes", "n_per_device", "rho"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"config field {name!r} must be positive")
        if not (0.0 <= self.gamma < 1.0):
            raise ConfigError("config field 'gamma' must lie in [0, 1)")
        if self.task_name not in ("logistic", "mlp"):
            raise ConfigError("config field 'task_name' must be 'logistic' or 'mlp'")

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: "
                f"{exc.msg}"
            ) from None
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        if "schemes" in raw:
            raw = dict(raw, schemes=tuple(raw["schemes"]))
        return cls(**raw)

    def scheme_list(self):
        return [Scheme(s) for s in self.schemes]

    def make_task(self):
        if self.task_name == "logistic":
            return LogisticTask(self.n_features, self.n_classes, self.l2_reg)
        return MlpTask(self.n_features, self.n_classes, l2_reg=self.l2_reg)


def _cell_name(scheme: Scheme, drop: int, realization: int) -> str:
    return f"metrics_{scheme.value}_d{drop}_r{realization}.csv"


def _run_cell(args):
    config, scheme_value, drop, realization, theta_star, dataset, out_dir = args
    scheme = Scheme(scheme_value)
    task = config.make_task()
    geoms = draw_geometries(
        config.n_devices, SeededRng(config.master_seed).split("geom", drop)
    )
    cfg = RunConfig(
        scheme=scheme,
        task=task,
        dataset=dataset,
        geoms=geoms,
        n_antennas=config.n_antennas,
        n_segments=config.n_segments,
        gamma=config.gamma,
        power_w=dbm_to_watt(config.power_dbm),
        noise_w=dbm_to_watt(config.noise_dbm),
        rounds=config.rounds,
        local_iters=config.local_iters,
        batch_size=config.batch_size,
        eta=config.eta,
        rho=config.rho,
        theta_star=theta_star,
        seeds=SeedBundle(config.master_seed, drop=drop, realization=realization,
                         scheme_tag=scheme.value),
    )
    result = run_training(cfg)
    path = Path(out_dir) / _cell_name(scheme, drop, realization)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for m in result.metrics:
            writer.writerow([
                m.round_index, m.channel_uses, repr(m.gap), repr(m.accuracy),
                repr(m.worst_h), scheme.value, drop, realization,
            ])
    return str(path)


def make_dataset(config: ExperimentConfig):
    return make_blobs_dataset(
        seed=SeededRng(config.master_seed).split("dataset").stream_id,
        n_devices=config.n_devices,
        n_per_device=config.n_per_device,
        n_features=config.n_features,
        n_classes=config.n_classes,
        test_size=config.test_size,
        rng=SeededRng(config.master_seed).split("dataset"),
    )


def run_experiment(config, out_dir=None, jobs: int = 1):
    """Run every (drop, realization, scheme) cell and write metrics files,
    an aggregate CSV, and a metadata record.

    Cell failures are recorded, remaining cells still run, and the aggregate
    is marked incomplete.  Returns (written paths, n_failures).
    """
    if not isinstance(config, ExperimentConfig):
        config = ExperimentConfig.from_file(config)
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    dataset = make_dataset(config)
    task = config.make_task()
    theta_star = None
    if config.task_name == "logistic":
        theta_star = solve_optimum(task, dataset)

    cells = [
        (config, scheme.value, drop, realization, theta_star, dataset, str(out))
        for drop in range(config.n_drops)
        for realization in range(config.n_realizations)
        for scheme in config.scheme_list()
    ]
    written = []
    failures = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell_safe, cells))
    else:
        results = [_run_cell_safe(cell) for cell in cells]
    for cell, (path, err) in zip(cells, results):
        if err is not None:
            failures.append({"scheme": cell[1], "drop": cell[2],
                             "realization": cell[3], "error": err})
        else:
            written.append(path)

    agg_path = out / "aggregate.csv"
    aggregate_metrics(written, config.master_seed, agg_path)
    written.append(str(agg_path))

    meta = {
        "config": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in asdict(config).items()},
        "package_version": _pkg_version,
        "numpy_version": np.__version__,
        "complete": not failures,
        "failures": failures,
        "notes": {
            "descent_baseline_iterations": 2000,
            "channel_use_accounting": "downlink payload symbols only",
        },
    }
    meta_path = out / "metadata.json"
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True))
    written.append(str(meta_path))
    return written, len(failures)


def _run_cell_safe(args):
    try:
        return _run_cell(args), None
    except Exception as exc:  # noqa: BLE001 - cell isolation is the point
        return None, f"{type(exc).__name__}: {exc}"


def _bootstrap_band(values: np.ndarray, gen, n_resamples: int = 1000,
                    coverage: float = 0.90):
    """Percentile bootstrap band for the mean of ``values``."""
    n = values.shape[0]
    if n == 1:
        v = float(values[0])
        return v, v
    idx = gen.integers(0, n, size=(n_resamples, n))
    means = values[idx].mean(axis=1)
    lo = float(np.quantile(means, (1.0 - coverage) / 2))
    hi = float(np.quantile(means, 1.0 - (1.0 - coverage) / 2))
    return lo, hi


def aggregate_metrics(metric_files, master_seed: int, out_path=None):
    """Per-(scheme, round) mean and 90% bootstrap interval of gap and
    accuracy, recomputed purely from the metrics files."""
    rows = []
    for path in metric_files:
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append(rec)
    if not rows:
        raise ValueError("no metric rows to aggregate")
    by_key: dict = {}
    for rec in rows:
        key = (rec["scheme"], int(rec["round"]))
        by_key.setdefault(key, []).append(rec)

    gen = SeededRng(master_seed).split("bootstrap").generator()
    scheme_order = {s.value: i for i, s in enumerate(Scheme)}
    out_rows = []
    for key in sorted(by_key, key=lambda k: (scheme_order.get(k[0], 99), k[1])):
        recs = by_key[key]
        gaps = np.array([float(r["gap"]) for r in recs])
        accs = np.array([float(r["accuracy"]) for r in recs])
        uses = np.array([int(r["channel_uses"]) for r in recs])
        gap_lo, gap_hi = _bootstrap_band(gaps, gen)
        acc_lo, acc_hi = _bootstrap_band(accs, gen)
        out_rows.append({
            "scheme": key[0],
            "round": key[1],
            "channel_uses": int(uses[0]),
            "n_runs": len(recs),
            "gap_mean": repr(float(gaps.mean())),
            "gap_lo": repr(gap_lo),
            "gap_hi": repr(gap_hi),
            "accuracy_mean": repr(float(accs.mean())),
            "accuracy_lo": repr(acc_lo),
            "accuracy_hi": repr(acc_hi),
        })
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(out_rows[0].keys()))
            writer.writeheader()
            writer.writerows(out_rows)
    return out_rows


def _load_aggregate(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"aggregate file {path} is empty")
    return rows


def _require_columns(rows, columns, path):
    missing = [c for c in columns if c not in rows[0]]
    if missing:
        raise ConfigError(
            f"aggregate {path} is missing column(s): {', '.join(missing)}"
        )


def emit_plots(aggregate_path, out_dir, spec: dict | None = None):
    """Render vector plots from an aggregate CSV.

    Default: the metric (accuracy, or gap via ``spec={'metric': 'gap'}``)
    against cumulative channel uses, one curve per scheme with its bootstrap
    band.  If the aggregate carries ``sweep_param``/``sweep_value`` columns,
    a final-round metric-vs-parameter plot is emitted instead.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    spec = dict(spec or {})
    metric = spec.get("metric", "accuracy")
    if metric not in ("accuracy", "gap"):
        raise ConfigError(f"plot spec metric must be 'accuracy' or 'gap', got {metric!r}")
    rows = _load_aggregate(aggregate_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scheme_order = [s.value for s in Scheme]

    if "sweep_param" in rows[0]:
        _require_columns(rows, ["sweep_param", "sweep_value", "scheme",
                                f"{metric}_mean"], aggregate_path)
        param = rows[0]["sweep_param"]
        fig, ax = plt.subplots(figsize=(5, 3.4))
        for scheme in scheme_order:
            pts = [(float(r["sweep_value"]), float(r[f"{metric}_mean"]))
                   for r in rows if r["scheme"] == scheme]
            if not pts:
                continue
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                    label=scheme)
        ax.set_xlabel(param)
        ax.set_ylabel(f"final {metric}")
        ax.legend()
        fig.tight_layout()
        path = out / f"{metric}_vs_{param}.pdf"
        fig.savefig(path)
        plt.close(fig)
        return [str(path)], fig

    _require_columns(rows, ["scheme", "channel_uses", f"{metric}_mean",
                            f"{metric}_lo", f"{metric}_hi"], aggregate_path)
    fig, ax = plt.subplots(figsize=(5, 3.4))
    for scheme in scheme_order:
        sub = [r for r in rows if r["scheme"] == scheme]
        if not sub:
            continue
        sub.sort(key=lambda r: int(r["round"]))
        x = [int(r["channel_uses"]) for r in sub]
        mean = [float(r[f"{metric}_mean"]) for r in sub]
        lo = [float(r[f"{metric}_lo"]) for r in sub]
        hi = [float(r[f"{metric}_hi"]) for r in sub]
        ax.plot(x, mean, label=scheme)
        ax.fill_between(x, lo, hi, alpha=0.25)
    ax.set_xlabel("channel uses")
    ax.set_ylabel(metric)
    if metric == "gap":
        ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    path = out / f"{metric}_vs_channel_uses.pdf"
    fig.savefig(path)
    plt.close(fig)
    return [str(path)], fig


def sweep_experiment(config, param: str, values, out_dir=None, jobs: int = 1):
    """Run the experiment once per parameter value and build a sweep aggregate
    holding each run's final-round rows tagged with the swept value."""
    if not isinstance(config, ExperimentConfig):
        config = ExperimentConfig.from_file(config)
    if param not in _SWEEP_PARAMS:
        raise ConfigError(
            f"unknown sweep parameter {param!r}; valid: {', '.join(_SWEEP_PARAMS)}"
        )
    field_name = _SWEEP_PARAMS[param]
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    sweep_rows = []
    written_all = []
    failures = 0
    for value in values:
        cast = int(value) if field_name != "gamma" else float(value)
        sub_cfg = replace(config, **{field_name: cast})
        sub_out = out / f"sweep_{param}_{value}"
        written, nfail = run_experiment(sub_cfg, out_dir=sub_out, jobs=jobs)
        failures += nfail
        written_all.extend(written)
        agg_rows = _load_aggregate(sub_out / "aggregate.csv")
        last_round = max(int(r["round"]) for r in agg_rows)
        for r in agg_rows:
            if int(r["round"]) == last_round:
                r = dict(r)
                r["sweep_param"] = param
                r["sweep_value"] = repr(cast)
                sweep_rows.append(r)
    sweep_path = out / "sweep_aggregate.csv"
    with open(sweep_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(sweep_rows[0].keys()))
        writer.writeheader()
        writer.writerows(sweep_rows)
    written_all.append(str(sweep_path))
    return written_all, failures
