"""Monte Carlo harness: trial pipeline, sweeps, aggregation, CSV emission.

A sweep is a pure function of its configuration: trials are keyed by
(base_seed, trial_index), so grid cells share channel / training / noise
draws (paired comparisons across n_p and SNR), reruns are byte-identical,
and parallel execution aggregates in fixed trial order. Wall-clock columns
are therefore excluded from the metrics CSV unless ``include_timing`` is
set; the Table-style runtime report always goes to a separate file.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import yaml

from . import __version__
from .cfo import CfoSearchConfig, ObjectiveEvaluator, estimate_cfo, wrap_angle_error
from .channels import (
    GaussianChannelParams,
    MmWaveChannelParams,
    sample_gaussian_channel,
    sample_mmwave_channel,
    to_beamspace,
)
from .crb import crb_for_instance
from .gamp import GampConfig, estimate_channel
from .model import (
    ComplexModelInstance,
    ParameterError,
    SystemDims,
    TrainingBlock,
    apply_cfo,
    realstack,
    simulate_observation,
    vec,
)

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi

STAGE2_BASELINES = ("unknown-cfo", "known-cfo", "no-compensation")
KNOWN_BASELINES = STAGE2_BASELINES + ("detection-only",)

CSV_COLUMNS = (
    "np", "snr_db", "cfo_true", "mse_cfo_db", "mse_cfo_detection_only_db", "crb_db",
    "nmse_unknown_cfo_db", "nmse_known_cfo_db", "nmse_no_comp_db",
    "t_cfo_s", "t_chan_s", "n_trials",
)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    n_t: int = 16
    n_r: int = 16
    channel_family: str = "gaussian"
    sigma_h_sq: float = 0.5
    n_clusters: int = 2
    rays_per_cluster: int = 15
    angle_spread_deg: float = 10.0
    antenna_spacing_ratio: float = 0.5
    snr_db_list: tuple = (0.0, 5.0, 10.0)
    np_list: tuple = (64, 256, 512)
    cfo_list: tuple = (0.0415,)
    cfo_unit: str = "fraction"  # "fraction" of 2*pi, or "radians"
    n_trials: int = 100
    base_seed: int = 0
    baselines: tuple = ("unknown-cfo", "known-cfo")
    output: str | None = None
    workers: int = 1
    include_timing: bool = False
    figures: bool = True
    cfo_search: CfoSearchConfig = field(default_factory=CfoSearchConfig)
    gamp: GampConfig = field(default_factory=GampConfig)

    def __post_init__(self) -> None:
        if self.n_trials < 1 or self.workers < 1:
            raise ParameterError("n_trials and workers must be >= 1")
        if self.channel_family not in ("gaussian", "mmwave"):
            raise ParameterError(f"unknown channel family {self.channel_family!r}")
        if self.cfo_unit not in ("fraction", "radians"):
            raise ParameterError(f"cfo_unit must be 'fraction' or 'radians'")
        for name in ("snr_db_list", "np_list", "cfo_list", "baselines"):
            values = getattr(self, name)
            if np.isscalar(values):
                values = (values,)
            object.__setattr__(self, name, tuple(values))
            if not getattr(self, name):
                raise ParameterError(f"{name} must be nonempty")
        unknown = set(self.baselines) - set(KNOWN_BASELINES)
        if unknown:
            raise ParameterError(f"unknown baselines: {sorted(unknown)}")

    @property
    def cfo_rad_list(self) -> tuple:
        if self.cfo_unit == "fraction":
            return tuple(TWO_PI * float(c) for c in self.cfo_list)
        return tuple(float(c) for c in self.cfo_list)

    @property
    def stage2_baselines(self) -> tuple:
        return tuple(b for b in self.baselines if b in STAGE2_BASELINES)

    def channel_params(self):
        if self.channel_family == "gaussian":
            return GaussianChannelParams(self.sigma_h_sq)
        return MmWaveChannelParams(
            n_clusters=self.n_clusters,
            rays_per_cluster=self.rays_per_cluster,
            angle_spread_deg=self.angle_spread_deg,
            antenna_spacing_ratio=self.antenna_spacing_ratio,
        )

    def to_dict(self) -> dict:
        data = asdict(self)
        for key in ("snr_db_list", "np_list", "cfo_list", "baselines"):
            data[key] = list(data[key])
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        if isinstance(data.get("cfo_search"), dict):
            data["cfo_search"] = CfoSearchConfig(**data["cfo_search"])
        if isinstance(data.get("gamp"), dict):
            data["gamp"] = GampConfig(**data["gamp"])
        return cls(**data)

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        return cls.from_dict(data)

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Single trial
# ---------------------------------------------------------------------------

@dataclass
class TrialRecord:
    trial_index: int
    seed: int
    np_symbols: int
    snr_db: float
    cfo_true: float
    cfo_hat: float = np.nan
    cfo_coarse: float = np.nan
    cfo_detection: float = np.nan
    cfo_sq_err: float = np.nan
    cfo_sq_err_detection_only: float = np.nan
    nmse: dict = field(default_factory=dict)
    crb_value: float = np.nan
    t_cfo_s: float = 0.0
    t_chan_s: float = 0.0
    errors: dict = field(default_factory=dict)


def calibrate_noise(d_matrix: np.ndarray, h: np.ndarray, snr_db: float) -> float:
    """sigma_w_sq so that SNR = 10 log10( ||D h||^2 / (2 n_r n_p sigma_w_sq) )."""
    signal_sq = float(np.linalg.norm(np.asarray(d_matrix) @ np.asarray(h)) ** 2)
    return noise_var_for_snr(signal_sq, np.asarray(d_matrix).shape[0], snr_db)


def noise_var_for_snr(signal_sq_norm: float, n_measurements: int, snr_db: float) -> float:
    if signal_sq_norm <= 0:
        raise ParameterError("degenerate instance: zero signal energy")
    return signal_sq_norm / (n_measurements * 10.0 ** (snr_db / 10.0))


def _draw_channel(config: ExperimentConfig, dims: SystemDims, rng) -> np.ndarray:
    if config.channel_family == "gaussian":
        return sample_gaussian_channel(dims, config.channel_params(), rng)
    return sample_mmwave_channel(dims, config.channel_params(), rng)


def run_trial(config: ExperimentConfig, np_symbols: int, snr_db: float,
              cfo_rad: float, trial_index: int) -> TrialRecord:
    """One full pipeline pass; stage failures are recorded, never raised."""
    seed_seq = np.random.SeedSequence([int(config.base_seed), int(trial_index)])
    record = TrialRecord(
        trial_index=trial_index, seed=int(seed_seq.generate_state(1)[0]),
        np_symbols=int(np_symbols), snr_db=float(snr_db), cfo_true=float(cfo_rad) % TWO_PI,
    )
    training_rng, channel_rng, noise_rng = seed_seq.spawn(3)

    dims = SystemDims(n_t=config.n_t, n_r=config.n_r, n_p=int(np_symbols))
    training = TrainingBlock.random_qpsk(dims.n_t, dims.n_p, training_rng)
    channel = _draw_channel(config, dims, channel_rng)

    b = apply_cfo(training, record.cfo_true)
    noise_var = noise_var_for_snr(
        float(np.linalg.norm(channel @ b) ** 2), dims.real_rows, snr_db
    )
    inst = ComplexModelInstance(dims, training, channel, record.cfo_true, noise_var)
    y = realstack(vec(simulate_observation(inst, noise_rng)))

    t0 = time.perf_counter()
    try:
        est = estimate_cfo(y, training, config.cfo_search)
        record.cfo_hat = est.omega_final
        record.cfo_coarse = est.omega_coarse
        record.cfo_detection = est.omega_refined
        record.cfo_sq_err = wrap_angle_error(est.omega_final, record.cfo_true) ** 2
        record.cfo_sq_err_detection_only = (
            wrap_angle_error(est.omega_refined, record.cfo_true) ** 2
        )
    except Exception as exc:  # noqa: BLE001 - sweep must survive stage failures
        record.errors["cfo"] = repr(exc)
    record.t_cfo_s = time.perf_counter() - t0

    if config.channel_family == "mmwave":
        truth = to_beamspace(channel).c_matrix
    else:
        truth = channel
    truth_energy = float(np.linalg.norm(truth) ** 2)

    omega_by_baseline = {
        "unknown-cfo": record.cfo_hat,
        "known-cfo": record.cfo_true,
        "no-compensation": 0.0,
    }
    t0 = time.perf_counter()
    for baseline in config.stage2_baselines:
        omega = omega_by_baseline[baseline]
        if not np.isfinite(omega):
            record.errors[baseline] = "no CFO estimate available"
            continue
        try:
            result = estimate_channel(training, y, omega, noise_var,
                                      config.channel_family, config.gamp)
            estimate = result.c_hat if config.channel_family == "mmwave" else result.h_hat
            record.nmse[baseline] = float(np.linalg.norm(truth - estimate) ** 2) / truth_energy
        except Exception as exc:  # noqa: BLE001
            record.errors[baseline] = repr(exc)
    record.t_chan_s = time.perf_counter() - t0

    try:
        record.crb_value = crb_for_instance(
            training, record.cfo_true, realstack(vec(channel)), noise_var, dims.n_r
        )
    except Exception as exc:  # noqa: BLE001
        record.errors["crb"] = repr(exc)

    if record.errors:
        logger.warning("trial %d (np=%d snr=%g) had stage errors: %s",
                       trial_index, np_symbols, snr_db, record.errors)
    return record


# ---------------------------------------------------------------------------
# Sweeps and aggregation
# ---------------------------------------------------------------------------

@dataclass
class AggregateRow:
    np_symbols: int
    snr_db: float
    cfo_true: float
    mse_cfo_db: float
    mse_cfo_detection_only_db: float
    crb_db: float
    nmse_unknown_cfo_db: float
    nmse_known_cfo_db: float
    nmse_no_comp_db: float
    t_cfo_s: float
    t_chan_s: float
    n_trials: int


@dataclass
class SweepResult:
    config: ExperimentConfig
    rows: list
    records: list
    csv_path: str | None = None
    figure_paths: list = field(default_factory=list)


def _db(linear_mean: float) -> float:
    if not np.isfinite(linear_mean) or linear_mean <= 0:
        return np.nan
    return float(10.0 * np.log10(linear_mean))


def _nanmean(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0 or np.all(np.isnan(values)):
        return np.nan
    return float(np.nanmean(values))


def aggregate(records: list, np_symbols: int, snr_db: float, cfo_true: float) -> AggregateRow:
    """Fold trial records of one grid cell into the CSV row (means in dB)."""
    def nmse_db(name):
        return _db(_nanmean([r.nmse.get(name, np.nan) for r in records]))

    return AggregateRow(
        np_symbols=int(np_symbols),
        snr_db=float(snr_db),
        cfo_true=float(cfo_true),
        mse_cfo_db=_db(_nanmean([r.cfo_sq_err for r in records])),
        mse_cfo_detection_only_db=_db(_nanmean([r.cfo_sq_err_detection_only for r in records])),
        crb_db=_db(_nanmean([r.crb_value for r in records])),
        nmse_unknown_cfo_db=nmse_db("unknown-cfo"),
        nmse_known_cfo_db=nmse_db("known-cfo"),
        nmse_no_comp_db=nmse_db("no-compensation"),
        t_cfo_s=_nanmean([r.t_cfo_s for r in records]),
        t_chan_s=_nanmean([r.t_chan_s for r in records]),
        n_trials=len(records),
    )


def _trial_job(config_dict: dict, np_symbols: int, snr_db: float, cfo_rad: float,
               trial_index: int) -> TrialRecord:
    return run_trial(ExperimentConfig.from_dict(config_dict), np_symbols, snr_db,
                     cfo_rad, trial_index)


def run_point(config: ExperimentConfig, np_symbols: int, snr_db: float,
              cfo_rad: float, pool=None) -> list:
    """All trials of one (np, snr, cfo) cell, in deterministic trial order."""
    indices = range(config.n_trials)
    if pool is None:
        return [run_trial(config, np_symbols, snr_db, cfo_rad, i) for i in indices]
    config_dict = config.to_dict()
    futures = [pool.submit(_trial_job, config_dict, np_symbols, snr_db, cfo_rad, i)
               for i in indices]
    return [f.result() for f in futures]


def run_sweep(config: ExperimentConfig) -> SweepResult:
    """Full grid sweep; writes the metrics CSV, timing table, and figures."""
    points = [
        (np_symbols, snr_db, cfo_rad)
        for np_symbols in config.np_list
        for snr_db in config.snr_db_list
        for cfo_rad in config.cfo_rad_list
    ]
    rows, all_records = [], []
    pool = ProcessPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    try:
        for np_symbols, snr_db, cfo_rad in points:
            records = run_point(config, np_symbols, snr_db, cfo_rad, pool)
            all_records.extend(records)
            rows.append(aggregate(records, np_symbols, snr_db, cfo_rad))
            logger.info("cell np=%d snr=%g cfo=%.4f done", np_symbols, snr_db, cfo_rad)
    finally:
        if pool is not None:
            pool.shutdown()

    result = SweepResult(config=config, rows=rows, records=all_records)
    if config.output:
        result.csv_path = write_rows_csv(config.output, config, rows)
        write_timing_table(_sibling_path(config.output, "_timing.csv"), config, rows)
        if config.figures:
            from . import plots

            result.figure_paths = plots.render_sweep_figures(config, rows)
    return result


def run_crb_sweep(config: ExperimentConfig) -> SweepResult:
    """Bound-only sweep: same seeding and CSV schema, estimator columns empty."""
    rows = []
    for np_symbols in config.np_list:
        for snr_db in config.snr_db_list:
            for cfo_rad in config.cfo_rad_list:
                values = []
                for trial_index in range(config.n_trials):
                    seed_seq = np.random.SeedSequence([int(config.base_seed), int(trial_index)])
                    training_rng, channel_rng, _ = seed_seq.spawn(3)
                    dims = SystemDims(config.n_t, config.n_r, int(np_symbols))
                    training = TrainingBlock.random_qpsk(dims.n_t, dims.n_p, training_rng)
                    channel = _draw_channel(config, dims, channel_rng)
                    b = apply_cfo(training, cfo_rad % TWO_PI)
                    noise_var = noise_var_for_snr(
                        float(np.linalg.norm(channel @ b) ** 2), dims.real_rows, snr_db
                    )
                    values.append(crb_for_instance(
                        training, cfo_rad % TWO_PI, realstack(vec(channel)), noise_var, dims.n_r
                    ))
                rows.append(AggregateRow(
                    np_symbols=int(np_symbols), snr_db=float(snr_db),
                    cfo_true=float(cfo_rad) % TWO_PI,
                    mse_cfo_db=np.nan, mse_cfo_detection_only_db=np.nan,
                    crb_db=_db(float(np.mean(values))),
                    nmse_unknown_cfo_db=np.nan, nmse_known_cfo_db=np.nan,
                    nmse_no_comp_db=np.nan, t_cfo_s=np.nan, t_chan_s=np.nan,
                    n_trials=config.n_trials,
                ))
    result = SweepResult(config=config, rows=rows, records=[])
    if config.output:
        result.csv_path = write_rows_csv(config.output, config, rows)
        if config.figures:
            from . import plots

            result.figure_paths = plots.render_crb_figure(config, rows)
    return result


# ---------------------------------------------------------------------------
# Objective-curve study
# ---------------------------------------------------------------------------

@dataclass
class ObjectiveCurve:
    omega_grid: np.ndarray
    s_values: np.ndarray
    cfo_true: float
    omega_peak: float
    width_main_lobe: float
    width_half_max: float


def _interp_crossing(grid_step, s_inner, s_outer, level):
    return grid_step * (s_inner - level) / (s_inner - s_outer)


def measure_lobe_widths(omega_grid: np.ndarray, s_values: np.ndarray) -> tuple[float, float]:
    """(main-lobe width, half-max width) around the global grid maximum.

    The main-lobe width is the distance between the two local minima that
    flank the peak (the paper's convention; ~4 pi / n_p for QPSK training).
    The half-max width between the S_max/2 crossings is reported alongside.
    """
    n = len(omega_grid)
    step = TWO_PI / n
    k = int(np.argmax(s_values))
    s_max = s_values[k]

    def walk_to_local_min(direction):
        i = k
        for _ in range(n):
            j = (i + direction) % n
            if s_values[j] > s_values[i]:
                break
            i = j
        return i

    left_min = walk_to_local_min(-1)
    right_min = walk_to_local_min(+1)
    width_main = ((right_min - left_min) % n) * step

    def walk_to_half_max(direction):
        level = s_max / 2.0
        i = k
        for offset in range(1, n):
            j = (i + direction) % n
            if s_values[j] < level:
                return offset - 1 + _interp_crossing(1.0, s_values[i], s_values[j], level)
            i = j
        return np.nan
    width_half = (walk_to_half_max(-1) + walk_to_half_max(+1)) * step
    return float(width_main), float(width_half)


def emit_objective_curve(config: ExperimentConfig, np_symbols: int, snr_db: float,
                         grid_size: int = 4096, trial_index: int = 0,
                         output: str | None = None) -> ObjectiveCurve:
    """One trial's S(omega) over a uniform grid plus the measured lobe widths."""
    cfo_rad = config.cfo_rad_list[0]
    seed_seq = np.random.SeedSequence([int(config.base_seed), int(trial_index)])
    training_rng, channel_rng, noise_rng = seed_seq.spawn(3)
    dims = SystemDims(config.n_t, config.n_r, int(np_symbols))
    training = TrainingBlock.random_qpsk(dims.n_t, dims.n_p, training_rng)
    channel = _draw_channel(config, dims, channel_rng)
    b = apply_cfo(training, cfo_rad)
    noise_var = noise_var_for_snr(float(np.linalg.norm(channel @ b) ** 2),
                                  dims.real_rows, snr_db)
    inst = ComplexModelInstance(dims, training, channel, cfo_rad, noise_var)
    y = realstack(vec(simulate_observation(inst, noise_rng)))

    grid = np.linspace(0.0, TWO_PI, grid_size, endpoint=False)
    values = ObjectiveEvaluator(y, training).grid_values(grid)
    width_main, width_half = measure_lobe_widths(grid, values)
    curve = ObjectiveCurve(
        omega_grid=grid, s_values=values, cfo_true=float(cfo_rad),
        omega_peak=float(grid[np.argmax(values)]),
        width_main_lobe=width_main, width_half_max=width_half,
    )
    if output:
        with open(output, "w", newline="") as fh:
            fh.write(f"# onebitsync {__version__} objective-curve\n")
            fh.write(f"# config_hash: {config.config_hash()}\n")
            fh.write(f"# np: {np_symbols}  snr_db: {snr_db}  cfo_true: {curve.cfo_true!r}\n")
            fh.write(f"# width_main_lobe: {width_main!r}\n")
            fh.write(f"# width_half_max: {width_half!r}\n")
            writer = csv.writer(fh)
            writer.writerow(["omega", "s"])
            for omega, s in zip(grid, values):
                writer.writerow([repr(float(omega)), repr(float(s))])
        if config.figures:
            from . import plots

            plots.render_objective_curve(curve, _sibling_path(output, ".png"))
    return curve


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def _sibling_path(path: str, suffix: str) -> str:
    stem = path[:-4] if path.endswith(".csv") else path
    return stem + suffix


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if np.isnan(value) else repr(value)
    return str(value)


def write_rows_csv(path: str, config: ExperimentConfig, rows: list) -> str:
    """Metrics CSV with a '#' header block (deterministic unless timing is on)."""
    columns = list(CSV_COLUMNS)
    if not config.include_timing:
        columns = [c for c in columns if c not in ("t_cfo_s", "t_chan_s")]
    with open(path, "w", newline="") as fh:
        fh.write(f"# onebitsync {__version__} sweep\n")
        fh.write(f"# config_hash: {config.config_hash()}\n")
        fh.write(f"# base_seed: {config.base_seed}\n")
        fh.write("# mse/nmse columns are 10*log10 of linear trial means; "
                 "cfo errors are wrapped to [-pi, pi)\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            data = {
                "np": row.np_symbols, "snr_db": row.snr_db, "cfo_true": row.cfo_true,
                "mse_cfo_db": row.mse_cfo_db,
                "mse_cfo_detection_only_db": row.mse_cfo_detection_only_db,
                "crb_db": row.crb_db,
                "nmse_unknown_cfo_db": row.nmse_unknown_cfo_db,
                "nmse_known_cfo_db": row.nmse_known_cfo_db,
                "nmse_no_comp_db": row.nmse_no_comp_db,
                "t_cfo_s": row.t_cfo_s, "t_chan_s": row.t_chan_s,
                "n_trials": row.n_trials,
            }
            writer.writerow([_format_cell(data[c]) for c in columns])
    return path


def write_timing_table(path: str, config: ExperimentConfig, rows: list) -> str:
    """Runtime report in the shape of the paper's table: stages x n_p."""
    np_values = sorted({row.np_symbols for row in rows})
    per_np = {
        n: [row for row in rows if row.np_symbols == n] for n in np_values
    }
    cfo_means = {n: _nanmean([r.t_cfo_s for r in per_np[n]]) for n in np_values}
    chan_means = {n: _nanmean([r.t_chan_s for r in per_np[n]]) for n in np_values}
    with open(path, "w", newline="") as fh:
        fh.write(f"# onebitsync {__version__} averaged running time (seconds per trial)\n")
        writer = csv.writer(fh)
        writer.writerow(["stage"] + [f"np={n}" for n in np_values])
        writer.writerow(["cfo_est"] + [f"{cfo_means[n]:.4f}" for n in np_values])
        writer.writerow(["channel_est"] + [f"{chan_means[n]:.4f}" for n in np_values])
        writer.writerow(
            ["total"] + [f"{cfo_means[n] + chan_means[n]:.4f}" for n in np_values]
        )
    return path


def read_rows_csv(path: str) -> list:
    """Parse a metrics CSV written by :func:`write_rows_csv` back into dicts."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for raw in reader:
            rows.append({
                key: (float(value) if value not in ("", None) and key != "np" else
                      int(value) if key == "np" else np.nan)
                for key, value in raw.items()
            })
    return rows
