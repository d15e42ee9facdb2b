"""Monte Carlo experiments: THBT variants, exhaustive sweep baseline, metrics, reports.

All randomness derives from one master seed.  Trial ``t`` draws its channel
from the stream ``SeedSequence(seed, spawn_key=(t,))`` and each (method, SNR)
pair draws its noise from a separate child stream, so the same channels are
seen by every method and results do not depend on how trials are scheduled.
"""
from __future__ import annotations

import csv
import dataclasses
import functools
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .beamgain import invert_coherence
from .channel import (
    ArrayConfig, PathParams, Scenario, Sounder, assemble_channel, sample_paths,
    steering_exact, steering_surrogate,
)
from .exceptions import InvalidConfig, InvalidScenario, SingularNormalMatrix, SingularSystem, ZeroCurvature
from .refine1 import (
    Refine1Config, argmax_first, build_codebook1, design_m1, extend_region, region_update1,
    train_stage1,
)
from .refine2 import (
    Refine2Config, build_codebook2, estimate_ml, estimate_psp, ml_grid, psp_model_phase,
    train_stage2, unwrap_phases,
)
from .refine3 import (
    FinalEstimate, GaussianFit, finalize, fit_gaussian, ga_estimate, narrow_regions,
    neighbor_search,
)

CONFIG_VERSION = 1
METHODS = ("thbt-ml", "thbt-psp", "hfbs", "upper-bound")
_METHOD_CODE = {m: i + 1 for i, m in enumerate(METHODS)}

SUCCESS_TAGS = ("ga", "ga-fallback")
SNR_REFERENCES = ("unit", "element")

TRIAL_COLUMNS = (
    "trial", "method", "snr_db", "gain_xi", "se_bpshz", "pos_error_m", "overhead",
    "stage_tag", "omega_hat", "b_hat", "range_hat_m", "seed",
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a sweep needs.  Loaded from a versioned JSON file by :func:`load_config`.

    ``None`` for a stage parameter means "derive it": ``b_bar`` from the
    smallest admissible range, ``omega_bar`` from the angle interval, ``m1``
    from the coverage bound, ``theta_bar2``/``theta_bar_n`` as ``2/N_t`` and
    ``k_bar_n`` as ``6/N_t**2`` (or from ``rho`` when that is given).
    """

    n_half: int = 256
    wavelength: float = 0.005
    angle_range: tuple[float, float] = (-math.sqrt(3) / 2, math.sqrt(3) / 2)
    distance_range: tuple[float, float] = (10.0, 200.0)
    gain_std: tuple[float, ...] = (1.0, 0.1, 0.1)
    snr_db: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0)
    trials: int = 100
    seed: int = 0
    methods: tuple[str, ...] = METHODS
    k_tilde1: float = -6.09e-5
    b_bar: float | None = None
    omega_bar: float | None = None
    m1: int | None = None
    m2: int = 8
    theta_bar2: float | None = None
    m_n: int = 3
    theta_bar_n: float | None = None
    k_bar_n: float | None = None
    rho: float | None = None
    m3: int = 2
    ml_grid: tuple[int, int] = (101, 101)
    ga_grid: int = 64
    amplitude_floor: float = 1e-6
    hfbs_p: int = 513
    hfbs_q: int = 9
    pos_error_grid: tuple[float, ...] = (0.1, 0.25, 0.5, 1.0, 2.0, 5.0, 10.0)
    workers: int = 1
    ga_fit_cache: str | None = None
    snr_reference: str = "unit"
    output: str = "results"

    def __post_init__(self):
        for name in ("angle_range", "distance_range", "gain_std", "snr_db", "methods",
                     "ml_grid", "pos_error_grid"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise InvalidConfig(f"unknown method(s) {bad}; choose from {METHODS}")
        if self.trials < 0 or self.seed < 0:
            raise InvalidConfig("trials and seed must be non-negative")
        if self.m2 < 1 or self.m_n < 1 or self.m3 < 2:
            raise InvalidConfig("need M2 >= 1, Mn >= 1 and M3 >= 2")
        if self.workers < 1:
            raise InvalidConfig("workers must be >= 1")
        if self.snr_reference not in SNR_REFERENCES:
            raise InvalidConfig(f"snr_reference must be one of {SNR_REFERENCES}")
        try:
            self.scenario.validate(self.array)
        except InvalidScenario as exc:
            raise InvalidConfig(str(exc)) from exc

    @property
    def array(self) -> ArrayConfig:
        return ArrayConfig(self.n_half, self.wavelength)

    @property
    def scenario(self) -> Scenario:
        return Scenario(self.angle_range, self.distance_range, self.gain_std)

    @property
    def refine1(self) -> Refine1Config:
        cfg = self.array
        b_bar = self.b_bar
        if b_bar is None:
            b_bar = self.wavelength / (4 * self.scenario.min_range(cfg))
        omega_bar = self.omega_bar
        if omega_bar is None:
            omega_bar = max(abs(self.angle_range[0]), abs(self.angle_range[1]))
        return Refine1Config(omega_bar=omega_bar, b_bar=b_bar, k_tilde1=self.k_tilde1)

    @property
    def refine2(self) -> Refine2Config:
        return Refine2Config(m2=self.m2, theta_bar2=self.theta_bar2)

    @property
    def neighbor_steps(self) -> tuple[float, float]:
        n_t = self.array.n_t
        t_n = 2.0 / n_t if self.theta_bar_n is None else self.theta_bar_n
        if self.k_bar_n is not None:
            k_n = self.k_bar_n
        elif self.rho is not None:
            k_n = invert_coherence(self.array, self.rho)
        else:
            k_n = 6.0 / n_t**2
        return t_n, k_n

    @property
    def m1_resolved(self) -> int:
        return design_m1(self.array, self.refine1) if self.m1 is None else self.m1

    def thbt_overhead_bound(self) -> int:
        return 2 * (self.m1_resolved + self.m2) + 3 * self.m_n + self.m3**2 + 3

    def with_(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        return {"version": CONFIG_VERSION, **d}


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    version = d.pop("version", None)
    if version != CONFIG_VERSION:
        raise InvalidConfig(f"config version must be {CONFIG_VERSION}, got {version!r}")
    gamma = d.pop("nlos_gamma_db", None)
    n_paths = d.pop("n_paths", None)
    if gamma is not None:
        if "gain_std" in d:
            raise InvalidConfig("give either gain_std or nlos_gamma_db, not both")
        n_paths = 3 if n_paths is None else int(n_paths)
        d["gain_std"] = [1.0] + [10 ** (-gamma / 20)] * (n_paths - 1)
    elif n_paths is not None:
        raise InvalidConfig("n_paths only applies together with nlos_gamma_db")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise InvalidConfig(f"unknown config key(s): {unknown}")
    try:
        return ExperimentConfig(**d)
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise InvalidConfig("config root must be a JSON object")
    return config_from_dict(raw)


def noise_var_from_snr(snr_db: float, reference: str = "unit", n_t: int = 1) -> float:
    """Noise variance for a given SNR.

    ``"unit"``: SNR is the ratio of the LoS gain variance to the noise variance.
    ``"element"``: SNR is measured per antenna element, so the noise variance
    is further divided by ``n_t`` (the full array gain of a unit-norm beam).
    """
    nv = 10.0 ** (-snr_db / 10.0)
    if reference == "element":
        nv /= n_t
    elif reference != "unit":
        raise InvalidConfig(f"unknown SNR reference {reference!r}")
    return nv


# ---------------------------------------------------------------- metrics

def beamformer(cfg: ArrayConfig, est: FinalEstimate) -> np.ndarray:
    """Codeword ``gamma(omega_hat, b_hat)`` used for data transmission."""
    return steering_surrogate(cfg, float(np.clip(est.omega, -1.0, 1.0)), est.b)


def estimate_steering(cfg: ArrayConfig, est: FinalEstimate) -> np.ndarray:
    """Exact steering vector at the estimated ``(omega, range)``; planar when far-field."""
    omega = float(np.clip(est.omega, -1.0, 1.0))
    if math.isfinite(est.range_m):
        return steering_exact(cfg, PathParams(1.0, omega, est.range_m))
    return steering_surrogate(cfg, omega, 0.0)


def metric_gain(cfg: ArrayConfig, paths, est: FinalEstimate) -> float:
    """Normalised beamforming gain, weighted by each path's relative amplitude."""
    f = estimate_steering(cfg, est)
    g_m = max(abs(p.gain) for p in paths)
    if g_m == 0:
        return 0.0
    return max(abs(p.gain) / g_m * abs(np.vdot(steering_exact(cfg, p), f)) for p in paths)


def metric_se(h, f, noise_var: float) -> float:
    power = abs(np.vdot(h, f)) ** 2
    if noise_var == 0:
        return math.inf if power > 0 else 0.0
    return math.log2(1 + power / noise_var)


def source_position(path: PathParams) -> np.ndarray:
    w = math.asin(path.omega)
    return np.array([path.range * math.cos(w), path.range * math.sin(w)])


def metric_position(paths, est: FinalEstimate) -> float:
    """Distance between the estimated and the user (first, line-of-sight) position."""
    if not math.isfinite(est.range_m):
        return math.inf
    return float(np.linalg.norm(est.position - source_position(paths[0])))


def metric_success(stage_tag: str) -> bool:
    return stage_tag in SUCCESS_TAGS


# ---------------------------------------------------------------- methods

@dataclass
class TrialResult:
    trial: int
    method: str
    snr_db: float
    gain_xi: float
    se_bpshz: float
    pos_error_m: float
    overhead: int
    stage_tag: str
    omega_hat: float
    b_hat: float
    range_hat_m: float
    seed: int

    def row(self) -> list:
        return [getattr(self, c) for c in TRIAL_COLUMNS]


@functools.lru_cache(maxsize=4)
def _hfbs_book(cfg: ArrayConfig, p: int, q: int, angle_range: tuple, b_bar: float):
    om = np.linspace(angle_range[0], angle_range[1], p)
    bs = np.linspace(0.0, b_bar, q)
    oo, bb = np.meshgrid(om, bs, indexing="ij")
    return oo.ravel(), bb.ravel(), steering_surrogate(cfg, oo.ravel(), bb.ravel())


def _load_fit(conf: ExperimentConfig) -> GaussianFit:
    t_n, k_n = conf.neighbor_steps
    if conf.ga_fit_cache:
        fit = load_fit(conf.ga_fit_cache)
        if not (np.isclose(fit.domain[0], t_n / 2) and np.isclose(fit.domain[1], k_n / 2)):
            raise InvalidConfig("cached Gaussian fit was computed for a different domain")
        return fit
    return fit_gaussian(conf.array, t_n / 2, k_n / 2, conf.ga_grid)


def run_thbt(conf: ExperimentConfig, sounder: Sounder, variant: str = "ml",
             trace: dict | None = None) -> FinalEstimate:
    """Three-stage beam training against ``sounder``; returns the final estimate.

    ``variant`` selects the second-stage estimator (``"ml"`` or ``"psp"``).
    When ``trace`` is a dict it is filled with per-stage intermediates.
    """
    cfg = conf.array
    r1 = conf.refine1
    cb1 = build_codebook1(cfg, r1, conf.m1_resolved)
    m_bar, y1 = train_stage1(sounder, cb1)
    region = extend_region(cfg, region_update1(cfg, m_bar, r1))
    cb2 = build_codebook2(cfg, m_bar, r1, conf.refine2, region)
    y2 = train_stage2(sounder, cb2)

    tag = "ga"
    if variant == "ml":
        start = estimate_ml(cfg, y2, cb2, ml_grid(region, *conf.ml_grid))
    elif variant == "psp":
        phases = unwrap_phases(y2)
        try:
            start = estimate_psp(phases, cb2.theta, cb2.k2)
        except (SingularSystem, ZeroCurvature):
            start = (region.center_theta, 0.5 * r1.b_bar)
    else:
        raise ValueError(f"unknown THBT variant {variant!r}")

    t_n, k_n = conf.neighbor_steps
    state = neighbor_search(sounder, start, (t_n, k_n), conf.m_n)
    omega, b = state.estimate
    intervals = None
    if not state.success:
        tag = "neighbor-fallback"
    else:
        intervals = narrow_regions(state, t_n / 2, k_n / 2)
        try:
            omega, b = ga_estimate(sounder, state, intervals, conf.m3, _load_fit(conf),
                                   conf.amplitude_floor)
        except SingularNormalMatrix:
            tag = "ga-fallback"
    est = finalize(omega, b, cfg.wavelength, tag)

    if trace is not None:
        trace.update(
            m_bar=m_bar,
            stage1=[dict(m=int(m), theta=float(t), k=float(k), abs_y=float(abs(y)))
                    for m, t, k, y in zip(cb1.m, cb1.theta, cb1.k, y1)],
            k2=cb2.k2,
            stage2_estimate=[float(start[0]), float(start[1])],
            neighbor=dict(success=state.success, groups=state.group_index, probes=len(state.history),
                          winner=state.last_winner, estimate=list(state.estimate)),
            ga_intervals=None if intervals is None else [list(intervals[0]), list(intervals[1])],
            final=dataclasses.asdict(est),
            overhead=sounder.count,
        )
        phases = unwrap_phases(y2)
        model = psp_model_phase(cb2.theta, float(start[0]), float(start[1]), cb2.k2)
        model = model - model[0]  # same anchor as the unwrapped series
        trace["phases"] = [
            dict(m=int(m), theta=float(t), wrapped=float(w), unwrapped=float(u), psp_model=float(p))
            for m, t, w, u, p in zip(cb2.m, cb2.theta, phases.wrapped, phases.unwrapped, model)
        ]
    return est


def run_hfbs(conf: ExperimentConfig, sounder: Sounder) -> FinalEstimate:
    """Exhaustive sweep over a ``P x Q`` grid uniform in angle and surrogate distance."""
    om, bs, book = _hfbs_book(conf.array, conf.hfbs_p, conf.hfbs_q,
                              conf.angle_range, conf.refine1.b_bar)
    y = sounder.measure(book)
    i = argmax_first(np.abs(y))
    return finalize(om[i], bs[i], conf.wavelength, "hfbs")


def run_upper_bound(conf: ExperimentConfig, paths) -> FinalEstimate:
    best = max(paths, key=lambda p: abs(p.gain))
    b = float(conf.wavelength * (1 - best.omega**2) / (4 * best.range))
    return FinalEstimate(best.omega, b, best.range, "upper-bound")


def trial_rngs(seed: int, trial: int):
    return np.random.SeedSequence(seed, spawn_key=(trial,))


def _noise_seed(seed: int, trial: int, method: str, snr_db: float):
    snr_key = int(round(snr_db * 1000)) + 10**9
    return np.random.SeedSequence(seed, spawn_key=(trial, _METHOD_CODE[method], snr_key))


def run_trial(conf: ExperimentConfig, trial: int) -> list[TrialResult]:
    """All configured (method, SNR) combinations on the channel of one trial."""
    cfg = conf.array
    paths = sample_paths(cfg, np.random.default_rng(trial_rngs(conf.seed, trial)), conf.scenario)
    h = assemble_channel(cfg, paths)
    out = []
    for method in conf.methods:
        for snr in conf.snr_db:
            nv = noise_var_from_snr(snr, conf.snr_reference, cfg.n_t)
            sounder = Sounder(cfg, h, nv, np.random.default_rng(_noise_seed(conf.seed, trial, method, snr)))
            if method == "thbt-ml":
                est = run_thbt(conf, sounder, "ml")
            elif method == "thbt-psp":
                est = run_thbt(conf, sounder, "psp")
            elif method == "hfbs":
                est = run_hfbs(conf, sounder)
            else:
                est = run_upper_bound(conf, paths)
            f = estimate_steering(cfg, est) if method == "upper-bound" else beamformer(cfg, est)
            out.append(TrialResult(
                trial=trial, method=method, snr_db=float(snr),
                gain_xi=float(metric_gain(cfg, paths, est)),
                se_bpshz=float(metric_se(h, f, nv)),
                pos_error_m=float(metric_position(paths, est)),
                overhead=int(sounder.count),
                stage_tag=est.stage,
                omega_hat=float(est.omega), b_hat=float(est.b), range_hat_m=float(est.range_m),
                seed=conf.seed,
            ))
    return out


def _run_chunk(args):
    conf, trials = args
    return [r for t in trials for r in run_trial(conf, t)]


def run_sweep(conf: ExperimentConfig, workers: int | None = None) -> list[TrialResult]:
    """Run every trial; results are ordered by trial, then method, then SNR."""
    workers = conf.workers if workers is None else workers
    trials = list(range(conf.trials))
    if workers <= 1 or len(trials) < 2:
        return _run_chunk((conf, trials))
    chunks = [trials[i::workers * 4] for i in range(workers * 4)]
    chunks = [c for c in chunks if c]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_run_chunk, [(conf, c) for c in chunks]))
    results = [r for part in parts for r in part]
    order = {m: i for i, m in enumerate(conf.methods)}
    snr_order = {s: i for i, s in enumerate(conf.snr_db)}
    results.sort(key=lambda r: (r.trial, order[r.method], snr_order[r.snr_db]))
    return results


# ---------------------------------------------------------------- reporting

def summary_columns(e_grid) -> tuple[str, ...]:
    return ("method", "snr_db", "trials", "mean_xi", "mean_se_bpshz", "success_rate",
            "mean_overhead", "max_overhead") + tuple(f"cdf_e_le_{e:g}m" for e in e_grid)


def position_cdf(errors, e_grid) -> list[float]:
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        return [float("nan")] * len(e_grid)
    return [float(np.mean(errors <= e)) for e in e_grid]


def aggregate(results, e_grid=(1.0,)) -> list[dict]:
    """One summary row per (method, SNR), in order of first appearance."""
    groups: dict = {}
    for r in results:
        groups.setdefault((r.method, r.snr_db), []).append(r)
    rows = []
    for (method, snr), rs in groups.items():
        cdf = position_cdf([r.pos_error_m for r in rs], e_grid)
        row = dict(
            method=method, snr_db=snr, trials=len(rs),
            mean_xi=float(np.mean([r.gain_xi for r in rs])),
            mean_se_bpshz=float(np.mean([r.se_bpshz for r in rs])),
            success_rate=float(np.mean([metric_success(r.stage_tag) for r in rs]))
            if method.startswith("thbt") else float("nan"),
            mean_overhead=float(np.mean([r.overhead for r in rs])),
            max_overhead=int(max(r.overhead for r in rs)),
        )
        row.update({f"cdf_e_le_{e:g}m": c for e, c in zip(e_grid, cdf)})
        rows.append(row)
    return rows


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path_or_buf, columns, rows) -> None:
    """RFC-4180 CSV with a header; floats use ``repr`` so output is bit-exact."""
    own = isinstance(path_or_buf, (str, Path))
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(columns)
        for row in rows:
            vals = [row[c] for c in columns] if isinstance(row, dict) else list(row)
            w.writerow([_fmt(v) for v in vals])
    finally:
        if own:
            fh.close()


def trials_csv(results) -> str:
    buf = io.StringIO()
    write_csv(buf, TRIAL_COLUMNS, [r.row() for r in results])
    return buf.getvalue()


RUN_METADATA = {
    "snr_definition": "noise variance = 10**(-SNR_dB/10); unit pilot; LoS gain variance 1",
    "se_definition": "log2(1 + |h^H f|^2 / noise_variance)",
    "hfbs_grid": "P angle samples uniform over angle_range x Q surrogate-distance samples uniform over [0, b_bar]",
    "position_reference": "error measured against the first (line-of-sight) path",
    "far_field_position": "b_hat <= 0 gives range_hat_m = inf and pos_error_m = inf",
    "upper_bound": "beamforming with the exact steering vector of the strongest path",
    "success": "neighbouring search converged (stage_tag in ga, ga-fallback)",
}


def write_outputs(conf: ExperimentConfig, results, out_dir) -> dict:
    """Write ``trials.csv``, ``summary.csv`` and ``summary.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trials.csv", "w", newline="") as fh:
        fh.write(trials_csv(results))
    rows = aggregate(results, conf.pos_error_grid)
    write_csv(out / "summary.csv", summary_columns(conf.pos_error_grid), rows)
    r1 = conf.refine1
    t_n, k_n = conf.neighbor_steps
    summary = dict(
        config=conf.to_dict(),
        derived=dict(n_t=conf.array.n_t, b_bar=r1.b_bar, omega_bar=r1.omega_bar,
                     m1=conf.m1_resolved, theta_bar_n=t_n, k_bar_n=k_n,
                     thbt_overhead_bound=conf.thbt_overhead_bound(),
                     hfbs_overhead=conf.hfbs_p * conf.hfbs_q),
        metadata=RUN_METADATA,
        summary=rows,
    )
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, default=_json_default)
        fh.write("\n")
    return summary


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o)}")


def save_fit(fit: GaussianFit, path) -> None:
    with open(path, "w") as fh:
        json.dump(dataclasses.asdict(fit), fh, indent=2)
        fh.write("\n")


def load_fit(path) -> GaussianFit:
    with open(path) as fh:
        d = json.load(fh)
    d["domain"] = tuple(d["domain"])
    return GaussianFit(**d)
