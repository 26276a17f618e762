"""Architecture planning, the rate experiment and plot-data emission."""

from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np
from scipy.stats import spearmanr

from .divergence import js_values
from .gan_core import BestResponseConfig, TrainingError, make_dataset, train_best_response
from .generator_density import AnalyticMap, GeneratorDensity, density
from .generators import audit_regular, spline_family
from .quadrature import gauss_legendre
from .requ_net import from_params

__all__ = [
    "ArchPlan",
    "plan_architecture",
    "sparsity_constant",
    "ExperimentConfig",
    "RateRecord",
    "RateFit",
    "run_rate_experiment",
    "fit_rate_slope",
    "write_records_csv",
    "read_records_csv",
    "emit_plot_data",
    "load_config",
    "worker_count",
]


def _log2log2(h: float) -> float:
    # log2 log2 H is -inf for H <= 2 and never dominates there
    return math.log2(math.log2(h)) if h > 2 else -math.inf


def sparsity_constant(beta: float, d: int, h: float) -> int:
    """C(beta, d, H) of the ReQU approximation theorem."""
    fb = math.floor(beta)
    depth_term = max(math.ceil(max(math.log2(2 * d * fb + d), _log2log2(h))), 1)
    return 60 * depth_term + 38 + 20 * d * d + 144 * d * fb + 8 * d


@dataclass(frozen=True)
class ArchPlan:
    K: int
    K_raw: float
    gen: tuple
    disc: tuple
    inputs: dict

    def to_dict(self) -> dict:
        return {"K": self.K, "K_raw": self.K_raw,
                "gen": dict(zip(("depth", "width", "nonzeros"), self.gen)),
                "disc": dict(zip(("depth", "width", "nonzeros"), self.disc)),
                "inputs": self.inputs}


def plan_architecture(n: int, beta: float, d: int, h_star: float, h_g: Optional[float] = None,
                      lam: float = 1.5) -> ArchPlan:
    """Generator and discriminator sizes for sample size n.

    K = ceil(n / log n)^(1/(2 beta + d)) is rounded to the nearest integer and floored at 2.
    """
    if n < 3:
        raise ValueError("n >= 3 required")
    if beta <= 2:
        raise ValueError("beta > 2 required")
    fb = math.floor(beta)
    K_raw = math.ceil(n / math.log(n)) ** (1.0 / (2 * beta + d))
    K = max(2, int(math.floor(K_raw + 0.5)))
    log_d = math.ceil(math.log2(d)) if d > 1 else 0
    n_gen = 6 + 2 * (fb - 1) + log_d + 2 * max(math.ceil(max(math.log2(2 * d * fb + 3 * d), _log2log2(h_star))), 1)
    n_disc = 6 + 2 * (fb - 2) + log_d + 2 * max(math.ceil(max(math.log2(2 * d * fb + d), _log2log2(h_star))), 1)
    d_gen = sparsity_constant(beta + 1, d, h_star) * d * (K + fb + 1) ** d
    d_disc = sparsity_constant(beta, d, h_star) * (K + fb) ** d
    w_gen = max(4 * d * (K + fb + 1) ** d, 12 * (K + 2 * fb + 3), d)
    w_disc = max(4 * d * (K + fb) ** d, 12 * (K + 2 * fb + 1), 1)
    inputs = {"n": n, "beta": beta, "d": d, "h_star": h_star, "h_g": 2 * h_star if h_g is None else h_g, "lambda": lam}
    return ArchPlan(K, K_raw, (n_gen, w_gen, d_gen), (n_disc, w_disc, d_disc), inputs)


@dataclass(frozen=True)
class ExperimentConfig:
    d: int = 1
    beta: float = 3.0
    lam: float = 1.5
    target: str = "sine"
    amplitude: float = 0.05
    h_star: float = 2.0
    n_ladder: tuple = (256, 512, 1024, 2048, 4096)
    seeds: tuple = (0, 1, 2)
    gen_knots: int = 8
    training: BestResponseConfig = field(default_factory=BestResponseConfig)
    init_scale: float = 0.3
    quad_points: int = 64
    quad_panels: int = 8
    output_csv: Optional[str] = None

    def __post_init__(self):
        ladder = tuple(int(n) for n in self.n_ladder)
        object.__setattr__(self, "n_ladder", ladder)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise ValueError("n ladder must be strictly increasing")
        if self.d != 1:
            raise ValueError("the rate experiment is implemented for d = 1")

    def truth(self) -> AnalyticMap:
        if self.target != "sine":
            raise ValueError(f"unknown target {self.target!r}")
        return AnalyticMap.sine_1d(self.amplitude)


@dataclass(frozen=True)
class RateRecord:
    n: int
    seed: int
    js_estimate: float
    delta_G_proxy: float
    wall_seconds: float
    epochs: int = 0
    js_init: float = float("nan")
    error: str = ""


def _truth_density(config: ExperimentConfig):
    truth = config.truth()
    g_star = GeneratorDensity(truth, config.lam)
    if not audit_regular(g_star):
        raise ValueError("ground-truth generator fails the regularity audit")
    return truth, g_star


def _cell(config: ExperimentConfig, n: int, seed: int, delta_g: float) -> RateRecord:
    start = time.perf_counter()
    truth, g_star = _truth_density(config)
    quad = gauss_legendre(config.quad_points, 1, intervals=config.quad_panels)
    p_star = density(g_star, quad.nodes)
    fam = spline_family(config.gen_knots, 1, 2.0)

    def js_of(u):
        return js_values(quad.weights, density(fam.generator(u), quad.nodes), p_star)

    data = make_dataset(truth, n, seed)
    u0 = fam.random_weights(np.random.default_rng(1000 + seed), config.init_scale)
    js0 = js_of(u0)
    try:
        run = train_best_response(fam, data, replace(config.training, seed=seed), u0)
    except TrainingError as exc:
        return RateRecord(n, seed, float("nan"), delta_g, time.perf_counter() - start, 0, js0, str(exc))
    u_hat = fam.output_weights(from_params(fam.arch, None, np.asarray(run.w_hat)))
    return RateRecord(n, seed, js_of(u_hat), delta_g, time.perf_counter() - start, run.selected_epoch, js0)


def worker_count(default: int = 1) -> int:
    raw = os.environ.get("GDL_WORKERS")
    if raw is None:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"GDL_WORKERS must be an integer, got {raw!r}") from None


def delta_g_proxy(config: ExperimentConfig) -> float:
    """JS between p* and the push-forward of the least-squares fit of g* in the generator family."""
    truth, g_star = _truth_density(config)
    quad = gauss_legendre(config.quad_points, 1, intervals=config.quad_panels)
    fam = spline_family(config.gen_knots, 1, 2.0)
    u = fam.fit(lambda y: truth.forward(np.asarray(y).reshape(-1, 1))[:, 0])
    return js_values(quad.weights, density(fam.generator(u), quad.nodes), density(g_star, quad.nodes))


def run_rate_experiment(config: ExperimentConfig, workers: Optional[int] = None) -> list[RateRecord]:
    """Train one GAN per (n, seed) cell and record JS(p_hat, p*). Results are ordered by (n, seed)."""
    delta_g = delta_g_proxy(config)
    cells = [(n, s) for n in config.n_ladder for s in config.seeds]
    workers = worker_count() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_cell, [config] * len(cells), [c[0] for c in cells], [c[1] for c in cells],
                                    [delta_g] * len(cells)))
    else:
        records = [_cell(config, n, s, delta_g) for n, s in cells]
    if config.output_csv:
        write_records_csv(records, config.output_csv)
    return records


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float
    target: Optional[float]
    spearman: float
    medians: dict

    def __iter__(self):
        return iter((self.slope, self.intercept, self.r2))


def _medians(records: Iterable[RateRecord]) -> dict:
    by_n: dict = {}
    for r in records:
        if np.isfinite(r.js_estimate):
            by_n.setdefault(r.n, []).append(r.js_estimate)
    return {n: float(np.median(v)) for n, v in sorted(by_n.items())}


def fit_rate_slope(records: Sequence[RateRecord], beta: Optional[float] = None, d: Optional[int] = None) -> RateFit:
    """Least squares of log(median js) on log n."""
    med = _medians(records)
    if len(med) < 3:
        raise ValueError("slope fitting needs at least 3 distinct n")
    x = np.log(np.array(list(med), dtype=float))
    vals = np.array(list(med.values()))
    if np.any(vals <= 0):
        raise ValueError("median JS must be positive for a log-log fit")
    y = np.log(vals)
    if np.ptp(x) == 0:
        raise ValueError("zero-variance abscissa")
    A = np.stack([x, np.ones_like(x)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ np.array([slope, intercept])
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    target = -2 * beta / (2 * beta + d) if beta is not None and d is not None else None
    rho = float(spearmanr(list(med), vals).statistic) if np.ptp(vals) > 0 else 0.0
    return RateFit(float(slope), float(intercept), r2, target, rho, med)


_FIELDS = [f for f in RateRecord.__dataclass_fields__]


def write_records_csv(records: Sequence[RateRecord], path, include_timing: bool = False) -> Path:
    """Write one row per cell. Wall-clock time is left out by default so reruns are byte-identical."""
    path = Path(path)
    fields = _FIELDS if include_timing else [f for f in _FIELDS if f != "wall_seconds"]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in records:
            row = asdict(r)
            w.writerow({k: (repr(row[k]) if isinstance(row[k], float) else row[k]) for k in fields})
    return path


def read_records_csv(path) -> list[RateRecord]:
    out = []
    with Path(path).open() as fh:
        for row in csv.DictReader(fh):
            out.append(RateRecord(int(row["n"]), int(row["seed"]), float(row["js_estimate"]), float(row["delta_G_proxy"]),
                                  float(row.get("wall_seconds") or "nan"), int(row.get("epochs") or 0),
                                  float(row.get("js_init") or "nan"), row.get("error", "")))
    return out


def emit_plot_data(records: Sequence[RateRecord], path, beta: float = 3.0, d: int = 1) -> tuple[Path, Path]:
    """Write ``<path>.csv`` with (n, median, q25, q75) and ``<path>.svg``, a log-log chart with a rate guide line."""
    if not records:
        raise ValueError("no records to plot")
    path = Path(path)
    csv_path, svg_path = path.with_suffix(".csv"), path.with_suffix(".svg")
    by_n: dict = {}
    for r in records:
        if np.isfinite(r.js_estimate) and r.js_estimate > 0:
            by_n.setdefault(r.n, []).append(r.js_estimate)
    rows = [(n, float(np.median(v)), float(np.quantile(v, 0.25)), float(np.quantile(v, 0.75))) for n, v in sorted(by_n.items())]
    if not rows:
        raise ValueError("no positive finite JS values to plot")
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "median_js", "q25", "q75"])
        w.writerows(rows)
    svg_path.write_text(_svg_chart(rows, -2 * beta / (2 * beta + d)))
    return csv_path, svg_path


def guide_line(rows, slope: float) -> tuple[tuple[float, float], tuple[float, float]]:
    """End points in (log10 n, log10 js) of the guide through the first median with the given slope."""
    n0, m0 = rows[0][0], rows[0][1]
    n1 = rows[-1][0]
    x0, y0 = math.log10(n0), math.log10(m0)
    x1 = math.log10(n1) if n1 != n0 else x0 + 1
    return (x0, y0), (x1, y0 + slope * (x1 - x0))


def _svg_chart(rows, slope: float, width: int = 480, height: int = 360, pad: int = 50) -> str:
    (gx0, gy0), (gx1, gy1) = guide_line(rows, slope)
    xs = [math.log10(r[0]) for r in rows] + [gx0, gx1]
    ys = [math.log10(v) for r in rows for v in r[1:]] + [gy0, gy1]
    xmin, xmax = min(xs), max(xs)
    ymin, ymax = min(ys), max(ys)
    xmax = xmax if xmax > xmin else xmin + 1
    ymax = ymax if ymax > ymin else ymin + 1

    def px(x):
        return pad + (x - xmin) / (xmax - xmin) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - ymin) / (ymax - ymin) * (height - 2 * pad)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
             f'<text x="{width / 2:.1f}" y="{height - 10}" text-anchor="middle" font-size="12">log10 n</text>',
             f'<text x="14" y="{height / 2:.1f}" font-size="12" transform="rotate(-90 14 {height / 2:.1f})" '
             f'text-anchor="middle">log10 JS</text>',
             f'<line id="guide" x1="{px(gx0):.3f}" y1="{py(gy0):.3f}" x2="{px(gx1):.3f}" y2="{py(gy1):.3f}" '
             f'stroke="gray" stroke-dasharray="4 3" data-slope="{slope!r}"/>']
    pts = " ".join(f"{px(math.log10(r[0])):.3f},{py(math.log10(r[1])):.3f}" for r in rows)
    parts.append(f'<polyline id="median" points="{pts}" fill="none" stroke="navy"/>')
    for n, med, q25, q75 in rows:
        x = px(math.log10(n))
        parts.append(f'<line x1="{x:.3f}" y1="{py(math.log10(q25)):.3f}" x2="{x:.3f}" y2="{py(math.log10(q75)):.3f}" stroke="navy"/>')
        parts.append(f'<circle cx="{x:.3f}" cy="{py(math.log10(med)):.3f}" r="3" fill="navy"><title>{escape(f"n={n} median={med:.3g}")}</title></circle>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def load_config(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _ints(text: str) -> tuple:
    return tuple(int(t) for t in text.replace(",", " ").split())


def experiment_config_from(values: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from parsed key=value pairs; unknown keys are rejected."""
    train_keys = {f: f for f in BestResponseConfig.__dataclass_fields__}
    train_kwargs, kwargs = {}, {}
    casts = {"d": int, "beta": float, "lambda": float, "target": str, "amplitude": float, "h_star": float,
             "gen_knots": int, "init_scale": float, "quad_points": int, "quad_panels": int, "output_csv": str}
    for key, value in values.items():
        if key == "n_ladder":
            kwargs["n_ladder"] = _ints(value)
        elif key == "seeds":
            kwargs["seeds"] = _ints(value)
        elif key in casts:
            kwargs["lam" if key == "lambda" else key] = casts[key](value)
        elif key.startswith("train.") and key[6:] in train_keys:
            field_type = type(getattr(BestResponseConfig(), key[6:]))
            train_kwargs[key[6:]] = field_type(value)
        else:
            raise ValueError(f"unknown config key {key!r}")
    return ExperimentConfig(training=BestResponseConfig(**train_kwargs), **kwargs)
