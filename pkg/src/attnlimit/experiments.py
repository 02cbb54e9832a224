"""Named experiments comparing finite-width draws with the limit law.

Every cell ``(trial, width, heads)`` draws ``samples_per_run`` finite-width
outputs ``y[0, 0]`` and compares them with ``samples_per_run`` limit draws.
The limit sample of a trial depends only on the head count, so it is drawn
once per ``(trial, heads)`` and reused across widths.

Seeds are derived from the master seed with :func:`derive_seed`:

    finite cell   derive_seed(master, trial, width, heads, "finite")
    limit sample  derive_seed(master, trial, heads, "limit")

so any single cell can be replayed on its own.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .attention import AttentionConfig, ScalingRule, sample_output_batch, sample_score_batch
from .io import IoFailure, write_csv, write_json, write_samples
from .limitlaw import build_limit_spec, sample_limit, sample_limit_draws
from .plotting import emit_svg, plot_log_kl
from .seeding import derive_seed
from .stats import DEFAULT_GRID_POINTS, ComparisonReport, SampleSet, compare, kde

EXPERIMENTS = ("fig1", "fig2a", "fig2b", "lowrank", "custom")
DESK_SAMPLES = 10_000
FULL_SAMPLES = 50_000

_DEFAULTS: dict[str, dict[str, Any]] = {
    "fig1": dict(widths=(16, 64, 256, 1024), heads=(2,), trials=10),
    "fig2a": dict(widths=(256,), heads=(1,), trials=1,
                  scalings=(ScalingRule.INV_SQRT_WIDTH.value, ScalingRule.INV_WIDTH.value)),
    "fig2b": dict(widths=(256,), heads=(1, 256), trials=1),
    "lowrank": dict(widths=(64, 256, 1024), heads=(1, 4, 16), trials=3, head_dim=64,
                    scalings=(ScalingRule.INV_SQRT_HEAD.value,)),
    "custom": dict(widths=(64,), heads=(1,), trials=1),
}

# AttentionConfig fields that may be overridden from the experiment config
_ATTENTION_KEYS = ("spatial_dim", "clip_C", "sigma_q_sq", "sigma_k_sq", "sigma_v_sq", "sigma_o_sq", "sigma_input_sq")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    widths: tuple[int, ...] = (64,)
    heads: tuple[int, ...] = (1,)
    samples_per_run: int = DESK_SAMPLES
    trials: int = 1
    master_seed: int = 0
    scalings: tuple[str, ...] = (ScalingRule.INV_SQRT_WIDTH.value,)
    head_dim: int | None = None
    attention: dict = field(default_factory=dict)
    grid_points: int = DEFAULT_GRID_POINTS
    output_dir: str = "results"
    emit_svg: bool = True
    save_samples: bool = False
    # execution only; never affects results and is left out of the summary
    workers: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
        object.__setattr__(self, "scalings", tuple(ScalingRule(s).value for s in self.scalings))
        if not self.widths or min(self.widths) < 1 or not self.heads or min(self.heads) < 1:
            raise ValueError("widths and heads must be nonempty lists of positive integers")
        if self.samples_per_run < 1 or self.trials < 1:
            raise ValueError("samples_per_run and trials must be positive")
        unknown = set(self.attention) - set(_ATTENTION_KEYS)
        if unknown:
            raise ValueError(f"unknown attention overrides: {sorted(unknown)}")
        if self.experiment == "lowrank" and len(self.widths) != len(self.heads):
            raise ValueError("lowrank pairs widths with heads; the lists must have equal length")

    def resolved(self) -> dict:
        """Everything that determines the results (no output_dir, no workers)."""
        d = dataclasses.asdict(self)
        for key in ("output_dir", "workers"):
            d.pop(key)
        d["attention"] = dict(sorted(self.attention.items()))
        return d

    def cells(self) -> list[tuple[int, int]]:
        """The (width, heads) pairs of one trial, in run order."""
        if self.experiment == "lowrank":
            return list(zip(self.widths, self.heads))
        return [(w, h) for h in self.heads for w in self.widths]

    def attention_config(self, width: int, heads: int, scaling: str | None = None) -> AttentionConfig:
        scaling = ScalingRule(scaling or self.scalings[0])
        head_dim = self.head_dim if scaling is ScalingRule.INV_SQRT_HEAD else None
        if scaling is ScalingRule.INV_SQRT_HEAD and head_dim is None:
            head_dim = width // heads
        return AttentionConfig(width=width, heads=heads, scaling=scaling, head_dim=head_dim, **self.attention)


def default_config(experiment: str, full_scale: bool = False, **overrides) -> ExperimentConfig:
    """Defaults of a named experiment, with keyword overrides (``None`` ignored)."""
    if experiment not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
    kw: dict[str, Any] = dict(_DEFAULTS[experiment])
    kw["samples_per_run"] = FULL_SAMPLES if full_scale else DESK_SAMPLES
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(experiment=experiment, **kw)


def load_config(path, **overrides) -> ExperimentConfig:
    """Read a JSON experiment config; keys missing from it take the named defaults."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    experiment = overrides.pop("experiment", None) or data.pop("experiment", "custom")
    data.pop("experiment", None)
    full_scale = bool(data.pop("full_scale", False))
    data.update({k: v for k, v in overrides.items() if v is not None})
    return default_config(experiment, full_scale=full_scale, **data)


@dataclass
class RunRecord:
    experiment: str
    config: dict
    rows: list[dict]
    reports: list[dict]
    aggregates: dict
    files: list[str]
    timings: dict
    version: str = __version__

    def summary(self) -> dict:
        """The deterministic part of the record (timings excluded)."""
        return {
            "experiment": self.experiment,
            "version": self.version,
            "config": self.config,
            "rows": self.rows,
            "reports": self.reports,
            "aggregates": self.aggregates,
            "files": self.files,
        }


def finite_seed(cfg: ExperimentConfig, trial: int, width: int, heads: int, tag: str = "finite") -> int:
    return derive_seed(cfg.master_seed, trial, width, heads, tag)


def limit_seed(cfg: ExperimentConfig, trial: int, heads: int) -> int:
    return derive_seed(cfg.master_seed, trial, heads, "limit")


def _row(experiment: str, width: int, heads: int, trial: int, rep: ComparisonReport, seed: int) -> dict:
    m = rep.moments_a
    return {
        "experiment": experiment, "width": width, "heads": heads, "trial": trial,
        "kl": rep.kl, "log_kl": rep.log_kl, "ks": rep.ks_statistic,
        "mean": m.mean, "var": m.variance, "skew": m.skewness, "ex_kurtosis": m.ex_kurtosis,
        "seed": seed,
    }


class _Runner:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoFailure(f"cannot create {self.out}: {exc}") from exc
        self.rows: list[dict] = []
        self.reports: list[dict] = []
        self.files: list[str] = []
        self.timings: dict[str, float] = {}
        self.aggregates: dict = {}

    def _timed(self, key, func, *args, **kw):
        t0 = time.perf_counter()
        out = func(*args, **kw)
        self.timings[key] = self.timings.get(key, 0.0) + time.perf_counter() - t0
        return out

    def _save(self, name: str, samples: SampleSet):
        if self.cfg.save_samples:
            write_samples(self.out / name, samples)
            self.files.append(name)

    def _record(self, label: str, width: int, heads: int, trial: int, seed: int,
                finite: SampleSet, limit: SampleSet) -> ComparisonReport:
        rep = compare(finite, limit, self.cfg.grid_points)
        self.rows.append(_row(label, width, heads, trial, rep, seed))
        d = rep.to_dict()
        d.update(width=width, heads=heads, trial=trial, label=label,
                 finite_digest=finite.digest(), limit_digest=limit.digest())
        self.reports.append(d)
        return rep

    def _svg(self, name: str, overlays, **kw):
        if self.cfg.emit_svg:
            emit_svg(overlays, self.out / name, **kw)
            self.files.append(name)

    # -- output-coordinate experiments (fig1, fig2b, lowrank, custom) --

    def run_outputs(self):
        cfg = self.cfg
        n_cnt = cfg.samples_per_run
        first_trial: dict[int, list] = {}
        for trial in range(cfg.trials):
            limits: dict[int, SampleSet] = {}
            for width, heads in cfg.cells():
                att = cfg.attention_config(width, heads)
                if heads not in limits:
                    spec = build_limit_spec(att)
                    limits[heads] = self._timed(
                        "limit", sample_limit, spec, limit_seed(cfg, trial, heads), n_cnt, workers=cfg.workers)
                    self._save(f"limit_t{trial}_H{heads}.awls", limits[heads])
                seed = finite_seed(cfg, trial, width, heads)
                finite = self._timed(f"finite_n{width}_H{heads}", sample_output_batch,
                                     att, seed, n_cnt, workers=cfg.workers)
                self._save(f"finite_t{trial}_n{width}_H{heads}.awls", finite)
                self._record(cfg.experiment, width, heads, trial, seed, finite, limits[heads])
                if trial == 0:
                    first_trial.setdefault(heads, []).append(
                        kde(finite, cfg.grid_points, label=f"n={width}, H={heads}"))
            if trial == 0:
                for heads, curves in first_trial.items():
                    curves.append(kde(limits[heads], cfg.grid_points, label="limit"))
        self._aggregate_kl()
        for heads, curves in first_trial.items():
            self._svg(f"{cfg.experiment}_densities_H{heads}.svg", curves,
                      title=f"y_1^1 densities, H={heads}", xlabel="y", xlim=(-4.0, 4.0))

    def _aggregate_kl(self):
        cfg = self.cfg
        agg = []
        for width, heads in cfg.cells():
            vals = np.array([r["log_kl"] for r in self.rows if r["width"] == width and r["heads"] == heads])
            ks = np.array([r["ks"] for r in self.rows if r["width"] == width and r["heads"] == heads])
            agg.append({
                "width": width, "heads": heads, "trials": int(vals.size),
                "mean_log_kl": float(vals.mean()),
                "std_log_kl": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
                "mean_ks": float(ks.mean()),
            })
        self.aggregates["log_kl"] = agg
        if cfg.emit_svg and len(cfg.cells()) > 1:
            for heads in dict.fromkeys(h for _, h in cfg.cells()):
                sel = [a for a in agg if a["heads"] == heads] if cfg.experiment != "lowrank" else agg
                if len(sel) < 2:
                    continue
                name = f"{cfg.experiment}_logkl.svg" if cfg.experiment == "lowrank" else f"{cfg.experiment}_logkl_H{heads}.svg"
                plot_log_kl([a["width"] for a in sel], [a["mean_log_kl"] for a in sel],
                            [a["std_log_kl"] for a in sel], self.out / name)
                self.files.append(name)
                if cfg.experiment == "lowrank":
                    break

    # -- score experiment (fig2a) --

    def run_scores(self):
        cfg = self.cfg
        n_cnt = cfg.samples_per_run
        table = []
        for trial in range(cfg.trials):
            curves = []
            limit = None
            for width, heads in cfg.cells():
                # reference: the nondegenerate score limit of 1/sqrt(n) scaling
                if limit is None:
                    ref = cfg.attention_config(width, heads, ScalingRule.INV_SQRT_WIDTH.value)
                    p, _, _ = self._timed("limit", sample_limit_draws, build_limit_spec(ref),
                                          limit_seed(cfg, trial, heads), n_cnt, cfg.workers)
                    limit = SampleSet.from_values(p[:, 0, 0, 0], "limit:p[0,0,0]",
                                                  limit_seed(cfg, trial, heads), ref.digest())
                    self._save(f"limit_scores_t{trial}.awls", limit)
                for scaling in cfg.scalings:
                    att = cfg.attention_config(width, heads, scaling)
                    seed = finite_seed(cfg, trial, width, heads, scaling)
                    finite = self._timed(f"scores_{scaling}", sample_score_batch,
                                         att, seed, n_cnt, workers=cfg.workers)
                    self._save(f"scores_t{trial}_{scaling}.awls", finite)
                    rep = self._record(f"fig2a:{scaling}", width, heads, trial, seed, finite, limit)
                    table.append({"scaling": scaling, "width": width, "heads": heads, "trial": trial,
                                  "variance": rep.moments_a.variance, "se_variance": rep.moments_a.se_variance,
                                  "mean": rep.moments_a.mean, "se_mean": rep.moments_a.se_mean})
                    if trial == 0:
                        curves.append(kde(finite, cfg.grid_points, label=f"{scaling}, n={width}"))
            if trial == 0:
                curves.append(kde(limit, cfg.grid_points, label="limit (1/sqrt(n))"))
                self._svg("fig2a_scores.svg", curves, title="score p_11 densities", xlabel="p", xlim=(-4.0, 4.0))
        self.aggregates["score_variance"] = table

    def finish(self) -> RunRecord:
        rec = RunRecord(self.cfg.experiment, self.cfg.resolved(), self.rows, self.reports,
                        self.aggregates, [], {})
        csv_name, json_name = f"{self.cfg.experiment}.csv", f"{self.cfg.experiment}.json"
        write_csv(self.out / csv_name, self.rows)
        rec.files = sorted(self.files + [csv_name])
        write_json(self.out / json_name, rec.summary())
        rec.files = sorted(rec.files + [json_name])
        rec.timings = {k: round(v, 3) for k, v in sorted(self.timings.items())}
        write_json(self.out / f"{self.cfg.experiment}_timings.json",
                   {"workers": self.cfg.workers, "seconds": rec.timings})
        return rec


def run_experiment(cfg: ExperimentConfig) -> RunRecord:
    """Run ``cfg`` and write ``<experiment>.csv``, ``.json`` and SVGs to ``output_dir``.

    CSV and JSON depend only on :meth:`ExperimentConfig.resolved`; wall-clock
    timings go to a separate ``<experiment>_timings.json``.
    """
    runner = _Runner(cfg)
    if cfg.experiment == "fig2a":
        runner.run_scores()
    else:
        runner.run_outputs()
    return runner.finish()
