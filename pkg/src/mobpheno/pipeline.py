"""Stage runners shared by the CLI.

Every stage reads its inputs from files, writes its exports into the output
directory and records its settings and counts in ``run_metadata.json``.
Outputs are sorted by participant and date so they do not depend on
worker scheduling.
"""
from __future__ import annotations

import dataclasses
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from . import __version__, FORMAT_VERSION
from .analysis import (
    POOLING_NOTE, comparison_table, group_compare, loadings_table,
    morning_evening_contrast, pca_fit, variance_table,
)
from .circadian import METRIC_COLUMNS, daily_metrics, metrics_table, participant_metrics
from .ddp import (
    DDP_COLUMNS, DisplacementProfile, build_ddp, ddp_heatmap_table, ddp_table,
)
from .errors import (
    ConfigInvalid, DataError, InsufficientCoverage, MissingUpstreamArtifact,
)
from .ingest import Group, format_trace_csv, parse_trace, segment_days
from .phenotypes import (
    FEATURE_COLUMNS, PhenotypeConfig, attach_labels, phenotype_table, places_table,
    process_participant, read_survey,
)
from .predict import (
    MIXED_MODEL_NOTE, auc_summary_row, filter_cohort, loocv_auc, model_input,
    prediction_table,
)

log = logging.getLogger(__name__)

METADATA_FILE = "run_metadata.json"


@dataclass
class RunConfig:
    gps_dir: Optional[str] = None
    roster: Optional[str] = None
    survey: Optional[str] = None
    out_dir: str = "out"
    timezone_offset_minutes: int = 0
    min_coverage: float = 0.5
    d_thresh: float = 200.0
    t_thresh: float = 600.0
    merge_distance: float = 200.0
    loc_var_units: str = "m"
    pca_components: int = 10
    pca_log: bool = False
    pca_correlation: bool = False
    circadian_pad: bool = False
    lam: float = 1.0
    n_trees: int = 200
    max_features: int = 2
    min_samples_leaf: int = 1
    min_severe_days: int = 2
    methods: list = field(default_factory=lambda: ["logistic", "forest"])
    standardize: bool = True
    seed: int = 0
    jobs: int = 1

    @classmethod
    def load(cls, path=None, **overrides) -> "RunConfig":
        """JSON config file (optional) with keyword overrides; overrides win."""
        values = {}
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigInvalid(f"config file not found: {p}")
            try:
                values = json.loads(p.read_text())
            except json.JSONDecodeError as e:
                raise ConfigInvalid(f"config file is not valid JSON: {e}") from e
            if not isinstance(values, dict):
                raise ConfigInvalid("config file must hold a JSON object")
        values.update({k: v for k, v in overrides.items() if v is not None})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        positive = ("d_thresh", "t_thresh", "merge_distance", "lam", "n_trees",
                    "max_features", "min_samples_leaf", "jobs")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigInvalid(f"{name} must be positive")
        if not 0.0 <= self.min_coverage <= 1.0:
            raise ConfigInvalid("min_coverage must lie in [0, 1]")
        if not 1 <= self.pca_components <= len(DDP_COLUMNS):
            raise ConfigInvalid(f"pca_components must lie in [1, {len(DDP_COLUMNS)}]")
        if self.loc_var_units not in ("m", "deg"):
            raise ConfigInvalid("loc_var_units must be 'm' or 'deg'")
        bad = set(self.methods) - {"logistic", "forest"}
        if bad or not self.methods:
            raise ConfigInvalid(f"methods must be drawn from logistic, forest; got {self.methods}")
        if self.min_severe_days < 1:
            raise ConfigInvalid("min_severe_days must be >= 1")

    @property
    def phenotype_config(self) -> PhenotypeConfig:
        return PhenotypeConfig(self.d_thresh, self.t_thresh, self.merge_distance,
                               self.min_coverage, self.loc_var_units)

    def echo(self) -> dict:
        """Settings recorded in metadata; the output location is left out."""
        d = dataclasses.asdict(self)
        d.pop("out_dir")
        d.pop("jobs")  # results do not depend on it
        return d


# -- file helpers ----------------------------------------------------------------

def _out(cfg: RunConfig) -> Path:
    p = Path(cfg.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_csv(df: pd.DataFrame, path: Path, footer: Optional[str] = None, **kw) -> None:
    text = df.to_csv(index=False, lineterminator="\n", **kw)
    if footer:
        text += f"# {footer}\n"
    path.write_text(text)


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingUpstreamArtifact(f"{path} not found; run `{stage}` first")
    return path


def update_metadata(cfg: RunConfig, stage: str, info: dict) -> None:
    path = _out(cfg) / METADATA_FILE
    meta = json.loads(path.read_text()) if path.exists() else {}
    meta["toolkit_version"] = __version__
    meta["format_version"] = FORMAT_VERSION
    meta["config"] = cfg.echo()
    meta.setdefault("stages", {})[stage] = info
    path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return None if np.isnan(o) else float(o)
    raise TypeError(type(o))


def read_roster(cfg: RunConfig) -> pd.DataFrame:
    if cfg.roster is None:
        raise ConfigInvalid("a roster file is required")
    path = Path(cfg.roster)
    if not path.is_file():
        raise ConfigInvalid(f"roster file not found: {path}")
    df = pd.read_csv(path, dtype={"participant_id": str})
    if not {"participant_id", "group"} <= set(df.columns):
        raise ConfigInvalid("roster needs participant_id and group columns")
    if "timezone_offset_minutes" not in df:
        df["timezone_offset_minutes"] = cfg.timezone_offset_minutes
    df["group"] = df["group"].astype(str).str.upper()
    bad = set(df["group"]) - {g.value for g in Group}
    if bad:
        raise ConfigInvalid(f"roster has unknown groups {sorted(bad)}")
    if df["participant_id"].duplicated().any():
        raise ConfigInvalid("roster lists a participant twice")
    return df.sort_values("participant_id").reset_index(drop=True)


# -- ingest ----------------------------------------------------------------------

def run_ingest(cfg: RunConfig) -> dict:
    roster = read_roster(cfg)
    if cfg.gps_dir is None or not Path(cfg.gps_dir).is_dir():
        raise ConfigInvalid(f"gps directory not found: {cfg.gps_dir}")
    out = _out(cfg)
    (out / "traces").mkdir(exist_ok=True)
    report, days_rows = [], []
    for row in roster.itertuples():
        src = Path(cfg.gps_dir) / f"{row.participant_id}.csv"
        if not src.is_file():
            raise DataError(f"{row.participant_id}: GPS file {src} missing")
        trace = parse_trace(src.read_bytes(), row.participant_id, row.group,
                            int(row.timezone_offset_minutes))
        (out / "traces" / f"{row.participant_id}.csv").write_text(format_trace_csv(trace))
        days = segment_days(trace)
        report.append({
            "participant_id": row.participant_id, "group": row.group,
            "timezone_offset_minutes": int(row.timezone_offset_minutes),
            "n_points": len(trace), "n_rejected": trace.rejected, "n_days": len(days),
        })
        days_rows.extend({
            "participant_id": row.participant_id, "local_date": d.local_date.isoformat(),
            "n_points": len(d), "coverage_fraction": d.coverage_fraction,
        } for d in days)
    rep = pd.DataFrame(report)
    _write_csv(rep, out / "ingest_report.csv")
    _write_csv(pd.DataFrame(days_rows), out / "days.csv")
    info = {
        "participants": len(rep),
        "points": int(rep["n_points"].sum()),
        "rejected_rows": int(rep["n_rejected"].sum()),
        "days": int(rep["n_days"].sum()),
    }
    update_metadata(cfg, "ingest", info)
    return info


def load_traces(cfg: RunConfig):
    out = Path(cfg.out_dir)
    rep = pd.read_csv(_require(out / "ingest_report.csv", "ingest"),
                      dtype={"participant_id": str})
    for row in rep.itertuples():
        path = _require(out / "traces" / f"{row.participant_id}.csv", "ingest")
        yield parse_trace(path.read_bytes(), row.participant_id, row.group,
                          int(row.timezone_offset_minutes))


# -- ddp / phenotypes ------------------------------------------------------------

def _ddp_only(args):
    trace, min_coverage = args
    profiles, excluded = [], []
    for day in segment_days(trace):
        try:
            profiles.append(build_ddp(day, min_coverage))
        except InsufficientCoverage:
            excluded.append((trace.participant_id, day.local_date.isoformat(),
                             "InsufficientCoverage", day.coverage_fraction))
    return profiles, excluded


def _process(args):
    trace, pcfg = args
    return process_participant(trace, pcfg)


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _write_ddp(cfg: RunConfig, profiles: list[DisplacementProfile], excluded) -> dict:
    out = _out(cfg)
    _write_csv(ddp_table(profiles), out / "ddp.csv", float_format="%.3f")
    _write_csv(ddp_heatmap_table(profiles), out / "ddp_heatmap.csv", float_format="%.6f")
    _write_csv(pd.DataFrame(excluded, columns=["participant_id", "local_date", "reason",
                                               "coverage_fraction"]),
               out / "ddp_excluded.csv")
    info = {"profiles": len(profiles), "excluded_days": len(excluded),
            "min_coverage": cfg.min_coverage}
    update_metadata(cfg, "ddp", info)
    return info


def run_ddp(cfg: RunConfig) -> dict:
    results = _map(_ddp_only, [(t, cfg.min_coverage) for t in load_traces(cfg)], cfg.jobs)
    profiles = [p for r in results for p in r[0]]
    excluded = [e for r in results for e in r[1]]
    return _write_ddp(cfg, profiles, excluded)


def _labelled_rows(cfg: RunConfig, results):
    rows = [r for res in results for r in res.phenotypes]
    if cfg.survey is not None:
        path = Path(cfg.survey)
        if not path.is_file():
            raise ConfigInvalid(f"survey file not found: {path}")
        attach_labels(rows, read_survey(str(path)))
    return rows


def _write_phenotypes(cfg: RunConfig, results) -> dict:
    out = _out(cfg)
    rows = _labelled_rows(cfg, results)
    table = phenotype_table(rows)
    _write_csv(table, out / "phenotypes.csv")
    _write_csv(places_table(results), out / "places.csv")
    info = {
        "rows": len(table),
        "labelled_rows": int(table["severe_sad"].notna().sum()),
        "participants_without_home": sorted(r.participant_id for r in results if r.home is None),
        "missing_values": {c: int(table[c].isna().sum()) for c in FEATURE_COLUMNS},
        "d_thresh": cfg.d_thresh, "t_thresh": cfg.t_thresh,
        "merge_distance": cfg.merge_distance, "loc_var_units": cfg.loc_var_units,
    }
    update_metadata(cfg, "phenotypes", info)
    return info


def run_phenotypes(cfg: RunConfig) -> dict:
    pcfg = cfg.phenotype_config
    results = _map(_process, [(t, pcfg) for t in load_traces(cfg)], cfg.jobs)
    return _write_phenotypes(cfg, results)


# -- pca / circadian -------------------------------------------------------------

def _read_ddp(cfg: RunConfig) -> pd.DataFrame:
    return pd.read_csv(_require(Path(cfg.out_dir) / "ddp.csv", "ddp"),
                       dtype={"participant_id": str, "local_date": str})


def run_pca(cfg: RunConfig) -> dict:
    df = _read_ddp(cfg)
    x = df[DDP_COLUMNS].to_numpy(dtype=float)
    if cfg.pca_log:
        x = np.log1p(x)
    model = pca_fit(x, cfg.pca_components, correlation=cfg.pca_correlation)
    out = _out(cfg)
    _write_csv(loadings_table(model), out / "pca_loadings.csv")
    _write_csv(variance_table(model), out / "pca_variance.csv")
    _write_csv(morning_evening_contrast(model.loadings), out / "pca_contrast.csv")
    scores = df[["participant_id", "local_date", "group"]].copy()
    for k in range(model.n_components):
        scores[f"PC{k + 1}"] = model.scores[:, k]
    _write_csv(scores, out / "pca_scores.csv")
    info = {
        "rows": len(df),
        "components": model.n_components,
        "cumulative_ratio": {str(k): model.cumulative_ratio(k) for k in (10, 20, 30)},
        "log_displacement": cfg.pca_log,
        "correlation": cfg.pca_correlation,
    }
    update_metadata(cfg, "pca", info)
    return info


def run_circadian(cfg: RunConfig) -> dict:
    df = _read_ddp(cfg)
    metrics, daily = [], []
    for (pid, grp), sub in df.groupby(["participant_id", "group"], sort=True):
        x = sub[DDP_COLUMNS].to_numpy(dtype=float)
        metrics.append(participant_metrics(pid, grp, x, pad=cfg.circadian_pad))
        d = daily_metrics(x, pad=cfg.circadian_pad)
        d.insert(0, "group", grp)
        d.insert(0, "local_date", sub["local_date"].to_numpy())
        d.insert(0, "participant_id", pid)
        daily.append(d)
    out = _out(cfg)
    table = metrics_table(metrics)
    _write_csv(table, out / "circadian.csv", na_rep="")
    _write_csv(pd.concat(daily, ignore_index=True), out / "circadian_daily.csv", na_rep="")
    info = {"participants": len(table), "pad_midnight": cfg.circadian_pad,
            "missing": {c: int(table[c].isna().sum()) for c in METRIC_COLUMNS}}
    update_metadata(cfg, "circadian", info)
    return info


# -- compare ---------------------------------------------------------------------

def run_compare(cfg: RunConfig) -> dict:
    out = Path(cfg.out_dir)
    scores = pd.read_csv(_require(out / "pca_scores.csv", "pca"), dtype={"participant_id": str})
    circ = pd.read_csv(_require(out / "circadian.csv", "circadian"), dtype={"participant_id": str})
    circ_day = pd.read_csv(_require(out / "circadian_daily.csv", "circadian"),
                           dtype={"participant_id": str})
    pheno = pd.read_csv(_require(out / "phenotypes.csv", "phenotypes"),
                        dtype={"participant_id": str})
    tests = [(scores, c, "day") for c in scores.columns if c.startswith("PC")]
    tests.append((circ, "IS", "participant"))
    for m in ("IV", "M10", "L5", "RA"):
        tests += [(circ_day, m, "day"), (circ, m, "participant")]
    tests += [(pheno, m, "day") for m in FEATURE_COLUMNS]
    rows, skipped = [], {}
    for table, metric, granularity in tests:
        try:
            rows.append(group_compare(table, metric, granularity))
        except DataError as e:
            skipped[f"{metric}/{granularity}"] = str(e)
    if not rows:
        raise DataError("no metric could be compared between the groups")
    table = comparison_table(rows)
    _write_csv(table, _out(cfg) / "comparison.csv", footer=POOLING_NOTE)
    info = {"rows": len(table), "note": POOLING_NOTE, "skipped_metrics": skipped}
    update_metadata(cfg, "compare", info)
    return info


# -- predict ---------------------------------------------------------------------

def run_predict(cfg: RunConfig) -> dict:
    out = Path(cfg.out_dir)
    pheno = pd.read_csv(_require(out / "phenotypes.csv", "phenotypes"),
                        dtype={"participant_id": str, "local_date": str})
    if cfg.survey is not None:
        path = Path(cfg.survey)
        if not path.is_file():
            raise ConfigInvalid(f"survey file not found: {path}")
        survey = read_survey(str(path))[["participant_id", "local_date", "severe_sad"]]
        survey = survey.drop_duplicates(["participant_id", "local_date"], keep="last")
        pheno = pheno.drop(columns="severe_sad").merge(
            survey, on=["participant_id", "local_date"], how="left")
    if pheno["severe_sad"].notna().sum() == 0:
        raise DataError("phenotype table has no severe-sadness labels; pass a survey file")
    pheno["severe_sad"] = pheno["severe_sad"].astype("boolean")
    cohort = filter_cohort(pheno, cfg.min_severe_days)
    eligible = pheno[pheno["participant_id"].isin(cohort.eligible)]

    results, summary, skipped_groups = [], [], {}
    for method in cfg.methods:
        by_group = {}
        for g in (Group.PRE.value, Group.POST.value):
            data = model_input(eligible, g)
            if len(set(data.participants.tolist())) < 2:
                skipped_groups[f"{method}/{g}"] = "fewer than 2 eligible participants"
                continue
            by_group[g] = loocv_auc(
                data, method, seed=cfg.seed, lam=cfg.lam, n_trees=cfg.n_trees,
                max_features=cfg.max_features, min_samples_leaf=cfg.min_samples_leaf,
                standardize=cfg.standardize,
            )
            results.append(by_group[g])
        if len(by_group) == 2:
            summary.append(auc_summary_row(by_group["PRE"], by_group["POST"]))
    _write_csv(prediction_table(results), _out(cfg) / "prediction.csv", na_rep="")
    _write_csv(pd.DataFrame(summary, columns=["method", "auc_mean_pre", "auc_sd_pre",
                                              "auc_mean_post", "auc_sd_post", "p"]),
               _out(cfg) / "prediction_summary.csv")
    sidecar = {
        "seed": cfg.seed,
        "methods": cfg.methods,
        "logistic": {"lambda": cfg.lam, "note": MIXED_MODEL_NOTE},
        "forest": {"n_trees": cfg.n_trees, "max_features": cfg.max_features,
                   "min_samples_leaf": cfg.min_samples_leaf, "criterion": "gini",
                   "bootstrap": True},
        "standardized_features": cfg.standardize,
        "cohort": {g: {"eligible": e, "total": t} for g, (e, t) in cohort.counts.items()},
        "skipped_participants": {f"{r.method}/{r.group}": r.skipped for r in results},
        "skipped_groups": skipped_groups,
    }
    (_out(cfg) / "prediction_metadata.json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    update_metadata(cfg, "predict", {"cohort": sidecar["cohort"], "summary": summary})
    return sidecar


# -- everything ------------------------------------------------------------------

def run_pipeline(cfg: RunConfig) -> dict:
    info = {"ingest": run_ingest(cfg)}
    pcfg = cfg.phenotype_config
    results = _map(_process, [(t, pcfg) for t in load_traces(cfg)], cfg.jobs)
    profiles = [p for r in results for p in r.profiles]
    excluded = [
        (r.participant_id, d.isoformat(), reason, np.nan)
        for r in results for d, reason in r.excluded_days
    ]
    if excluded:
        cov = pd.read_csv(Path(cfg.out_dir) / "days.csv", dtype={"participant_id": str})
        cov = dict(zip(zip(cov["participant_id"], cov["local_date"]), cov["coverage_fraction"]))
        excluded = [(p, d, r, cov.get((p, d), np.nan)) for p, d, r, _ in excluded]
    info["ddp"] = _write_ddp(cfg, profiles, excluded)
    info["phenotypes"] = _write_phenotypes(cfg, results)
    info["pca"] = run_pca(cfg)
    info["circadian"] = run_circadian(cfg)
    info["compare"] = run_compare(cfg)
    if cfg.survey is not None:
        info["predict"] = run_predict(cfg)
    return info
