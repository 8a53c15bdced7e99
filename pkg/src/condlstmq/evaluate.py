"""Forecast generation and analysis: quantile-loss evaluation, state and
national RMSE with a predict-zero control, paired model comparison,
permutation feature importance, and static-feature sensitivity probes.

Metrics are computed on raw (unclamped, unsorted) model outputs so they
measure exactly what training optimized; the reporting path may clamp
negative death counts to zero and sort the quantile axis.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .data import CountyPanel
from .loss_optim import avg_quantile_loss, batch_quantile_loss
from .model import QuantileForecast, forward_batch
from .stats import SignTestResult, WilcoxonResult, sign_test, wilcoxon_signed_rank
from .train import Checkpoint, split_train_val

FORECAST_COLUMNS = ["fips", "onset_date", "day_index",
                    "q10", "q20", "q30", "q40", "q50", "q60", "q70", "q80", "q90"]


def _onset_index(panel: CountyPanel, onset_date: str) -> int:
    """Index of the first forecast day; the day after the panel ends is valid."""
    import datetime

    if onset_date in panel.dates:
        return panel.dates.index(onset_date)
    last = datetime.date.fromisoformat(panel.dates[-1])
    if datetime.date.fromisoformat(onset_date) == last + datetime.timedelta(days=1):
        return panel.n_dates
    raise ValueError(
        f"onset {onset_date} outside panel range "
        f"{panel.dates[0]} .. {panel.dates[-1]} (+1 day)"
    )


def _check_panel_matches(ckpt: Checkpoint, panel: CountyPanel) -> None:
    if panel.standardization_stats is None:
        raise ValueError("panel is not standardized; run preprocessing first")
    if panel.ts_feature_names != ckpt.stats.ts_feature_names:
        raise ValueError(
            f"panel time-series features {panel.ts_feature_names} do not match "
            f"the checkpoint's {ckpt.stats.ts_feature_names}"
        )
    if panel.cat_feature_names != ckpt.stats.cat_feature_names:
        raise ValueError("panel static features do not match the checkpoint's")


def predict(ckpt: Checkpoint, panel: CountyPanel, onset_date: str,
            clamp_zero: bool = True,
            sort_quantiles: bool | None = None) -> list[QuantileForecast]:
    """Destandardized per-county quantile forecasts starting at ``onset_date``.

    ``sort_quantiles`` defaults to the checkpoint config.  Metric computation
    should pass ``clamp_zero=False, sort_quantiles=False``.
    """
    _check_panel_matches(ckpt, panel)
    config = ckpt.config
    onset = _onset_index(panel, onset_date)
    if onset < config.history_len:
        raise ValueError(
            f"onset {onset_date} needs {config.history_len} days of history; "
            f"panel starts {panel.dates[0]}"
        )
    if sort_quantiles is None:
        sort_quantiles = config.sort_quantiles
    hist = panel.ts[:, onset - config.history_len: onset, :]
    out = forward_batch(ckpt.params, config, hist, panel.cat)
    out = ckpt.stats.destandardize_target(out)
    if sort_quantiles:
        out = np.sort(out, axis=2)
    if clamp_zero:
        out = np.maximum(out, 0.0)
    return [
        QuantileForecast(county_id=c, onset_date=onset_date, values=out[i])
        for i, c in enumerate(panel.county_ids)
    ]


def save_forecast_csv(forecasts: list[QuantileForecast], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(FORECAST_COLUMNS)
        for fc in forecasts:
            for d in range(fc.values.shape[0]):
                w.writerow([fc.county_id, fc.onset_date, d]
                           + [repr(float(v)) for v in fc.values[d]])


def load_forecast_csv(path: str) -> list[QuantileForecast]:
    by_county: dict[str, dict] = {}
    with open(path, newline="", encoding="utf-8") as f:
        r = csv.reader(f)
        header = next(r, None)
        if header != FORECAST_COLUMNS:
            raise ValueError(f"{path}: unexpected forecast header {header}")
        for row in r:
            fips, onset, day = row[0], row[1], int(row[2])
            entry = by_county.setdefault(fips, {"onset": onset, "days": {}})
            entry["days"][day] = [float(v) for v in row[3:12]]
    out = []
    for fips, entry in by_county.items():
        days = entry["days"]
        values = np.array([days[d] for d in sorted(days)])
        out.append(QuantileForecast(fips, entry["onset"], values))
    return out


# ------------------------------------------------------------------- metrics


def eval_pinball(forecasts: list[QuantileForecast], panel: CountyPanel,
                 ckpt: Checkpoint) -> tuple[dict[str, float], float]:
    """Per-county averaged quantile loss on the standardized scale."""
    _check_panel_matches(ckpt, panel)
    t_idx = panel.target_index()
    county_index = {c: i for i, c in enumerate(panel.county_ids)}
    per_county: dict[str, float] = {}
    for fc in forecasts:
        if fc.county_id not in county_index:
            raise ValueError(f"forecast county {fc.county_id} not in panel")
        onset = panel.date_index(fc.onset_date)
        horizon = fc.values.shape[0]
        if onset + horizon > panel.n_dates:
            raise ValueError(
                f"panel is missing truth days for onset {fc.onset_date} "
                f"(+{horizon} days)"
            )
        truth = panel.ts[county_index[fc.county_id], onset: onset + horizon, t_idx]
        preds = ckpt.stats.standardize_target(fc.values)
        per_county[fc.county_id] = avg_quantile_loss(truth, preds)
    mean = float(np.mean(list(per_county.values())))
    return per_county, mean


def forecast_means(forecasts: list[QuantileForecast]) -> dict[str, np.ndarray]:
    """Point estimate per county-day: mean over the nine quantile columns."""
    return {fc.county_id: fc.values.mean(axis=1) for fc in forecasts}


def truth_series(panel: CountyPanel, onset_date: str,
                 horizon: int) -> dict[str, np.ndarray]:
    """Raw daily deaths per county over the forecast window."""
    onset = panel.date_index(onset_date)
    if onset + horizon > panel.n_dates:
        raise ValueError(f"panel is missing truth days for onset {onset_date}")
    t_idx = panel.target_index()
    block = panel.ts[:, onset: onset + horizon, t_idx]
    if panel.standardization_stats is not None:
        block = panel.standardization_stats.destandardize_target(block)
    return {c: block[i] for i, c in enumerate(panel.county_ids)}


def aggregate_state(series_by_county: dict[str, np.ndarray],
                    state_of: dict[str, str]) -> dict[str, np.ndarray]:
    """Sum county series into their states (first two FIPS digits)."""
    out: dict[str, np.ndarray] = {}
    for county, series in series_by_county.items():
        state = state_of.get(county)
        if state is None:
            raise ValueError(f"county {county} has no state mapping")
        if state in out:
            out[state] = out[state] + series
        else:
            out[state] = np.asarray(series, dtype=float).copy()
    return out


def national_total(by_state: dict[str, np.ndarray]) -> np.ndarray:
    return np.sum(list(by_state.values()), axis=0)


def rmse(pred: np.ndarray, truth: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"series lengths differ: {pred.shape} vs {truth.shape}")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def zero_control(truth: np.ndarray) -> float:
    """RMSE of always predicting zero deaths."""
    return rmse(np.zeros_like(np.asarray(truth, dtype=float)), truth)


@dataclass
class EvalReport:
    onset_date: str
    checkpoint_digest: str
    per_county_pinball: dict[str, float]
    mean_pinball: float
    state_rmse: dict[str, float]
    national_rmse: float
    state_control_rmse: dict[str, float]
    national_control_rmse: float

    def to_dict(self) -> dict:
        return {
            "onset_date": self.onset_date,
            "checkpoint_digest": self.checkpoint_digest,
            "mean_pinball": self.mean_pinball,
            "per_county_pinball": self.per_county_pinball,
            "state_rmse": self.state_rmse,
            "national_rmse": self.national_rmse,
            "state_control_rmse": self.state_control_rmse,
            "national_control_rmse": self.national_control_rmse,
        }

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


def evaluate_checkpoint(ckpt: Checkpoint, panel: CountyPanel,
                        onset_date: str) -> EvalReport:
    """Pinball per county plus state/national RMSE against a zero control."""
    horizon = ckpt.config.horizon
    raw = predict(ckpt, panel, onset_date, clamp_zero=False, sort_quantiles=False)
    per_county, mean_pin = eval_pinball(raw, panel, ckpt)
    pred_state = aggregate_state(forecast_means(raw), panel.state_of)
    true_state = aggregate_state(truth_series(panel, onset_date, horizon),
                                 panel.state_of)
    state_rmse = {s: rmse(pred_state[s], true_state[s]) for s in sorted(true_state)}
    state_ctrl = {s: zero_control(true_state[s]) for s in sorted(true_state)}
    return EvalReport(
        onset_date=onset_date,
        checkpoint_digest=ckpt.digest(),
        per_county_pinball=per_county,
        mean_pinball=mean_pin,
        state_rmse=state_rmse,
        national_rmse=rmse(national_total(pred_state), national_total(true_state)),
        state_control_rmse=state_ctrl,
        national_control_rmse=zero_control(national_total(true_state)),
    )


def county_total_deaths(panel: CountyPanel) -> dict[str, float]:
    """Total raw deaths per county over the whole panel."""
    t_idx = panel.target_index()
    block = panel.ts[:, :, t_idx]
    if panel.standardization_stats is not None:
        block = panel.standardization_stats.destandardize_target(block)
    return {c: float(block[i].sum()) for i, c in enumerate(panel.county_ids)}


# ---------------------------------------------------------- model comparison


@dataclass
class CompareResult:
    deltas: dict[str, float]  # loss_a - loss_b per qualifying county
    min_deaths: float
    histogram_counts: list[int]
    histogram_edges: list[float]
    wilcoxon: WilcoxonResult

    def to_dict(self) -> dict:
        return {
            "n_counties": len(self.deltas),
            "min_deaths": self.min_deaths,
            "deltas": self.deltas,
            "histogram_counts": self.histogram_counts,
            "histogram_edges": self.histogram_edges,
            "wilcoxon_statistic": self.wilcoxon.statistic,
            "wilcoxon_p_value": self.wilcoxon.p_value,
            "wilcoxon_n": self.wilcoxon.n,
            "wilcoxon_method": self.wilcoxon.method,
        }


def compare_models(losses_a: dict[str, float], losses_b: dict[str, float],
                   total_deaths: dict[str, float],
                   min_deaths: float = 50.0) -> CompareResult:
    """Paired per-county loss comparison over high-mortality counties.

    Deltas are ``losses_a - losses_b``; the one-sided signed-rank test asks
    whether model A's losses are systematically lower.
    """
    common = sorted(set(losses_a) & set(losses_b))
    qualifying = [c for c in common if total_deaths.get(c, 0.0) > min_deaths]
    if not qualifying:
        raise ValueError(
            f"no counties with more than {min_deaths} total deaths to compare"
        )
    deltas = {c: losses_a[c] - losses_b[c] for c in qualifying}
    values = np.array(list(deltas.values()))
    counts, edges = np.histogram(values, bins=10)
    result = wilcoxon_signed_rank(values, alternative="less")
    return CompareResult(
        deltas=deltas,
        min_deaths=min_deaths,
        histogram_counts=counts.tolist(),
        histogram_edges=edges.tolist(),
        wilcoxon=result,
    )


# ------------------------------------------------------ permutation importance


def _val_arrays(panel: CountyPanel, ckpt: Checkpoint,
                holdout_days: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    config = ckpt.config
    _, val = split_train_val(panel, history=config.history_len,
                             horizon=config.horizon, holdout_days=holdout_days)
    hist = np.stack([s.history for s in val])
    cat = np.stack([s.categorical for s in val])
    tgt = np.stack([s.target for s in val])
    return hist, cat, tgt


def _val_loss(ckpt: Checkpoint, panel: CountyPanel, holdout_days: int) -> float:
    hist, cat, tgt = _val_arrays(panel, ckpt, holdout_days)
    preds = forward_batch(ckpt.params, ckpt.config, hist, cat)
    return batch_quantile_loss(tgt, preds)


@dataclass
class ImportanceRow:
    feature: str
    kind: str  # "categorical" or "timeseries"
    baseline_loss: float
    shuffled_losses: list[float]
    mean_delta: float
    sign_test: SignTestResult

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "kind": self.kind,
            "baseline_loss": self.baseline_loss,
            "shuffled_losses": self.shuffled_losses,
            "mean_delta": self.mean_delta,
            "p_value": self.sign_test.p_value,
            "n_positive": self.sign_test.n_positive,
        }


def feature_kind(panel: CountyPanel, feature: str) -> str:
    if feature in panel.cat_feature_names:
        return "categorical"
    if feature in panel.ts_feature_names:
        return "timeseries"
    raise ValueError(
        f"unknown feature {feature!r}; static features: "
        f"{panel.cat_feature_names}; time-series features: {panel.ts_feature_names}"
    )


def permutation_importance(ckpt: Checkpoint, panel: CountyPanel, feature: str,
                           kind: str | None = None, repeats: int = 10,
                           seed: int = 0,
                           holdout_days: int = 21) -> ImportanceRow:
    """Validation-loss increase after shuffling one feature.

    Static features are permuted across counties.  Time-series features are
    first reassigned whole across counties, then each county's series gets an
    independent permutation of its time axis, which keeps the inputs within
    the realistic per-county value range.  Each repeat draws from its own
    seeded stream.
    """
    _check_panel_matches(ckpt, panel)
    actual_kind = feature_kind(panel, feature)
    if kind is not None and kind != actual_kind:
        raise ValueError(f"feature {feature!r} is {actual_kind}, not {kind}")
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    baseline = _val_loss(ckpt, panel, holdout_days)
    streams = np.random.SeedSequence(seed).spawn(repeats)
    shuffled_losses = []
    for stream in streams:
        rng = np.random.default_rng(stream)
        shuffled = panel.copy()
        if actual_kind == "categorical":
            j = panel.cat_feature_names.index(feature)
            perm = rng.permutation(panel.n_counties)
            shuffled.cat[:, j] = panel.cat[perm, j]
        else:
            j = panel.ts_feature_names.index(feature)
            perm = rng.permutation(panel.n_counties)
            series = panel.ts[perm, :, j].copy()
            for c in range(panel.n_counties):
                series[c] = series[c, rng.permutation(panel.n_dates)]
            shuffled.ts[:, :, j] = series
        shuffled_losses.append(_val_loss(ckpt, shuffled, holdout_days))
    deltas = [s - baseline for s in shuffled_losses]
    return ImportanceRow(
        feature=feature,
        kind=actual_kind,
        baseline_loss=baseline,
        shuffled_losses=shuffled_losses,
        mean_delta=float(np.mean(deltas)),
        sign_test=sign_test(deltas),
    )


@dataclass
class ImportanceReport:
    window_label: str
    baseline_loss: float
    rows: list[ImportanceRow] = field(default_factory=list)

    def ranked(self) -> list[ImportanceRow]:
        return sorted(self.rows, key=lambda r: r.mean_delta, reverse=True)

    def to_dict(self) -> dict:
        return {
            "window": self.window_label,
            "baseline_loss": self.baseline_loss,
            "rows": [r.to_dict() for r in self.ranked()],
        }

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")


def importance_report(ckpt: Checkpoint, panel: CountyPanel,
                      features: list[str], repeats: int = 10, seed: int = 0,
                      holdout_days: int = 21) -> ImportanceReport:
    """Permutation importance for several features, deterministic per feature.

    Each feature gets its own seed stream derived from (seed, feature name),
    so subsets of features can be recomputed independently.
    """
    cut = panel.n_dates - holdout_days
    label = f"{panel.dates[cut]}..{panel.dates[-1]}"
    report = ImportanceReport(
        window_label=label,
        baseline_loss=_val_loss(ckpt, panel, holdout_days),
    )
    for feature in features:
        name_hash = int.from_bytes(
            hashlib.sha256(feature.encode()).digest()[:4], "big")
        feature_seed = int(np.random.SeedSequence(
            [seed, name_hash]).generate_state(1)[0])
        report.rows.append(permutation_importance(
            ckpt, panel, feature, repeats=repeats, seed=feature_seed,
            holdout_days=holdout_days))
    return report


# ----------------------------------------------------------------- sensitivity


@dataclass
class SensitivityResult:
    feature: str
    onset_date: str
    magnitude: float
    baseline: np.ndarray  # national daily predicted deaths
    increased: np.ndarray
    decreased: np.ndarray

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "onset_date": self.onset_date,
            "magnitude": self.magnitude,
            "baseline": self.baseline.tolist(),
            "increased": self.increased.tolist(),
            "decreased": self.decreased.tolist(),
        }

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")


def sensitivity(ckpt: Checkpoint, panel: CountyPanel, feature: str,
                onset_date: str, magnitude: float = 3.0) -> SensitivityResult:
    """National prediction after shifting one static feature by +/- magnitude
    standard deviations (the panel is standardized, so +/- magnitude directly).
    """
    _check_panel_matches(ckpt, panel)
    kind = feature_kind(panel, feature)
    if kind != "categorical":
        raise ValueError(
            f"sensitivity applies to static features only; {feature!r} is a "
            f"time-series feature"
        )
    j = panel.cat_feature_names.index(feature)

    def national_for(shift: float) -> np.ndarray:
        probe = panel.copy()
        probe.cat[:, j] = panel.cat[:, j] + shift
        forecasts = predict(ckpt, probe, onset_date)
        return national_total(aggregate_state(forecast_means(forecasts),
                                              panel.state_of))

    return SensitivityResult(
        feature=feature,
        onset_date=onset_date,
        magnitude=magnitude,
        baseline=national_for(0.0),
        increased=national_for(magnitude),
        decreased=national_for(-magnitude),
    )
