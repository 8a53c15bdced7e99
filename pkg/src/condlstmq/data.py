"""County panel assembly: CSV ingestion, hole filling, seasonality,
standardization, and windowing into training samples.

The central object is the :class:`CountyPanel`: an aligned
``county x date x feature`` block of daily time series plus a
``county x feature`` matrix of static features.  Panels straight from the
loaders (or the synthetic generator) may carry NaN holes in the time series;
:func:`preprocess_panel` fills them with weekday-aware nearest-neighbour
interpolation or a natural cubic spline, then standardizes every feature
using statistics from the training date range only.
"""

from __future__ import annotations

import datetime
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

PANEL_VERSION = 1
TARGET_FEATURE = "new_deaths"

# static-feature names for the policy indicators
POLICY_FEATURES = {
    "days_since_emergency": ("state of emergency", "emergency declaration"),
    "days_since_safe_at_home": ("shelter in place", "safe at home", "stay at home"),
    "days_since_business_closure": ("non-essential business", "business closure"),
}


# ---------------------------------------------------------------------- types


@dataclass
class StandardizationStats:
    """Per-feature mean/std computed on the training date range."""

    ts_feature_names: list[str]
    cat_feature_names: list[str]
    ts_mean: np.ndarray
    ts_std: np.ndarray
    cat_mean: np.ndarray
    cat_std: np.ndarray
    target_feature: str
    zero_variance: list[str]
    train_date_range: tuple[str, str]

    def ts_index(self, name: str) -> int:
        return self.ts_feature_names.index(name)

    def destandardize_target(self, values: np.ndarray) -> np.ndarray:
        i = self.ts_index(self.target_feature)
        return np.asarray(values) * self.ts_std[i] + self.ts_mean[i]

    def standardize_target(self, values: np.ndarray) -> np.ndarray:
        i = self.ts_index(self.target_feature)
        if self.ts_std[i] == 0:
            return np.zeros_like(np.asarray(values, dtype=float))
        return (np.asarray(values) - self.ts_mean[i]) / self.ts_std[i]

    def to_dict(self) -> dict:
        return {
            "ts_feature_names": self.ts_feature_names,
            "cat_feature_names": self.cat_feature_names,
            "ts_mean": self.ts_mean.tolist(),
            "ts_std": self.ts_std.tolist(),
            "cat_mean": self.cat_mean.tolist(),
            "cat_std": self.cat_std.tolist(),
            "target_feature": self.target_feature,
            "zero_variance": self.zero_variance,
            "train_date_range": list(self.train_date_range),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationStats":
        return cls(
            ts_feature_names=list(d["ts_feature_names"]),
            cat_feature_names=list(d["cat_feature_names"]),
            ts_mean=np.asarray(d["ts_mean"], dtype=float),
            ts_std=np.asarray(d["ts_std"], dtype=float),
            cat_mean=np.asarray(d["cat_mean"], dtype=float),
            cat_std=np.asarray(d["cat_std"], dtype=float),
            target_feature=d["target_feature"],
            zero_variance=list(d["zero_variance"]),
            train_date_range=tuple(d["train_date_range"]),
        )


@dataclass
class CountyPanel:
    """Aligned per-county daily features plus static features."""

    county_ids: list[str]
    state_of: dict[str, str]
    dates: list[str]
    ts_feature_names: list[str]
    cat_feature_names: list[str]
    ts: np.ndarray  # [n_counties, n_dates, n_ts_features]
    cat: np.ndarray  # [n_counties, n_cat_features]
    standardization_stats: StandardizationStats | None = None
    target_feature: str = TARGET_FEATURE

    @property
    def n_counties(self) -> int:
        return len(self.county_ids)

    @property
    def n_dates(self) -> int:
        return len(self.dates)

    def target_index(self) -> int:
        return self.ts_feature_names.index(self.target_feature)

    def date_index(self, date: str) -> int:
        try:
            return self.dates.index(date)
        except ValueError:
            raise ValueError(f"date {date} not covered by panel "
                             f"({self.dates[0]} .. {self.dates[-1]})") from None

    def validate(self, allow_holes: bool = False) -> None:
        if self.ts.shape != (self.n_counties, self.n_dates, len(self.ts_feature_names)):
            raise ValueError(f"ts shape {self.ts.shape} inconsistent with panel")
        if self.cat.shape != (self.n_counties, len(self.cat_feature_names)):
            raise ValueError(f"cat shape {self.cat.shape} inconsistent with panel")
        days = [datetime.date.fromisoformat(d).toordinal() for d in self.dates]
        if any(b - a != 1 for a, b in zip(days, days[1:])):
            raise ValueError("panel dates are not strictly consecutive")
        missing_state = [c for c in self.county_ids if c not in self.state_of]
        if missing_state:
            raise ValueError(f"counties without a state mapping: {missing_state}")
        if not allow_holes and not (np.all(np.isfinite(self.ts))
                                    and np.all(np.isfinite(self.cat))):
            raise ValueError("panel contains missing or non-finite values")

    def copy(self) -> "CountyPanel":
        return CountyPanel(
            county_ids=list(self.county_ids),
            state_of=dict(self.state_of),
            dates=list(self.dates),
            ts_feature_names=list(self.ts_feature_names),
            cat_feature_names=list(self.cat_feature_names),
            ts=self.ts.copy(),
            cat=self.cat.copy(),
            standardization_stats=self.standardization_stats,
            target_feature=self.target_feature,
        )


@dataclass
class WindowSample:
    """One training instance: 7-day history, static vector, 14-day target."""

    county_id: str
    onset_date: str
    history: np.ndarray  # [history_len, n_ts_features]
    categorical: np.ndarray  # [n_cat_features]
    target: np.ndarray  # [horizon]


@dataclass
class PreprocessReport:
    n_counties: int = 0
    n_dates: int = 0
    dropped_rows_no_fips: int = 0
    state_filled_counties: list[str] = field(default_factory=list)
    same_day_filled: int = 0
    spline_filled: int = 0
    zero_variance_features: list[str] = field(default_factory=list)
    seasonality_fallback_states: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_counties": self.n_counties,
            "n_dates": self.n_dates,
            "dropped_rows_no_fips": self.dropped_rows_no_fips,
            "n_state_filled_counties": len(self.state_filled_counties),
            "state_filled_counties": self.state_filled_counties,
            "same_day_filled": self.same_day_filled,
            "spline_filled": self.spline_filled,
            "zero_variance_features": self.zero_variance_features,
            "seasonality_fallback_states": self.seasonality_fallback_states,
        }


# ------------------------------------------------------------- interpolation


def _hole_runs(observed: np.ndarray) -> int:
    """Length of the longest consecutive run of missing entries."""
    longest = run = 0
    for seen in observed:
        run = 0 if seen else run + 1
        longest = max(longest, run)
    return longest


def same_day_interpolate(values: np.ndarray,
                         observed: np.ndarray | None = None) -> np.ndarray:
    """Fill holes from the nearest observed day sharing the same weekday.

    Distance ties break toward the past, so a strictly weekly-periodic series
    is reconstructed exactly from any mask that keeps at least one observation
    per weekday.  When a hole's weekday was never observed: holes outside the
    observed range repeat the first/last recorded value, interior ones take
    the nearest observation of any weekday (ties again toward the past).
    """
    values = np.asarray(values, dtype=float)
    if observed is None:
        observed = ~np.isnan(values)
    observed = np.asarray(observed, dtype=bool)
    obs_idx = np.flatnonzero(observed)
    if obs_idx.size == 0:
        raise ValueError("cannot interpolate an entirely empty series")
    out = values.copy()
    for i in np.flatnonzero(~observed):
        same = obs_idx[(obs_idx - i) % 7 == 0]
        pool = same if same.size else None
        if pool is None:
            if i < obs_idx[0]:
                pick = obs_idx[0]
            elif i > obs_idx[-1]:
                pick = obs_idx[-1]
            else:
                pool = obs_idx
        if pool is not None:
            dist = np.abs(pool - i)
            best = dist.min()
            pick = i - best if (i - best) in pool else i + best
        out[i] = values[pick]
    return out


def _thomas(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray,
            rhs: np.ndarray) -> np.ndarray:
    """Solve a tridiagonal system in place (Thomas algorithm)."""
    n = len(diag)
    d = diag.astype(float).copy()
    r = rhs.astype(float).copy()
    for k in range(1, n):
        w = lower[k - 1] / d[k - 1]
        d[k] -= w * upper[k - 1]
        r[k] -= w * r[k - 1]
    x = np.empty(n)
    x[-1] = r[-1] / d[-1]
    for k in range(n - 2, -1, -1):
        x[k] = (r[k] - upper[k] * x[k + 1]) / d[k]
    return x


def natural_spline_second_derivs(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Second derivatives of the natural cubic spline through (x, y)."""
    n = len(x)
    m = np.zeros(n)
    if n < 3:
        return m
    h = np.diff(x)
    diag = 2.0 * (h[:-1] + h[1:])
    off = h[1:-1]
    rhs = 6.0 * ((y[2:] - y[1:-1]) / h[1:] - (y[1:-1] - y[:-2]) / h[:-1])
    m[1:-1] = _thomas(off, diag, off, rhs)
    return m


def natural_spline_eval(x: np.ndarray, y: np.ndarray, m: np.ndarray,
                        xq: float) -> float:
    """Evaluate the natural cubic spline at one query point inside the knots."""
    j = int(np.searchsorted(x, xq, side="right") - 1)
    j = min(max(j, 0), len(x) - 2)
    h = x[j + 1] - x[j]
    a, b = x[j + 1] - xq, xq - x[j]
    return float(
        m[j] * a ** 3 / (6.0 * h)
        + m[j + 1] * b ** 3 / (6.0 * h)
        + (y[j] / h - m[j] * h / 6.0) * a
        + (y[j + 1] / h - m[j + 1] * h / 6.0) * b
    )


def spline_interpolate(values: np.ndarray,
                       observed: np.ndarray | None = None) -> np.ndarray:
    """Fill holes with a natural cubic spline through the observed points.

    Holes outside the observed range repeat the first/last recorded value
    rather than extrapolating the cubic.
    """
    values = np.asarray(values, dtype=float)
    if observed is None:
        observed = ~np.isnan(values)
    observed = np.asarray(observed, dtype=bool)
    obs_idx = np.flatnonzero(observed)
    if obs_idx.size < 2:
        raise ValueError("spline interpolation needs at least 2 observed points")
    x = obs_idx.astype(float)
    y = values[obs_idx]
    m = natural_spline_second_derivs(x, y)
    out = values.copy()
    for i in np.flatnonzero(~observed):
        if i < obs_idx[0]:
            out[i] = y[0]
        elif i > obs_idx[-1]:
            out[i] = y[-1]
        else:
            out[i] = natural_spline_eval(x, y, m, float(i))
    return out


def fill_series(values: np.ndarray, observed: np.ndarray | None = None,
                spline_run_threshold: int = 14) -> tuple[np.ndarray, str]:
    """Fill a daily series, choosing the method from the hole pattern.

    Weekday-aware interpolation preserves the weekly pattern and is used while
    the longest hole run stays below ``spline_run_threshold`` days; longer
    outages switch to the spline, which handles extended gaps better.
    """
    values = np.asarray(values, dtype=float)
    if observed is None:
        observed = ~np.isnan(values)
    observed = np.asarray(observed, dtype=bool)
    if observed.all():
        return values.copy(), "none"
    if _hole_runs(observed) < spline_run_threshold or observed.sum() < 2:
        return same_day_interpolate(values, observed), "same_day"
    return spline_interpolate(values, observed), "spline"


# --------------------------------------------------------------- seasonality


def week_of_year(date: str) -> int:
    """Calendar week 1..52; the last 1-2 days of the year fold into week 52."""
    doy = datetime.date.fromisoformat(date).timetuple().tm_yday
    return min((doy - 1) // 7 + 1, 52)


@dataclass
class SeasonalityIndex:
    """Multiplicative weekly factors per state, each cycle normalized to mean 1."""

    per_state: dict[str, np.ndarray]
    national: np.ndarray
    fallback_states: list[str]

    def factors_for(self, state: str) -> np.ndarray:
        return self.per_state.get(state, self.national)

    def daily(self, state: str, dates: list[str]) -> np.ndarray:
        factors = self.factors_for(state)
        return np.array([factors[week_of_year(d) - 1] for d in dates])


def _ratio_to_moving_average(weeks: np.ndarray, values: np.ndarray,
                             period: int = 52) -> np.ndarray | None:
    """Weekly index via ratio-to-centered-moving-average; None if not derivable."""
    values = np.asarray(values, dtype=float)
    weeks = np.asarray(weeks, dtype=int)
    n = len(values)
    if n < 2 * period or np.any(~np.isfinite(values)):
        return None
    filt = np.full(period + 1, 1.0 / period)
    filt[0] = filt[-1] = 0.5 / period
    cma = np.convolve(values, filt, mode="valid")
    if np.any(cma <= 0):
        return None
    half = period // 2
    centers = np.arange(half, half + len(cma))
    ratios = values[centers] / cma
    labels = weeks[centers]
    index = np.empty(period)
    for w in range(1, period + 1):
        r = ratios[labels == w]
        if r.size == 0:
            return None
        index[w - 1] = r.mean()
    index /= index.mean()
    if np.any(index <= 0):
        return None
    return index


def extract_seasonality(
        state_weekly: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]],
        period: int = 52) -> SeasonalityIndex:
    """Weekly multiplicative indices from historical (year, week, value) series.

    ``state_weekly`` maps state FIPS to chronologically ordered ``(years,
    weeks, values)`` arrays spanning several full cycles.  States with too
    little history fall back to the national index (mean series across
    states), with a warning.
    """
    per_state: dict[str, np.ndarray] = {}
    fallback: list[str] = []
    for state, (_, weeks, values) in sorted(state_weekly.items()):
        index = _ratio_to_moving_average(weeks, values, period)
        if index is None:
            fallback.append(state)
        else:
            per_state[state] = index

    frame: dict[tuple[int, int], list[float]] = {}
    for _, (years, weeks, values) in state_weekly.items():
        for y, w, v in zip(years, weeks, values):
            frame.setdefault((int(y), int(w)), []).append(float(v))
    keys = sorted(frame)
    nat_weeks = np.array([w for _, w in keys])
    nat_values = np.array([float(np.mean(frame[k])) for k in keys])
    national = _ratio_to_moving_average(nat_weeks, nat_values, period)
    if national is None:
        raise ValueError("insufficient history to extract a national seasonality index")
    for state in fallback:
        log.warning("seasonality: state %s has insufficient history; "
                    "using the national index", state)
    return SeasonalityIndex(per_state=per_state, national=national,
                            fallback_states=fallback)


# ------------------------------------------------------------ standardization


def standardize(panel: CountyPanel,
                n_train_dates: int) -> tuple[CountyPanel, StandardizationStats]:
    """Standardize every feature using moments of the training date range only.

    Uses the population standard deviation.  Zero-variance features map to
    all zeros and are flagged in the returned stats.
    """
    if not 1 <= n_train_dates <= panel.n_dates:
        raise ValueError(f"n_train_dates {n_train_dates} outside 1..{panel.n_dates}")
    panel.validate(allow_holes=False)
    out = panel.copy()
    train_ts = panel.ts[:, :n_train_dates, :]
    ts_mean = train_ts.mean(axis=(0, 1))
    ts_std = train_ts.std(axis=(0, 1))
    cat_mean = panel.cat.mean(axis=0)
    cat_std = panel.cat.std(axis=0)
    zero_var = (
        [n for n, s in zip(panel.ts_feature_names, ts_std) if s == 0]
        + [n for n, s in zip(panel.cat_feature_names, cat_std) if s == 0]
    )
    safe_ts = np.where(ts_std > 0, ts_std, 1.0)
    safe_cat = np.where(cat_std > 0, cat_std, 1.0)
    out.ts = np.where(ts_std > 0, (panel.ts - ts_mean) / safe_ts, 0.0)
    out.cat = np.where(cat_std > 0, (panel.cat - cat_mean) / safe_cat, 0.0)
    stats = StandardizationStats(
        ts_feature_names=list(panel.ts_feature_names),
        cat_feature_names=list(panel.cat_feature_names),
        ts_mean=ts_mean, ts_std=ts_std, cat_mean=cat_mean, cat_std=cat_std,
        target_feature=panel.target_feature,
        zero_variance=zero_var,
        train_date_range=(panel.dates[0], panel.dates[n_train_dates - 1]),
    )
    out.standardization_stats = stats
    return out, stats


def destandardize(values: np.ndarray, mean: float, std: float) -> np.ndarray:
    return np.asarray(values) * std + mean


# ------------------------------------------------------------------ windowing


def make_windows(panel: CountyPanel, history: int = 7,
                 horizon: int = 14) -> list[WindowSample]:
    """One sample per county per onset day: ``n_dates - history - horizon + 1`` each."""
    need = history + horizon
    if panel.n_dates < need:
        raise ValueError(
            f"panel has {panel.n_dates} dates; windowing needs at least {need}"
        )
    t_idx = panel.target_index()
    samples = []
    for ci, county in enumerate(panel.county_ids):
        for onset in range(history, panel.n_dates - horizon + 1):
            samples.append(WindowSample(
                county_id=county,
                onset_date=panel.dates[onset],
                history=panel.ts[ci, onset - history: onset, :].copy(),
                categorical=panel.cat[ci, :].copy(),
                target=panel.ts[ci, onset: onset + horizon, t_idx].copy(),
            ))
    return samples


def collate(samples: list[WindowSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack samples into (history, categorical, target) batch arrays."""
    hist = np.stack([s.history for s in samples])
    cat = np.stack([s.categorical for s in samples])
    tgt = np.stack([s.target for s in samples])
    return hist, cat, tgt


# ------------------------------------------------------------------ panel I/O


def _nested_nan_to_none(a: np.ndarray):
    flat = a.ravel()
    cleaned = [None if math.isnan(v) else v for v in flat.tolist()]
    out = np.empty(len(cleaned), dtype=object)
    out[:] = cleaned
    return out.reshape(a.shape).tolist()


def _nested_none_to_nan(nested) -> np.ndarray:
    arr = np.asarray(nested, dtype=object)
    flat = np.array([np.nan if v is None else float(v) for v in arr.ravel()])
    return flat.reshape(arr.shape)


def save_panel(panel: CountyPanel, path: str) -> None:
    """Write the panel as a single JSON document (NaN holes become null)."""
    doc = {
        "version": PANEL_VERSION,
        "county_ids": panel.county_ids,
        "state_of": panel.state_of,
        "dates": panel.dates,
        "ts_feature_names": panel.ts_feature_names,
        "cat_feature_names": panel.cat_feature_names,
        "target_feature": panel.target_feature,
        "ts": _nested_nan_to_none(panel.ts),
        "cat": _nested_nan_to_none(panel.cat),
        "standardization_stats": (
            panel.standardization_stats.to_dict()
            if panel.standardization_stats else None
        ),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, allow_nan=False)
        f.write("\n")


def load_panel(path: str) -> CountyPanel:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("version") != PANEL_VERSION:
        raise ValueError(f"unsupported panel version {doc.get('version')!r}")
    stats = doc.get("standardization_stats")
    panel = CountyPanel(
        county_ids=list(doc["county_ids"]),
        state_of=dict(doc["state_of"]),
        dates=list(doc["dates"]),
        ts_feature_names=list(doc["ts_feature_names"]),
        cat_feature_names=list(doc["cat_feature_names"]),
        ts=_nested_none_to_nan(doc["ts"]),
        cat=_nested_none_to_nan(doc["cat"]),
        standardization_stats=(
            StandardizationStats.from_dict(stats) if stats else None
        ),
        target_feature=doc.get("target_feature", TARGET_FEATURE),
    )
    panel.validate(allow_holes=True)
    return panel


# -------------------------------------------------------------------- loaders


def _read_csv(path: str, required: set[str], **kw) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, **kw)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ValueError(f"{path}: failed to parse CSV: {exc}") from exc
    if df.shape[0] == 0:
        raise ValueError(f"{path}: no data rows")
    missing = required - set(df.columns)
    if missing:
        raise ValueError(f"{path}: missing required columns {sorted(missing)}")
    return df


def _full_date_range(dates: pd.Series) -> list[str]:
    lo, hi = dates.min(), dates.max()
    return [d.date().isoformat() for d in pd.date_range(lo, hi, freq="D")]


def load_nyt(path: str) -> dict:
    """Load the cumulative county cases/deaths CSV and convert to daily counts.

    Expects the header ``date,county,state,fips,cases,deaths``.  Rows without
    a FIPS code are dropped (count logged and returned).  Cumulative series
    are first-differenced with the first day keeping its recorded value;
    negative daily values from upstream bulk corrections pass through as-is.
    """
    df = _read_csv(path, {"date", "county", "state", "fips", "cases", "deaths"},
                   dtype={"fips": str})
    try:
        df["date"] = pd.to_datetime(df["date"], format="%Y-%m-%d")
    except Exception as exc:
        raise ValueError(f"{path}: unparseable date: {exc}") from exc
    n_before = len(df)
    df = df[df["fips"].notna() & (df["fips"].str.strip() != "")].copy()
    n_dropped = n_before - len(df)
    if n_dropped:
        log.info("dropped %d rows without FIPS from %s", n_dropped, path)
    if df.empty:
        raise ValueError(f"{path}: no rows with a FIPS code")
    df["fips"] = df["fips"].str.zfill(5)
    dates = _full_date_range(df["date"])
    index = pd.to_datetime(dates)

    def daily(col: str) -> pd.DataFrame:
        wide = df.pivot_table(index="date", columns="fips", values=col,
                              aggfunc="last")
        wide = wide.reindex(index).ffill().fillna(0.0)
        out = wide.diff()
        out.iloc[0] = wide.iloc[0]
        return out

    deaths = daily("deaths")
    cases = daily("cases")
    state_of = {f: f[:2] for f in deaths.columns}
    return {
        "dates": dates,
        "deaths": deaths,
        "cases": cases,
        "state_of": state_of,
        "dropped_rows_no_fips": int(n_dropped),
    }


def load_mobility(path: str) -> dict:
    """Load the daily mobility CSV (admin level 1 = state, 2 = county).

    Returns wide frames indexed by date with one column per FIPS; missing
    dates stay as NaN holes for the interpolation stage.
    """
    df = _read_csv(path, {"date", "admin_level", "fips", "m50", "m50_index"},
                   dtype={"fips": str})
    try:
        df["date"] = pd.to_datetime(df["date"], format="%Y-%m-%d")
    except Exception as exc:
        raise ValueError(f"{path}: unparseable date: {exc}") from exc
    df = df[df["fips"].notna() & (df["fips"].str.strip() != "")].copy()
    county = df[df["admin_level"] == 2].copy()
    state = df[df["admin_level"] == 1].copy()
    county["fips"] = county["fips"].str.zfill(5)
    state["fips"] = state["fips"].str.zfill(2).str[:2]

    def wide(part: pd.DataFrame, col: str) -> pd.DataFrame:
        if part.empty:
            return pd.DataFrame()
        return part.pivot_table(index="date", columns="fips", values=col,
                                aggfunc="last")

    return {
        "county_m50": wide(county, "m50"),
        "county_m50_index": wide(county, "m50_index"),
        "state_m50": wide(state, "m50"),
        "state_m50_index": wide(state, "m50_index"),
    }


def load_pi_mortality(path: str) -> dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Load the weekly pneumonia/influenza mortality CSV: state,year,week,rate."""
    df = _read_csv(path, {"state", "year", "week", "rate"}, dtype={"state": str})
    df = df.sort_values(["state", "year", "week"])
    out = {}
    for state, grp in df.groupby("state"):
        out[str(state).zfill(2)] = (
            grp["year"].to_numpy(dtype=int),
            grp["week"].to_numpy(dtype=int),
            grp["rate"].to_numpy(dtype=float),
        )
    return out


def _fips_column(df: pd.DataFrame, path: str) -> str:
    for cand in ("fips", "FIPS", "countyFIPS", "fips_code", "GEOID"):
        if cand in df.columns:
            return cand
    raise ValueError(f"{path}: no FIPS column found")


def _numeric_features(df: pd.DataFrame, fips_col: str,
                      wanted: list[str] | None) -> list[str]:
    if wanted is not None:
        missing = [c for c in wanted if c not in df.columns]
        if missing:
            raise ValueError(f"configured feature columns not in file: {missing}")
        return list(wanted)
    return [c for c in df.columns
            if c != fips_col and pd.api.types.is_numeric_dtype(df[c])]


def _impute_state_then_national(matrix: np.ndarray, states: list[str]) -> int:
    """Fill NaN cells with the state median, then the national median."""
    n_filled = 0
    states_arr = np.asarray(states)
    for j in range(matrix.shape[1]):
        col = matrix[:, j]
        nan_mask = np.isnan(col)
        if not nan_mask.any():
            continue
        for st in np.unique(states_arr[nan_mask]):
            in_state = states_arr == st
            vals = col[in_state & ~nan_mask]
            if vals.size:
                fill = np.median(vals)
                sel = in_state & nan_mask
                col[sel] = fill
                n_filled += int(sel.sum())
        nan_mask = np.isnan(col)
        if nan_mask.any():
            vals = col[~nan_mask]
            if vals.size == 0:
                raise ValueError("static feature column is entirely missing")
            col[nan_mask] = np.median(vals)
            n_filled += int(nan_mask.sum())
    return n_filled


def load_categorical(path_demographics: str, path_gdp: str, path_census: str,
                     path_policy: str, county_ids: list[str],
                     state_of: dict[str, str], panel_start: str,
                     demographic_features: list[str] | None = None,
                     gdp_years: list[str] | None = None,
                     census_features: list[str] | None = None) -> dict:
    """Assemble the static feature matrix for the given counties.

    Demographics must cover every panel county (error lists missing FIPS);
    GDP and census gaps fill with the state median, then the national median.
    Policy actions encode as (enactment date - panel start) in days, 0 when
    never enacted; the earliest matching county- or state-level order wins.
    """
    start = datetime.date.fromisoformat(panel_start)
    names: list[str] = []
    columns: list[np.ndarray] = []
    states = [state_of[c] for c in county_ids]

    demo = _read_csv(path_demographics, set(), dtype=str)
    fips_col = _fips_column(demo, path_demographics)
    demo[fips_col] = demo[fips_col].str.zfill(5)
    demo = demo.set_index(fips_col)
    missing = [c for c in county_ids if c not in demo.index]
    if missing:
        raise ValueError(
            f"{path_demographics}: counties missing from demographics: {missing}"
        )
    demo_num = demo.apply(pd.to_numeric, errors="coerce")
    feats = _numeric_features(demo_num, fips_col, demographic_features)
    for c in feats:
        names.append(c)
        columns.append(demo_num.loc[county_ids, c].to_numpy(dtype=float))

    n_imputed = 0
    for path, wanted, prefix in ((path_gdp, gdp_years, "gdp_"),
                                 (path_census, census_features, "")):
        df = _read_csv(path, set(), dtype=str)
        col = _fips_column(df, path)
        df[col] = df[col].str.zfill(5)
        df = df.set_index(col)
        num = df.apply(pd.to_numeric, errors="coerce")
        feats = _numeric_features(num, col, wanted)
        block = np.full((len(county_ids), len(feats)), np.nan)
        present = [i for i, c in enumerate(county_ids) if c in num.index]
        if present:
            rows = [county_ids[i] for i in present]
            block[present, :] = num.loc[rows, feats].to_numpy(dtype=float)
        n_imputed += _impute_state_then_national(block, states)
        for j, c in enumerate(feats):
            names.append(f"{prefix}{c}")
            columns.append(block[:, j])

    policy = _read_csv(path_policy,
                       {"fips_code", "policy_level", "date", "policy_type",
                        "start_stop"}, dtype={"fips_code": str})
    policy = policy[policy["start_stop"].str.lower() == "start"].copy()
    policy["date"] = pd.to_datetime(policy["date"]).dt.date
    ptype = policy["policy_type"].str.lower()
    for feat_name, patterns in POLICY_FEATURES.items():
        match = policy[ptype.apply(lambda s: any(p in s for p in patterns))]
        by_county: dict[str, datetime.date] = {}
        by_state: dict[str, datetime.date] = {}
        for _, row in match.iterrows():
            code = str(row["fips_code"]).strip()
            when = row["date"]
            if str(row["policy_level"]).lower() == "county":
                code = code.zfill(5)
                if code not in by_county or when < by_county[code]:
                    by_county[code] = when
            else:
                code = code.zfill(2)[:2]
                if code not in by_state or when < by_state[code]:
                    by_state[code] = when
        vals = np.zeros(len(county_ids))
        for i, county in enumerate(county_ids):
            dates = [d for d in (by_county.get(county),
                                 by_state.get(state_of[county])) if d is not None]
            if dates:
                vals[i] = (min(dates) - start).days
        names.append(feat_name)
        columns.append(vals)

    return {
        "cat": np.column_stack(columns),
        "cat_feature_names": names,
        "n_imputed": n_imputed,
    }


# ----------------------------------------------------------- panel assembly


def assemble_panel(nyt: dict, mobility: dict, categorical: dict,
                   seasonality: SeasonalityIndex, start_date: str,
                   end_date: str | None = None) -> tuple[CountyPanel, PreprocessReport]:
    """Align loader outputs into one raw panel (mobility holes left as NaN)."""
    report = PreprocessReport(dropped_rows_no_fips=nyt["dropped_rows_no_fips"])
    end_date = end_date or nyt["dates"][-1]
    dates = [d.date().isoformat() for d in pd.date_range(start_date, end_date)]
    if not dates:
        raise ValueError(f"empty date range {start_date}..{end_date}")
    index = pd.to_datetime(dates)
    county_ids = sorted(nyt["deaths"].columns)
    state_of = {c: nyt["state_of"][c] for c in county_ids}

    deaths = nyt["deaths"].reindex(index).fillna(0.0)
    cases = nyt["cases"].reindex(index).fillna(0.0)

    def mobility_series(kind: str) -> np.ndarray:
        county_wide = mobility[f"county_{kind}"]
        state_wide = mobility[f"state_{kind}"]
        county_wide = (county_wide.reindex(index)
                       if not county_wide.empty else pd.DataFrame(index=index))
        state_wide = (state_wide.reindex(index)
                      if not state_wide.empty else pd.DataFrame(index=index))
        out = np.full((len(county_ids), len(dates)), np.nan)
        uncovered = []
        for i, county in enumerate(county_ids):
            if county in county_wide.columns:
                out[i] = county_wide[county].to_numpy(dtype=float)
            elif state_of[county] in state_wide.columns:
                out[i] = state_wide[state_of[county]].to_numpy(dtype=float)
                if county not in report.state_filled_counties:
                    report.state_filled_counties.append(county)
            else:
                uncovered.append(county)
        if uncovered:
            raise ValueError(
                f"counties with no county- or state-level mobility: {uncovered}"
            )
        return out

    m50 = mobility_series("m50")
    m50_index = mobility_series("m50_index")
    season = np.stack([seasonality.daily(state_of[c], dates) for c in county_ids])
    report.seasonality_fallback_states = list(seasonality.fallback_states)

    ts = np.stack([
        cases.T.reindex(county_ids).to_numpy(dtype=float),
        deaths.T.reindex(county_ids).to_numpy(dtype=float),
        m50,
        m50_index,
        season,
    ], axis=2)
    panel = CountyPanel(
        county_ids=county_ids,
        state_of=state_of,
        dates=dates,
        ts_feature_names=["new_cases", "new_deaths", "mobility_m50",
                          "mobility_m50_index", "seasonality"],
        cat_feature_names=categorical["cat_feature_names"],
        ts=ts,
        cat=categorical["cat"],
    )
    panel.validate(allow_holes=True)
    report.n_counties = panel.n_counties
    report.n_dates = panel.n_dates
    return panel, report


def preprocess_panel(panel: CountyPanel, holdout_days: int = 21,
                     report: PreprocessReport | None = None,
                     ) -> tuple[CountyPanel, PreprocessReport]:
    """Fill every time-series hole, then standardize on the training range."""
    report = report or PreprocessReport(n_counties=panel.n_counties,
                                        n_dates=panel.n_dates)
    filled = panel.copy()
    for ci in range(panel.n_counties):
        for fi in range(len(panel.ts_feature_names)):
            series = filled.ts[ci, :, fi]
            observed = ~np.isnan(series)
            if observed.all():
                continue
            if not observed.any():
                raise ValueError(
                    f"county {panel.county_ids[ci]} feature "
                    f"{panel.ts_feature_names[fi]!r} has no observed values"
                )
            result, method = fill_series(series, observed)
            filled.ts[ci, :, fi] = result
            n = int((~observed).sum())
            if method == "spline":
                report.spline_filled += n
            else:
                report.same_day_filled += n
    if np.isnan(filled.cat).any():
        raise ValueError("static features contain missing values after loading")
    n_train = panel.n_dates - holdout_days
    if n_train < 1:
        raise ValueError(
            f"holdout of {holdout_days} days leaves no training dates "
            f"in a {panel.n_dates}-day panel"
        )
    out, stats = standardize(filled, n_train)
    report.n_counties = out.n_counties
    report.n_dates = out.n_dates
    report.zero_variance_features = list(stats.zero_variance)
    return out, report
