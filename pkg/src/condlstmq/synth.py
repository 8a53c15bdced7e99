"""Seeded synthetic county panels with known ground truth.

Each county draws static features from a standard normal; three designated
causal columns set the scale, timing, and width of a single epidemic wave.
Daily deaths are Poisson around ``severity * wave(t) * weekly(t)``, cases lead
the wave by a week, and mobility moves against it with configurable holes.
The returned truth object carries the exact Poisson intensities so tests can
compare against the generator's predictive quantiles.
"""

from __future__ import annotations

import datetime
import json
from dataclasses import dataclass

import numpy as np

from .data import CountyPanel

TS_FEATURES = ["new_cases", "new_deaths", "mobility_m50", "mobility_m50_index",
               "seasonality"]

# strictly positive day-of-week factors with mean exactly 1
WEEKLY_PATTERN = np.array([0.8, 1.1, 1.25, 1.15, 1.05, 0.9, 0.75])


@dataclass
class SynthTruth:
    """Generator internals: what a perfect model could know."""

    seed: int
    causal_indices: tuple[int, ...]
    base_rate: float
    severity: np.ndarray  # [n_counties]
    peak_day: np.ndarray  # [n_counties]
    width: np.ndarray  # [n_counties]
    lam: np.ndarray  # [n_counties, n_dates] Poisson intensity of deaths
    weekly: np.ndarray  # [7]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "causal_indices": list(self.causal_indices),
            "base_rate": self.base_rate,
            "severity": self.severity.tolist(),
            "peak_day": self.peak_day.tolist(),
            "width": self.width.tolist(),
            "lam": self.lam.tolist(),
            "weekly": self.weekly.tolist(),
        }

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f)
            f.write("\n")


def synth_generate(n_counties: int, n_dates: int, n_cat: int = 10,
                   seed: int = 0, causal_indices: tuple[int, ...] = (0, 1, 2),
                   hole_rate: float = 0.1, base_rate: float = 1.0,
                   start_date: str = "2020-03-01",
                   ) -> tuple[CountyPanel, SynthTruth]:
    """Generate a raw panel (mobility holes as NaN) plus its ground truth.

    Deterministic per seed.  ``base_rate`` scales every intensity; zero gives
    an all-zero death panel.
    """
    if n_counties < 1 or n_counties > 999:
        raise ValueError("n_counties must be in 1..999")
    if n_cat < len(causal_indices):
        raise ValueError("n_cat must cover the causal indices")
    if any(not 0 <= i < n_cat for i in causal_indices):
        raise ValueError(f"causal indices {causal_indices} outside 0..{n_cat - 1}")
    if not 0.0 <= hole_rate < 1.0:
        raise ValueError("hole_rate must lie in [0, 1)")
    rng = np.random.default_rng(seed)

    county_ids = []
    state_of = {}
    for i in range(n_counties):
        state = f"{(i // 5) % 56 + 1:02d}"
        fips = f"{state}{i:03d}"
        county_ids.append(fips)
        state_of[fips] = state
    start = datetime.date.fromisoformat(start_date)
    dates = [(start + datetime.timedelta(days=t)).isoformat()
             for t in range(n_dates)]
    dow = np.array([(start + datetime.timedelta(days=t)).weekday()
                    for t in range(n_dates)])

    cat = rng.standard_normal((n_counties, n_cat))
    z0 = cat[:, causal_indices[0]]
    z1 = cat[:, causal_indices[1 % len(causal_indices)]]
    z2 = cat[:, causal_indices[2 % len(causal_indices)]]

    severity = np.exp(0.9 + 0.7 * z0)
    peak_day = 0.55 * n_dates + 0.18 * n_dates * np.tanh(z1)
    width = np.clip(0.16 * n_dates * np.exp(0.35 * z2),
                    0.05 * n_dates, 0.5 * n_dates)

    t = np.arange(n_dates)
    wave = np.exp(-((t[None, :] - peak_day[:, None]) ** 2)
                  / (2.0 * width[:, None] ** 2))
    weekly = WEEKLY_PATTERN[dow]
    lam = base_rate * severity[:, None] * wave * weekly[None, :]

    deaths = rng.poisson(lam).astype(float)
    lead = np.minimum(t + 7, n_dates - 1)
    lam_cases = 10.0 * base_rate * severity[:, None] * wave[:, lead] * weekly[None, :]
    cases = rng.poisson(lam_cases).astype(float)

    m50 = 60.0 * (1.0 - 0.55 * wave) + rng.normal(0.0, 1.5, size=wave.shape)
    m50_index = 100.0 * (1.0 - 0.6 * wave) + rng.normal(0.0, 2.5, size=wave.shape)
    holes = rng.random(wave.shape) < hole_rate
    m50[holes] = np.nan
    m50_index[holes] = np.nan

    season = np.tile(WEEKLY_PATTERN[dow], (n_counties, 1))

    ts = np.stack([cases, deaths, m50, m50_index, season], axis=2)
    panel = CountyPanel(
        county_ids=county_ids,
        state_of=state_of,
        dates=dates,
        ts_feature_names=list(TS_FEATURES),
        cat_feature_names=[f"static_f{i:02d}" for i in range(n_cat)],
        ts=ts,
        cat=cat,
    )
    panel.validate(allow_holes=True)
    truth = SynthTruth(
        seed=seed,
        causal_indices=tuple(causal_indices),
        base_rate=base_rate,
        severity=severity,
        peak_day=peak_day,
        width=width,
        lam=lam,
        weekly=WEEKLY_PATTERN.copy(),
    )
    return panel, truth
