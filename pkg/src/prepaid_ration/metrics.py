"""Service factors, priority service factor, energy tables and disconnection counts."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .domain import PriorityFactors, ValidationError
from .simkernel import SimulationResult, StepRecord, disconnection_runs


@dataclass
class MetricsReport:
    sf: dict[str, float]
    psf: float
    energy_kwh: dict[str, float]
    demand_kwh: dict[str, float]
    energy_fraction: dict[str, float]
    total_energy_kwh: float
    total_energy_fraction: float
    disconnection_count: int
    disconnected_steps: int
    no_demand: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        """Plain JSON-ready dict; undefined fractions (no demand) become None."""
        d = asdict(self)
        d["no_demand"] = list(self.no_demand)
        d["energy_fraction"] = {k: None if v != v else float(v) for k, v in self.energy_fraction.items()}
        if d["total_energy_fraction"] != d["total_energy_fraction"]:
            d["total_energy_fraction"] = None
        return d


def service_factor(actuation, demand) -> float:
    """Fraction of demanded steps during which the load was on.

    A load that was never demanded counts as fully served (1.0); reports show it as n/a.
    """
    a = np.asarray(actuation)
    d = np.asarray(demand)
    if a.shape != d.shape:
        raise ValidationError("actuation and demand rows differ in length")
    if np.any(a > d):
        raise ValidationError("load actuated at a step without demand")
    total = int(d.sum())
    if total == 0:
        return 1.0
    return int(a.sum()) / total


def psf(sf: Mapping[str, float], gamma: PriorityFactors) -> float:
    if set(sf) != set(gamma.gamma):
        raise ValidationError(f"service factors {sorted(sf)} and weights {sorted(gamma.gamma)} differ")
    # the weights sum to 1, so clamp the round-off of the weighted sum
    return min(1.0, max(0.0, float(sum(gamma.gamma[k] * sf[k] for k in sf))))


def count_disconnections(records: Sequence[StepRecord]) -> tuple[int, int]:
    """(number of disconnection events, steps spent disconnected).

    The closing balance of the last record is included, so a wallet that ends
    the horizon overdrawn counts as disconnected.
    """
    if not records:
        return 0, 0
    balances = [r.z for r in records] + [records[-1].z_end]
    return count_balance_runs(balances)


def count_balance_runs(balances: Sequence[float]) -> tuple[int, int]:
    runs = disconnection_runs(balances)
    return len(runs), sum(b - a + 1 for a, b in runs)


def energy_table(result: SimulationResult, power: np.ndarray, step_hours: float):
    """Per-load served kWh and served/demanded fraction, plus a ``"total"`` row."""
    demanded = power.sum(axis=1) * step_hours / 1000.0
    rows = {}
    for i, k in enumerate(result.load_ids):
        served = result.energy_served[k]
        frac = served / demanded[i] if demanded[i] > 0 else float("nan")
        rows[k] = (served, frac)
    total_served = sum(result.energy_served.values())
    total_demand = float(demanded.sum())
    rows["total"] = (total_served, total_served / total_demand if total_demand > 0 else float("nan"))
    return rows


def build_report(result: SimulationResult, power: np.ndarray, step_hours: float,
                 gamma: PriorityFactors) -> MetricsReport:
    sf = {}
    no_demand = []
    for i, k in enumerate(result.load_ids):
        sf[k] = service_factor(result.actuation[i], result.demand[i])
        if not result.demand[i].any():
            no_demand.append(k)
    table = energy_table(result, power, step_hours)
    demanded = power.sum(axis=1) * step_hours / 1000.0
    count, steps = count_disconnections(result.records)
    return MetricsReport(
        sf=sf,
        psf=psf(sf, gamma),
        energy_kwh={k: table[k][0] for k in result.load_ids},
        demand_kwh={k: float(e) for k, e in zip(result.load_ids, demanded)},
        energy_fraction={k: table[k][1] for k in result.load_ids},
        total_energy_kwh=table["total"][0],
        total_energy_fraction=table["total"][1],
        disconnection_count=count,
        disconnected_steps=steps,
        no_demand=tuple(no_demand),
    )


def _sig2(value: float) -> str:
    if value != value:
        return "n/a"
    return f"{value:.2g}" if abs(value) < 100 else f"{value:.0f}"


def write_report(report: MetricsReport, json_path, csv_path) -> None:
    """``report.json`` keeps full precision; ``report.csv`` is the rounded summary table."""
    with open(json_path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["load", "sf", "energy_kwh", "energy_pct"])
        for k in report.sf:
            sf = "n/a" if k in report.no_demand else _sig2(report.sf[k])
            w.writerow([k, sf, _sig2(report.energy_kwh[k]), _sig2(100 * report.energy_fraction[k])])
        w.writerow(["total", _sig2(report.psf), _sig2(report.total_energy_kwh),
                    _sig2(100 * report.total_energy_fraction)])
