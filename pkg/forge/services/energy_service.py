from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

import pandas as pd
from pydantic import ValidationError

from ..errors import DataError
from ..models import (
    BASELINE_ARCHETYPE,
    BuildingRecord,
    EnergyReport,
    EuiRecord,
    ReportAverage,
    ZoneEstimate,
    ZoneTotals,
)
from ..utils.tables import read_csv, write_csv

logger = logging.getLogger(__name__)

EuiTable = Union[Sequence[EuiRecord], Mapping[str, float]]
METHODS = ("sampled", "averaged")


def archetype_id(cluster: int) -> str:
    return f"cluster_{int(cluster)}"


def eui_lookup(table: EuiTable) -> Dict[str, float]:
    if isinstance(table, Mapping):
        return {str(k): float(v) for k, v in table.items()}
    out: Dict[str, float] = {}
    for rec in table:
        if rec.archetype_id in out:
            raise DataError(f"duplicate archetype_id '{rec.archetype_id}' in EUI table")
        out[rec.archetype_id] = rec.eui_kwh_per_m2
    return out


def aggregate_total(records: Sequence[BuildingRecord], eui_table: EuiTable,
                    labels: Optional[Mapping[str, int]] = None) -> float:
    """Sum of floor area x EUI. Without labels every building takes the PBM EUI."""
    eui = eui_lookup(eui_table)
    terms = []
    for rec in records:
        if labels is None:
            key = BASELINE_ARCHETYPE
            if key not in eui:
                raise DataError(f"baseline EUI table has no '{BASELINE_ARCHETYPE}' row")
        else:
            if rec.id not in labels:
                raise DataError(f"building '{rec.id}' has no cluster label")
            key = archetype_id(labels[rec.id])
            if key not in eui:
                raise DataError(f"no EUI for cluster {labels[rec.id]} (archetype '{key}')")
        terms.append(rec.floor_area_m2 * eui[key])
    return math.fsum(terms)


def accuracy(estimated_kwh: float, actual_kwh: float) -> float:
    """1 - |est - actual| / actual; negative for gross overestimates."""
    if not actual_kwh > 0:
        raise DataError(f"actual energy must be positive, got {actual_kwh}")
    return 1.0 - abs(estimated_kwh - actual_kwh) / actual_kwh


def implied_baseline_eui(actual_total_kwh: float, actual_mean_eui: float, baseline_accuracy: float) -> float:
    if min(actual_total_kwh, actual_mean_eui, baseline_accuracy) <= 0:
        raise DataError("implied_baseline_eui needs positive inputs")
    return actual_mean_eui * baseline_accuracy


def _mean(values: Iterable[float]) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


def estimate_zone(totals: ZoneTotals) -> ZoneEstimate:
    base = accuracy(totals.baseline_kwh, totals.actual_kwh)
    sampled = accuracy(totals.sampled_kwh, totals.actual_kwh)
    averaged = accuracy(totals.averaged_kwh, totals.actual_kwh)
    return ZoneEstimate(
        **totals.model_dump(),
        baseline_accuracy=base,
        sampled_accuracy=sampled,
        averaged_accuracy=averaged,
        sampled_improvement=sampled - base,
        averaged_improvement=averaged - base,
    )


def compare_totals(totals: Sequence[ZoneTotals], conditioned: Optional[Dict[str, Optional[bool]]] = None,
                   config_hash: Optional[str] = None) -> EnergyReport:
    """Zone comparison straight from per-zone kWh totals."""
    if not totals:
        raise DataError("no zones to compare")
    zones = [estimate_zone(t) for t in totals]
    average = ReportAverage(
        baseline_accuracy=_mean(z.baseline_accuracy for z in zones),
        sampled_accuracy=_mean(z.sampled_accuracy for z in zones),
        averaged_accuracy=_mean(z.averaged_accuracy for z in zones),
        sampled_improvement=_mean(z.sampled_improvement for z in zones),
        averaged_improvement=_mean(z.averaged_improvement for z in zones),
        method_accuracy=_mean(a for z in zones for a in (z.sampled_accuracy, z.averaged_accuracy)),
        improvement=_mean(i for z in zones for i in (z.sampled_improvement, z.averaged_improvement)),
    )
    return EnergyReport(zones=zones, average=average, conditioned=conditioned or {}, config_hash=config_hash)


@dataclass
class ZoneInput:
    zone: str
    records: Sequence[BuildingRecord]
    labels: Mapping[str, int]
    baseline: EuiTable
    sampled: EuiTable
    averaged: EuiTable
    actual_kwh: float


def table_conditioned(table: EuiTable) -> Optional[bool]:
    """True/False when every row agrees, None for mixed tables or plain mappings."""
    if isinstance(table, Mapping):
        return None
    flags = {rec.conditioned for rec in table}
    return flags.pop() if len(flags) == 1 else None


def compare_report(zones: Sequence[ZoneInput], config_hash: Optional[str] = None) -> EnergyReport:
    totals = []
    for z in zones:
        totals.append(ZoneTotals(
            zone=z.zone,
            actual_kwh=z.actual_kwh,
            baseline_kwh=aggregate_total(z.records, z.baseline),
            sampled_kwh=aggregate_total(z.records, z.sampled, z.labels),
            averaged_kwh=aggregate_total(z.records, z.averaged, z.labels),
        ))
        logger.info("zone %s: actual=%.3E baseline=%.3E sampled=%.3E averaged=%.3E", z.zone,
                    totals[-1].actual_kwh, totals[-1].baseline_kwh, totals[-1].sampled_kwh, totals[-1].averaged_kwh)
    conditioned = {}
    if zones:
        conditioned = {
            "baseline": table_conditioned(zones[0].baseline),
            "sampled": table_conditioned(zones[0].sampled),
            "averaged": table_conditioned(zones[0].averaged),
        }
    return compare_totals(totals, conditioned, config_hash)


def split_by_zone(records: Sequence[BuildingRecord]) -> Dict[str, List[BuildingRecord]]:
    """Records grouped per zone, zones in first-seen order."""
    out: Dict[str, List[BuildingRecord]] = {}
    for rec in records:
        out.setdefault(rec.zone, []).append(rec)
    return out


def actuals_from_measured(records: Sequence[BuildingRecord]) -> Dict[str, float]:
    terms: Dict[str, List[float]] = defaultdict(list)
    for rec in records:
        if rec.measured_eui_kwh_m2 is None:
            raise DataError(f"building '{rec.id}' has no measured EUI")
        terms[rec.zone].append(rec.floor_area_m2 * rec.measured_eui_kwh_m2)
    return {zone: math.fsum(v) for zone, v in terms.items()}


# ---------- file formats ----------

def _require_columns(path: Path, frame: pd.DataFrame, columns: Sequence[str]) -> None:
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing column(s) {', '.join(missing)}")


def _read(path: Path) -> pd.DataFrame:
    try:
        return read_csv(path)
    except FileNotFoundError:
        raise DataError(f"{path} not found")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"{path}: {e}")


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("true", "1", "yes"):
        return True
    if text in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def load_eui_table(path: Path) -> List[EuiRecord]:
    path = Path(path)
    frame = _read(path)
    _require_columns(path, frame, ["archetype_id", "eui_kwh_per_m2"])
    rows = []
    for line, row in enumerate(frame.to_dict("records"), start=2):
        try:
            cond = row.get("conditioned", True)
            rows.append(EuiRecord(
                archetype_id=str(row["archetype_id"]),
                eui_kwh_per_m2=float(row["eui_kwh_per_m2"]),
                conditioned=True if pd.isna(cond) else _parse_bool(cond),
            ))
        except (ValidationError, ValueError) as e:
            raise DataError(f"{path}: row {line}: {e}")
    eui_lookup(rows)  # rejects duplicate ids
    return rows


def write_eui_table(path: Path, rows: Sequence[EuiRecord], config_hash: Optional[str] = None) -> Path:
    frame = pd.DataFrame([r.model_dump() for r in rows], columns=["archetype_id", "eui_kwh_per_m2", "conditioned"])
    frame["conditioned"] = frame["conditioned"].map(lambda b: "true" if b else "false")
    return write_csv(path, frame, config_hash)


def load_actuals(path: Path, records: Optional[Sequence[BuildingRecord]] = None) -> Dict[str, float]:
    """Per-zone actual kWh, either given directly or from per-building measured EUIs."""
    path = Path(path)
    frame = _read(path)
    if {"zone", "actual_kwh"} <= set(frame.columns):
        return {str(z): float(v) for z, v in zip(frame["zone"], frame["actual_kwh"])}
    if {"building_id", "measured_eui_kwh_m2"} <= set(frame.columns):
        if records is None:
            raise DataError(f"{path}: per-building actuals need the inventory")
        by_id = {r.id: r for r in records}
        terms: Dict[str, List[float]] = defaultdict(list)
        for bid, eui in zip(frame["building_id"], frame["measured_eui_kwh_m2"]):
            rec = by_id.get(str(bid))
            if rec is None:
                logger.warning("%s: building '%s' not in the inventory, skipped", path, bid)
                continue
            terms[rec.zone].append(rec.floor_area_m2 * float(eui))
        return {zone: math.fsum(v) for zone, v in terms.items()}
    raise DataError(f"{path}: expected columns zone,actual_kwh or building_id,measured_eui_kwh_m2")


def load_estimates(path: Path) -> List[ZoneTotals]:
    path = Path(path)
    frame = _read(path)
    cols = ["zone", "actual_kwh", "baseline_kwh", "sampled_kwh", "averaged_kwh"]
    _require_columns(path, frame, cols)
    totals = []
    for line, row in enumerate(frame.to_dict("records"), start=2):
        try:
            totals.append(ZoneTotals(**{c: row[c] for c in cols}))
        except (ValidationError, ValueError) as e:
            raise DataError(f"{path}: row {line}: {e}")
    return totals


def _pct(x: float) -> str:
    return f"{100.0 * x:.2f}"


def _kwh(x: float) -> str:
    return f"{x:.2E}"


def report_frame(report: EnergyReport) -> pd.DataFrame:
    """Report layout: two rows per zone, then the average row."""
    rows = []
    for z in report.zones:
        for method, kwh, acc, imp in (("sample", z.sampled_kwh, z.sampled_accuracy, z.sampled_improvement),
                                      ("average", z.averaged_kwh, z.averaged_accuracy, z.averaged_improvement)):
            rows.append({
                "zone": z.zone,
                "actual_kwh": _kwh(z.actual_kwh),
                "baseline_kwh": _kwh(z.baseline_kwh),
                "baseline_accuracy_pct": _pct(z.baseline_accuracy),
                "method": method,
                "method_kwh": _kwh(kwh),
                "method_accuracy_pct": _pct(acc),
                "improvement_pp": _pct(imp),
            })
    avg = report.average
    rows.append({
        "zone": "average",
        "actual_kwh": "",
        "baseline_kwh": "",
        "baseline_accuracy_pct": _pct(avg.baseline_accuracy),
        "method": "average",
        "method_kwh": "",
        "method_accuracy_pct": _pct(avg.method_accuracy),
        "improvement_pp": _pct(avg.improvement),
    })
    return pd.DataFrame(rows)


def write_report(directory: Path, report: EnergyReport, stem: str = "energy_report") -> List[Path]:
    directory = Path(directory)
    csv_path = write_csv(directory / f"{stem}.csv", report_frame(report), report.config_hash)
    json_path = directory / f"{stem}.json"
    json_path.write_text(json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True) + "\n",
                         encoding="utf-8")
    return [csv_path, json_path]
