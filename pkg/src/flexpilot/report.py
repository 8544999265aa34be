"""Result files: the DSE table, Pareto plots and the recommendation."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .costmodel import NO_VEHICLE_CLASS  # noqa: E402
from .dse import OBJECTIVE_PAIRS, DseRecord, DseReport, ParetoPoint  # noqa: E402

RESULTS_FILENAME = "results.csv"
RECOMMENDATION_FILENAME = "recommendation.json"

RESULTS_COLUMNS = (
    "config_id",
    "pes",
    "lanes",
    "vector_width",
    "precision_bits",
    "weight_buffer_kb",
    "latency_us",
    "power_w",
    "area_mm2",
    "energy_uj",
    "pareto_lat_power",
    "pareto_lat_area",
    "knee_lat_power",
    "knee_lat_area",
    "vehicle_class",
    "feasible",
    "reject_reason",
)

# Output file and axis labels per objective pair
PLOT_FILES = {
    "lat_power": ("pareto_latency_power.svg", "power (W)"),
    "lat_area": ("pareto_latency_area.svg", "area (mm²)"),
}


def write_json(path: Path, data: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _flag(value: bool) -> str:
    return "1" if value else "0"


def result_row(record: DseRecord) -> list[str]:
    config = record.config
    row = [
        record.config_id,
        str(config.num_pes),
        str(config.mac_lanes),
        str(config.vector_width),
        str(config.precision_bits),
        str(config.weight_buffer_kb),
    ]
    m = record.metrics
    if m is None:
        row += ["", "", "", ""]
    else:
        row += [f"{m.latency_us:.4f}", f"{m.power_w:.6f}", f"{m.area_mm2:.4f}", f"{m.energy_uj:.6f}"]
    row += [
        _flag(record.pareto.get("lat_power", False)),
        _flag(record.pareto.get("lat_area", False)),
        _flag(record.knee.get("lat_power", False)),
        _flag(record.knee.get("lat_area", False)),
        record.vehicle_class,
        _flag(record.feasible),
        record.reject_reason,
    ]
    return row


def write_results_csv(report: DseReport, path: Path) -> Path:
    """One row per candidate in config_id order; byte-stable for equal inputs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RESULTS_COLUMNS)
        for record in sorted(report.records, key=lambda r: r.config_id):
            writer.writerow(result_row(record))
    return path


def read_results_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != RESULTS_COLUMNS:
            raise ValueError(f"{path}: not a results table (columns {reader.fieldnames})")
        return list(reader)


def points_from_rows(rows: Sequence[dict[str, str]], pair: str) -> list[ParetoPoint]:
    """Feasible candidates of a results table seen from one objective pair."""
    _, x_key, y_key = next(p for p in OBJECTIVE_PAIRS if p[0] == pair)
    return [
        ParetoPoint(
            row["config_id"],
            float(row[x_key]),
            float(row[y_key]),
            row[f"pareto_{pair}"] != "1",
            row[f"knee_{pair}"] == "1",
        )
        for row in rows
        if row["feasible"] == "1"
    ]


def plot_pareto(points: Sequence[ParetoPoint], pair: str, path: Path, title: str | None = None) -> Path:
    """Scatter of all feasible candidates, the front as a step line, the knee starred."""
    filename, y_label = PLOT_FILES[pair]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    plt.rcParams["svg.hashsalt"] = "flexpilot"

    fig, ax = plt.subplots(figsize=(7, 5))
    dominated = [p for p in points if p.dominated]
    front = sorted((p for p in points if not p.dominated), key=lambda p: (p.x, p.y))
    ax.scatter([p.x for p in dominated], [p.y for p in dominated], color="0.65", s=18, label="dominated")
    ax.plot([p.x for p in front], [p.y for p in front], "o-", color="tab:blue", ms=5, label="Pareto front")
    for p in points:
        if p.knee:
            ax.scatter([p.x], [p.y], marker="*", s=220, color="tab:red", zorder=3, label=f"knee {p.config_id}")
    ax.set_xlabel("latency (µs)")
    ax.set_ylabel(y_label)
    ax.set_title(title or filename.removesuffix(".svg").replace("_", " "))
    ax.grid(True, alpha=0.3)
    ax.legend(loc="upper right", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def write_plots(report: DseReport, out_dir: Path) -> list[Path]:
    return [plot_pareto(report.points(pair), pair, Path(out_dir) / PLOT_FILES[pair][0]) for pair, _, _ in OBJECTIVE_PAIRS]


def recommendation_dict(report: DseReport, chosen: DseRecord, objective: str, vehicle: str | None) -> dict:
    m = chosen.metrics
    return {
        "objective": objective,
        "target_vehicle_class": vehicle,
        "knees": dict(sorted(report.knees.items())),
        "selected": {
            "config_id": chosen.config_id,
            "config": chosen.config.to_dict(),
            "latency_us": m.latency_us,
            "power_w": m.power_w,
            "area_mm2": m.area_mm2,
            "energy_uj": m.energy_uj,
            "cycles": m.cycles,
            "vehicle_class": m.vehicle_class,
            "pareto": dict(sorted(chosen.pareto.items())),
        },
        "coefficients_sha256": report.coefficients_digest,
    }


def summary_lines(rows: Sequence[dict[str, str]]) -> list[str]:
    """Human-readable table of the Pareto members of a results table."""
    lines = [f"{'config':<14} {'latency us':>11} {'power W':>9} {'area mm2':>9}  class  front"]
    for row in rows:
        if row["feasible"] != "1":
            continue
        marks = [pair for pair, _, _ in OBJECTIVE_PAIRS if row[f"pareto_{pair}"] == "1"]
        if not marks:
            continue
        knees = [pair for pair, _, _ in OBJECTIVE_PAIRS if row[f"knee_{pair}"] == "1"]
        tag = ",".join(marks) + (f" knee:{','.join(knees)}" if knees else "")
        lines.append(
            f"{row['config_id']:<14} {float(row['latency_us']):>11.2f} {float(row['power_w']):>9.4f} "
            f"{float(row['area_mm2']):>9.2f}  {row['vehicle_class'] or NO_VEHICLE_CLASS:<5}  {tag}"
        )
    return lines
