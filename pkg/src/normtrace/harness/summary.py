"""Aggregate run records into per-cell tables and chart data."""
from __future__ import annotations

import json
import statistics
from pathlib import Path

SUMMARY_COLUMNS = (
    "num_agents",
    "penalty_factor",
    "partial_obs",
    "alpha_dist",
    "byzantine_fraction",
    "runs",
    "avg_reward_mean",
    "avg_reward_sd",
    "final_gini_mean",
    "final_gini_sd",
    "compromise_mean",
    "compromise_sd",
)


def load_records(path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def _sd(values: list[float]) -> float:
    return 0.0 if len(values) < 2 else statistics.stdev(values)


def _cell_key(record: dict):
    w = record["config"]["world"]
    return (
        w["num_agents"],
        w["penalty_factor"],
        w["partial_obs"],
        w["alpha_dist"],
        w["byzantine_fraction"],
    )


def summarize(records: list[dict]) -> list[dict]:
    """Per-cell means and standard deviations across seeds, in sorted cell
    order (population, penalty, observability, share exponent)."""
    cells: dict[tuple, list[dict]] = {}
    for rec in records:
        cells.setdefault(_cell_key(rec), []).append(rec)
    rows = []
    for key in sorted(cells):
        group = cells[key]
        rewards = [r["metrics"]["avg_reward"] for r in group]
        ginis = [r["metrics"]["final_gini"] for r in group]
        comps = [r["metrics"]["compromise_ratio"] for r in group]
        n_agents, penalty, obs, alpha, byz = key
        rows.append(
            {
                "num_agents": n_agents,
                "penalty_factor": penalty,
                "partial_obs": obs,
                "alpha_dist": alpha,
                "byzantine_fraction": byz,
                "runs": len(group),
                "avg_reward_mean": statistics.fmean(rewards),
                "avg_reward_sd": _sd(rewards),
                "final_gini_mean": statistics.fmean(ginis),
                "final_gini_sd": _sd(ginis),
                "compromise_mean": statistics.fmean(comps),
                "compromise_sd": _sd(comps),
            }
        )
    return rows


def gini_chart_rows(records: list[dict]) -> list[dict]:
    """Final inequality grouped by penalty level and observability."""
    cells: dict[tuple, list[float]] = {}
    for rec in records:
        w = rec["config"]["world"]
        key = (w["penalty_factor"], w["partial_obs"])
        cells.setdefault(key, []).append(rec["metrics"]["final_gini"])
    rows = []
    for (penalty, obs) in sorted(cells):
        vals = cells[(penalty, obs)]
        rows.append(
            {
                "penalty_factor": penalty,
                "partial_obs": obs,
                "final_gini_mean": statistics.fmean(vals),
                "final_gini_sd": _sd(vals),
            }
        )
    return rows


def write_summary(records: list[dict], out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table_path = out_dir / "summary.tsv"
    rows = summarize(records)
    with open(table_path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(SUMMARY_COLUMNS) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(row[c]) for c in SUMMARY_COLUMNS) + "\n")
    chart_path = out_dir / "gini_cells.csv"
    chart_rows = gini_chart_rows(records)
    with open(chart_path, "w", encoding="utf-8") as fh:
        fh.write("penalty_factor,partial_obs,final_gini_mean,final_gini_sd\n")
        for row in chart_rows:
            fh.write(
                f"{row['penalty_factor']},{int(row['partial_obs'])},"
                f"{row['final_gini_mean']:.6g},{row['final_gini_sd']:.6g}\n"
            )
    return table_path, chart_path


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def summarize_edges(path) -> dict:
    """Digest of an edge dump: line count and F-statistic spread."""
    count = 0
    f_min = float("inf")
    f_max = float("-inf")
    f_sum = 0.0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            _src, _tgt, f_stat, _step = line.split(",")
            f = float(f_stat)
            count += 1
            f_sum += f
            f_min = min(f_min, f)
            f_max = max(f_max, f)
    return {
        "edges": count,
        "f_mean": f_sum / count if count else 0.0,
        "f_min": f_min if count else 0.0,
        "f_max": f_max if count else 0.0,
    }
