"""Run orchestration and persistence.

A run lives in ``<runs_dir>/<run_id>/``:

* ``config.ini`` - the full configuration used
* ``metrics.csv`` - one row per episode, flushed as episodes finish
* ``trajectories.jsonl`` - one step frame per line
* ``params.json`` - final actor parameters per agent
* ``summary.json`` - final-window aggregates and run status

``eval`` adds ``eval_metrics.csv``, ``eval_trajectories.jsonl`` and
``eval_summary.json`` to an existing run directory.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import re
from dataclasses import replace
from pathlib import Path
from typing import Sequence
from xml.etree import ElementTree as ET

import numpy as np

from . import training
from .config import ConfigBundle, PolicyKind, dump_config, load_bundle
from .errors import InvalidArgumentError

log = logging.getLogger(__name__)

DEFAULT_RUNS_DIR = Path("runs")
METRICS = ("reward", "support_rate", "qos")
_METRIC_COLUMN = {"reward": "total_reward", "support_rate": "support_rate", "qos": "qos"}
RANDOM_TEMPERATURE = 1e9
_RUN_ID = re.compile(r"^[A-Za-z0-9._-]+$")


def run_dir(run_id: str, runs_dir: str | Path = DEFAULT_RUNS_DIR) -> Path:
    if not _RUN_ID.match(run_id):
        raise InvalidArgumentError(f"run id {run_id!r} may only contain letters, digits, '.', '_' and '-'")
    return Path(runs_dir) / run_id


def random_baseline_bundle(bundle: ConfigBundle) -> ConfigBundle:
    """Frozen policy sampled at a huge temperature: uniform random actions."""
    train = replace(
        bundle.train,
        learning_rate=0.0,
        temperature_initial=RANDOM_TEMPERATURE,
        temperature_final=RANDOM_TEMPERATURE,
    )
    return replace(bundle, train=train)


class _MetricsWriter:
    def __init__(self, path: Path, columns: list[str]):
        self.columns = columns
        self._fh = path.open("w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(columns)
        self._fh.flush()

    def __call__(self, row: dict) -> None:
        self._writer.writerow([row[c] for c in self.columns])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def _write_jsonl(path: Path, records: Sequence[dict]) -> None:
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_metrics(path: str | Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = []
        for values in reader:
            row = {}
            for key, v in zip(header, values):
                row[key] = int(v) if key == "episode" else float(v)
            rows.append(row)
    return rows


def read_jsonl(path: str | Path) -> list[dict]:
    with Path(path).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]


def run(
    bundle: ConfigBundle,
    policy_kind: PolicyKind,
    seed: int,
    run_id: str,
    runs_dir: str | Path = DEFAULT_RUNS_DIR,
) -> training.RunArtifacts:
    out = run_dir(run_id, runs_dir)
    out.mkdir(parents=True, exist_ok=True)
    policy_config = bundle.policy_config(policy_kind)
    policy = training.make_policy(policy_config)
    (out / "config.ini").write_text(dump_config(bundle))

    writer = _MetricsWriter(out / "metrics.csv", training.metric_columns(bundle.env.num_drones))
    log.info("run %s: %s policy, %d parameters per agent, seed %d", run_id, policy_kind, policy.param_count, seed)
    try:
        arts = training.train_run(
            bundle.env, policy_config, bundle.train, seed, on_episode=writer, window=bundle.summary_window
        )
    finally:
        writer.close()

    arts.run_id = run_id
    arts.config = training.config_snapshot(bundle.env, policy_config, bundle.train)
    _write_jsonl(out / "trajectories.jsonl", arts.trajectories)
    (out / "params.json").write_text(json.dumps([p.tolist() for p in arts.params]))

    summary = {
        "run_id": run_id,
        "status": "failed" if arts.failure else "completed",
        "policy": policy_kind,
        "seed": seed,
        "param_count": policy.param_count,
        **training.summarize(arts.metrics, bundle.summary_window),
    }
    if arts.failure:
        summary["failure"] = arts.failure
    arts.summary = summary
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return arts


def load_run(run_id: str, runs_dir: str | Path = DEFAULT_RUNS_DIR) -> dict:
    path = run_dir(run_id, runs_dir)
    if not (path / "summary.json").exists():
        raise InvalidArgumentError(f"no completed run at {path}")
    summary = json.loads((path / "summary.json").read_text())
    return {
        "path": path,
        "summary": summary,
        "bundle": load_bundle(path / "config.ini"),
        "metrics": read_metrics(path / "metrics.csv"),
    }


def malfunction_response(frames: Sequence[dict]) -> dict | None:
    """Distance of surviving drones to the area a failed drone was serving.

    The target is the centroid of the users the failed drone served in the
    last frame before it failed (its own position if it served nobody).
    Returns None when the episode has no malfunction.
    """
    for i in range(1, len(frames)):
        newly = [
            m
            for m, (now, before) in enumerate(zip(frames[i]["malfunctioned"], frames[i - 1]["malfunctioned"]))
            if now and not before
        ]
        if newly:
            break
    else:
        return None

    before = frames[i - 1]
    users = np.array(before["user_positions"])
    served = np.isin(np.array(before["serving_drone"]), newly)
    if served.any():
        target = users[served].mean(axis=0)
    else:
        target = np.array(before["drone_positions"])[newly].mean(axis=0)

    def mean_distance(fr: dict) -> float | None:
        alive = [m for m, dead in enumerate(fr["malfunctioned"]) if not dead]
        if not alive:
            return None
        pos = np.array(fr["drone_positions"])[alive]
        return float(np.linalg.norm(pos - target, axis=1).mean())

    return {
        "failed_drones": newly,
        "t_malfunction": frames[i]["t"],
        "t_end": frames[-1]["t"],
        "target": target.tolist(),
        "distance_at_malfunction": mean_distance(frames[i]),
        "distance_at_end": mean_distance(frames[-1]),
    }


def evaluate_run(run_id: str, episodes: int, runs_dir: str | Path = DEFAULT_RUNS_DIR) -> dict:
    """Greedy evaluation of a trained run with the malfunction scenario enabled."""
    if episodes < 1:
        raise InvalidArgumentError("eval needs at least one episode")
    info = load_run(run_id, runs_dir)
    summary, bundle = info["summary"], info["bundle"]
    if summary["status"] != "completed":
        raise InvalidArgumentError(f"run {run_id} did not complete")
    path = info["path"]
    params = [np.array(p) for p in json.loads((path / "params.json").read_text())]
    env_config = bundle.env.with_eval_malfunctions()
    policy_config = bundle.policy_config(summary["policy"])
    rows, frames = training.evaluate(env_config, policy_config, params, episodes, summary["seed"])

    writer = _MetricsWriter(path / "eval_metrics.csv", training.metric_columns(env_config.num_drones))
    for row in rows:
        writer(row)
    writer.close()
    _write_jsonl(path / "eval_trajectories.jsonl", frames)

    responses = []
    for ep in range(episodes):
        r = malfunction_response([f for f in frames if f["episode"] == ep])
        if r is not None:
            responses.append({"episode": ep, **r})
    result = {
        "run_id": run_id,
        "episodes": episodes,
        "mean_total_reward": float(np.mean([r["total_reward"] for r in rows])),
        "mean_support_rate": float(np.mean([r["support_rate"] for r in rows])),
        "mean_qos": float(np.mean([r["qos"] for r in rows])),
        "malfunction_response": responses,
    }
    valid = [r for r in responses if r["distance_at_end"] is not None]
    if valid:
        start = float(np.mean([r["distance_at_malfunction"] for r in valid]))
        end = float(np.mean([r["distance_at_end"] for r in valid]))
        result["mean_distance_at_malfunction"] = start
        result["mean_distance_at_end"] = end
        result["moved_toward_failed_area"] = end < start
    (path / "eval_summary.json").write_text(json.dumps(result, indent=2) + "\n")
    return result


def compare(run_ids: Sequence[str], runs_dir: str | Path = DEFAULT_RUNS_DIR) -> dict:
    if len(run_ids) < 2:
        raise InvalidArgumentError("compare needs at least two runs")
    runs = [load_run(r, runs_dir) for r in run_ids]
    counts = {r["summary"]["episodes"] for r in runs}
    if len(counts) != 1:
        raise InvalidArgumentError(
            "runs have different episode counts: "
            + ", ".join(f"{rid}={r['summary']['episodes']}" for rid, r in zip(run_ids, runs))
        )

    columns = []
    for rid, r in zip(run_ids, runs):
        s = training.summarize(r["metrics"], r["bundle"].summary_window)
        columns.append(
            {
                "run_id": rid,
                "policy": r["summary"]["policy"],
                "param_count": r["summary"]["param_count"],
                **{k: v for k, v in s.items() if k.startswith("final_")},
            }
        )
    report: dict = {"runs": columns, "by_policy": {}}
    for kind in ("quantum", "classical"):
        group = [c for c in columns if c["policy"] == kind]
        if group:
            report["by_policy"][kind] = {
                "runs": len(group),
                "param_count": group[0]["param_count"],
                "final_total_reward_mean": float(np.mean([c["final_total_reward_mean"] for c in group])),
                "final_total_reward_std": float(np.mean([c["final_total_reward_std"] for c in group])),
            }
    by = report["by_policy"]
    if "quantum" in by and "classical" in by:
        report["param_ratio"] = by["quantum"]["param_count"] / by["classical"]["param_count"]
    return report


def format_report(report: dict) -> str:
    cols = report["runs"]
    rows = [("run", [c["run_id"] for c in cols]), ("policy", [c["policy"] for c in cols])]
    rows.append(("params", [str(c["param_count"]) for c in cols]))
    for key, label in (("total_reward", "reward"), ("support_rate", "support"), ("qos", "qos")):
        rows.append(
            (label, [f"{c[f'final_{key}_mean']:.4f} ± {c[f'final_{key}_std']:.4f}" for c in cols])
        )
    width = max(len(v) for _, vals in rows for v in vals)
    lines = [f"{label:<8}" + "".join(f"  {v:>{width}}" for v in vals) for label, vals in rows]
    for kind, g in report["by_policy"].items():
        lines.append(
            f"{kind}: {g['runs']} run(s), {g['param_count']} params, "
            f"final reward {g['final_total_reward_mean']:.4f}, mean final-window std {g['final_total_reward_std']:.4f}"
        )
    if "param_ratio" in report:
        lines.append(f"param ratio quantum/classical: {report['param_ratio']:.4f}")
    return "\n".join(lines)


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    w = max(1, min(window, v.size))
    if v.size == 0:
        return v
    return np.convolve(v, np.ones(w) / w, mode="valid")


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def plot(
    run_ids: Sequence[str],
    metric: str,
    out_path: str | Path,
    window: int = 10,
    runs_dir: str | Path = DEFAULT_RUNS_DIR,
    width: int = 720,
    height: int = 440,
) -> Path:
    """Write an SVG line chart of ``metric`` per episode, one polyline per run."""
    if metric not in METRICS:
        raise InvalidArgumentError(f"unknown metric {metric!r}; choose from {', '.join(METRICS)}")
    if window < 1:
        raise InvalidArgumentError("smoothing window must be >= 1")
    column = _METRIC_COLUMN[metric]
    series = []
    for rid in run_ids:
        raw = [row[column] for row in load_run(rid, runs_dir)["metrics"]]
        smooth = moving_average(raw, window)
        w = len(raw) - len(smooth) + 1
        # x of each smoothed point is the last episode in its window
        series.append((rid, np.arange(w - 1, len(raw)), smooth))

    left, right, top, bottom = 70, 160, 30, 50
    pw, ph = width - left - right, height - top - bottom
    xs_all = np.concatenate([s[1] for s in series]) if series else np.zeros(1)
    ys_all = np.concatenate([s[2] for s in series]) if series else np.zeros(1)
    x0, x1 = float(xs_all.min(initial=0)), float(xs_all.max(initial=1))
    y0, y1 = float(ys_all.min(initial=0)), float(ys_all.max(initial=1))
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        pad = abs(y0) * 0.1 or 1.0
        y0, y1 = y0 - pad, y1 + pad

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + (y1 - y) / (y1 - y0) * ph

    svg = ET.Element(
        "svg",
        xmlns="http://www.w3.org/2000/svg",
        width=str(width),
        height=str(height),
        viewBox=f"0 0 {width} {height}",
    )
    ET.SubElement(svg, "rect", x="0", y="0", width=str(width), height=str(height), fill="white")
    axes = ET.SubElement(svg, "g", stroke="black", fill="none")
    ET.SubElement(axes, "line", x1=str(left), y1=str(top + ph), x2=str(left + pw), y2=str(top + ph))
    ET.SubElement(axes, "line", x1=str(left), y1=str(top), x2=str(left), y2=str(top + ph))
    labels = ET.SubElement(svg, "g", attrib={"font-family": "sans-serif", "font-size": "11"})
    for frac in (0.0, 0.5, 1.0):
        yv = y0 + frac * (y1 - y0)
        t = ET.SubElement(labels, "text", x=str(left - 6), y=f"{py(yv) + 4:.2f}", attrib={"text-anchor": "end"})
        t.text = f"{yv:.3g}"
        xv = x0 + frac * (x1 - x0)
        t = ET.SubElement(labels, "text", x=f"{px(xv):.2f}", y=str(top + ph + 16), attrib={"text-anchor": "middle"})
        t.text = f"{xv:.0f}"
    t = ET.SubElement(labels, "text", x=str(left + pw / 2), y=str(height - 10), attrib={"text-anchor": "middle"})
    t.text = "episode"
    t = ET.SubElement(labels, "text", x=str(left), y=str(top - 10))
    t.text = f"{metric} (moving average, window {window})"

    for i, (rid, xs, ys) in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        points = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
        line = ET.SubElement(
            svg, "polyline", points=points, fill="none", stroke=color, attrib={"stroke-width": "1.5"}
        )
        line.set("data-run-id", rid)
        ly = top + 14 + 18 * i
        ET.SubElement(svg, "line", x1=str(left + pw + 12), y1=str(ly - 4), x2=str(left + pw + 32), y2=str(ly - 4), stroke=color)
        t = ET.SubElement(labels, "text", x=str(left + pw + 38), y=str(ly))
        t.text = rid

    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    ET.ElementTree(svg).write(out, encoding="utf-8", xml_declaration=True)
    return out


def final_window_ratio(trained: dict, baseline: dict) -> float:
    a, b = trained["final_total_reward_mean"], baseline["final_total_reward_mean"]
    return a / b if b else math.inf
