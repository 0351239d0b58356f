"""Metrics JSONL and trajectory CSV."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import IO, Dict, Iterable, List, Sequence, Tuple

import numpy as np

from ..analysis import TrajectoryRecord

TRAJECTORY_COLUMNS = ["run_id", "skill", "agent", "step", "x", "y", "init_id", "seed"]


def _finite(obj) -> bool:
    if isinstance(obj, float):
        return math.isfinite(obj)
    if isinstance(obj, (list, tuple)):
        return all(_finite(v) for v in obj)
    if isinstance(obj, dict):
        return all(_finite(v) for v in obj.values())
    return True


def append_metrics(stream: IO[str], record: Dict) -> None:
    """Write one JSON object per line and flush, so a crash leaves a valid prefix."""
    if not _finite(record):
        raise ValueError(f"refusing to log non-finite metrics: {record}")
    stream.write(json.dumps(record, allow_nan=False) + "\n")
    stream.flush()


def read_metrics(path: str | Path) -> List[Dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_trajectories(path: str | Path, records: Iterable[TrajectoryRecord]) -> None:
    """Positions are written with ``repr`` so re-reading is bit-exact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for rec in records:
            n_agents, n_steps, _ = rec.positions.shape
            for a in range(n_agents):
                for t in range(n_steps):
                    x, y = rec.positions[a, t]
                    w.writerow([rec.run_id, rec.skill, a, t, repr(float(x)), repr(float(y)),
                                rec.init_id, rec.seed])


def read_trajectories(path: str | Path) -> List[TrajectoryRecord]:
    groups: Dict[Tuple[str, int, int, int], Dict[Tuple[int, int], Tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRAJECTORY_COLUMNS:
            raise ValueError(f"{path}: expected columns {TRAJECTORY_COLUMNS}, got {reader.fieldnames}")
        for line, row in enumerate(reader, start=2):
            try:
                key = (row["run_id"], int(row["skill"]), int(row["init_id"]), int(row["seed"]))
                groups.setdefault(key, {})[(int(row["agent"]), int(row["step"]))] = \
                    (float(row["x"]), float(row["y"]))
            except (TypeError, ValueError) as err:
                raise ValueError(f"{path}:{line}: malformed row ({err})") from None
    records = []
    for (run_id, skill, init_id, seed), pts in groups.items():
        n_agents = max(a for a, _ in pts) + 1
        n_steps = max(t for _, t in pts) + 1
        if len(pts) != n_agents * n_steps:
            raise ValueError(f"{path}: episode {run_id}/{skill}/{init_id} has missing rows")
        pos = np.empty((n_agents, n_steps, 2))
        for (a, t), xy in pts.items():
            pos[a, t] = xy
        records.append(TrajectoryRecord(run_id, skill, pos, init_id, seed))
    return records


def write_snapshot(path: str | Path, snapshot: Dict[str, Sequence[float]], run_id: str = "init",
                   seed: int = 0) -> None:
    """A start configuration in the trajectory CSV layout, entity labels in the agent column."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for label, (x, y) in snapshot.items():
            w.writerow([run_id, 0, label, 0, repr(float(x)), repr(float(y)), 0, seed])


def read_snapshot(path: str | Path) -> Dict[str, Tuple[float, float]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRAJECTORY_COLUMNS:
            raise ValueError(f"{path}: not a trajectory-schema CSV")
        return {row["agent"]: (float(row["x"]), float(row["y"])) for row in reader}
