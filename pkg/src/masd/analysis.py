"""Mutual information (exact and sampled) and trajectory statistics.

MI values are reported in bits.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np


class DegenerateTrajectory(ValueError):
    """An agent did not move, so its heading is undefined."""


@dataclass
class TrajectoryRecord:
    run_id: str
    skill: int
    positions: np.ndarray  # (N agents, T+1, 2)
    init_id: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 3 or self.positions.shape[2] != 2:
            raise ValueError("positions must have shape (agents, steps, 2)")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("positions must be finite")


# --------------------------------------------------------------------------
# mutual information


def mutual_information(joint: np.ndarray, tol: float = 1e-12) -> float:
    """I(Z; S) in bits for a table whose axis 0 is Z and remaining axes are S."""
    p = np.asarray(joint, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("probabilities must be non-negative")
    if abs(p.sum() - 1.0) > tol:
        raise ValueError(f"joint distribution sums to {p.sum()!r}, not 1")
    p = p.reshape(p.shape[0], -1)
    pz = p.sum(axis=1, keepdims=True)
    ps = p.sum(axis=0, keepdims=True)
    nz = p > 0
    ratio = p[nz] / (pz @ ps)[nz]
    return float(max(np.sum(p[nz] * np.log2(ratio)), 0.0))


def empirical_mi(z: np.ndarray, outcome: np.ndarray, n_z: int, n_outcome: int) -> float:
    """Plug-in MI estimate from paired integer samples."""
    counts = np.zeros((n_z, n_outcome))
    np.add.at(counts, (np.asarray(z, dtype=np.int64), np.asarray(outcome, dtype=np.int64)), 1.0)
    return mutual_information(counts / counts.sum(), tol=1e-9)


def xor_joint(prob_fn: Callable[[int, int, int, int], float], k: int = 2) -> np.ndarray:
    """Exact p(z, x'1, x'2) for the XOR game.

    ``prob_fn(i, own_bit, partner_bit, z)`` is agent i's probability of
    playing u=1. Skills are uniform over ``k`` and start bits uniform.
    """
    joint = np.zeros((k, 2, 2))
    for z in range(k):
        for x1 in (0, 1):
            for x2 in (0, 1):
                p1 = prob_fn(0, x1, x2, z)
                p2 = prob_fn(1, x2, x1, z)
                w = 1.0 / (4 * k)
                for u1, q1 in ((0, 1.0 - p1), (1, p1)):
                    for u2, q2 in ((0, 1.0 - p2), (1, p2)):
                        joint[z, x1 ^ u1, x2 ^ u2] += w * q1 * q2
    return joint


def exact_mi_xor(prob_fn: Callable[[int, int, int, int], float], k: int = 2) -> Tuple[float, List[float]]:
    """(I(X'; Z), [I(X'_1; Z), I(X'_2; Z)]) by full enumeration."""
    joint = xor_joint(prob_fn, k)
    joint = joint / joint.sum()
    g = mutual_information(joint)
    loc = [mutual_information(joint.sum(axis=2)), mutual_information(joint.sum(axis=1))]
    return g, loc


def sampled_mi_xor(prob_fn: Callable[[int, int, int, int], float], rng: np.random.Generator,
                   n: int = 100_000, k: int = 2) -> Tuple[float, List[float]]:
    """Monte-Carlo counterpart of :func:`exact_mi_xor`."""
    z = rng.integers(0, k, size=n)
    x = rng.integers(0, 2, size=(n, 2))
    table = np.array([[[[prob_fn(i, a, b, zz) for b in (0, 1)] for a in (0, 1)] for zz in range(k)]
                      for i in (0, 1)])
    p1 = table[0, z, x[:, 0], x[:, 1]]
    p2 = table[1, z, x[:, 1], x[:, 0]]
    u1 = (rng.random(n) < p1).astype(np.int64)
    u2 = (rng.random(n) < p2).astype(np.int64)
    n1 = x[:, 0] ^ u1
    n2 = x[:, 1] ^ u2
    g = empirical_mi(z, 2 * n1 + n2, k, 4)
    return g, [empirical_mi(z, n1, k, 2), empirical_mi(z, n2, k, 2)]


# --------------------------------------------------------------------------
# trajectory statistics


def headings(positions: np.ndarray) -> np.ndarray:
    """Net-displacement heading per agent in degrees; raises on a stationary agent."""
    disp = positions[:, -1, :] - positions[:, 0, :]
    if np.any(np.linalg.norm(disp, axis=1) < 1e-12):
        raise DegenerateTrajectory("an agent has zero net displacement")
    return np.degrees(np.arctan2(disp[:, 1], disp[:, 0]))


def trajectory_angles(positions: np.ndarray) -> Tuple[float, float]:
    """Two smallest pairwise angles between agents' net displacement directions."""
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape[0] < 2:
        raise ValueError("need at least two agents")
    h = headings(positions)
    diffs = []
    for a, b in combinations(range(len(h)), 2):
        d = abs(h[a] - h[b]) % 360.0
        diffs.append(min(d, 360.0 - d))
    diffs.sort()
    if len(diffs) == 1:
        return diffs[0], diffs[0]
    return diffs[0], diffs[1]


def path_lengths(positions: np.ndarray) -> np.ndarray:
    steps = np.diff(np.asarray(positions, dtype=np.float64), axis=1)
    return np.sum(np.linalg.norm(steps, axis=2), axis=1)


def trajectory_lengths(positions: np.ndarray) -> Tuple[float, float]:
    lengths = np.sort(path_lengths(positions))
    if len(lengths) == 1:
        return float(lengths[0]), float(lengths[0])
    return float(lengths[0]), float(lengths[1])


def trajectory_features(records: Sequence[TrajectoryRecord]) -> Tuple[np.ndarray, np.ndarray, int]:
    """Rows of (angle1, angle2, length1, length2) with skill labels; degenerate episodes dropped."""
    rows, labels = [], []
    degenerate = 0
    for rec in records:
        try:
            a1, a2 = trajectory_angles(rec.positions)
        except DegenerateTrajectory:
            degenerate += 1
            continue
        l1, l2 = trajectory_lengths(rec.positions)
        rows.append((a1, a2, l1, l2))
        labels.append(rec.skill)
    return np.array(rows).reshape(-1, 4), np.array(labels, dtype=np.int64), degenerate


def endpoint_std(records: Sequence[TrajectoryRecord], n_inits: int = 16, agent: int = 0) -> Dict[int, float]:
    """Per skill: spread of ``agent``'s final position across the initial conditions.

    Population std of x and of y, combined as the Euclidean norm.
    """
    by_skill: Dict[int, Dict[int, np.ndarray]] = {}
    for rec in records:
        by_skill.setdefault(rec.skill, {})[rec.init_id] = rec.positions[agent, -1, :]
    out = {}
    for skill, ends in sorted(by_skill.items()):
        if len(ends) != n_inits:
            raise ValueError(f"skill {skill} has {len(ends)} runs, expected {n_inits}")
        pts = np.array([ends[k] for k in sorted(ends)])
        out[skill] = float(np.linalg.norm(pts.std(axis=0)))
    return out


def skill_cluster_score(points: np.ndarray, labels: np.ndarray) -> float:
    """Within-skill over between-skill mean square (inverse one-way ANOVA F ratio).

    Columns are standardised first and summed over. 0 means every skill is a
    single point; around 1 means skills are indistinguishable.
    """
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    keep = np.zeros(len(labels), dtype=bool)
    for lab in np.unique(labels):
        idx = labels == lab
        if idx.sum() >= 2:
            keep |= idx
    points, labels = points[keep], labels[keep]
    groups = np.unique(labels)
    if len(groups) < 2:
        raise ValueError("need at least two skills with two or more points each")
    std = points.std(axis=0)
    cols = std > 1e-12
    x = (points[:, cols] - points[:, cols].mean(axis=0)) / std[cols]
    grand = x.mean(axis=0)
    ss_within = 0.0
    ss_between = 0.0
    for lab in groups:
        g = x[labels == lab]
        c = g.mean(axis=0)
        ss_within += float(np.sum((g - c) ** 2))
        ss_between += len(g) * float(np.sum((c - grand) ** 2))
    ms_within = ss_within / (len(x) - len(groups))
    ms_between = ss_between / (len(groups) - 1)
    if ms_between == 0.0:
        return float("inf") if ms_within > 0 else 0.0
    return ms_within / ms_between


def summarize(records: Sequence[TrajectoryRecord], n_inits: Optional[int] = None) -> Dict:
    pts, labels, degenerate = trajectory_features(records)
    out: Dict = {"episodes": len(records), "degenerate": degenerate,
                 "skills": sorted({int(r.skill) for r in records})}
    try:
        out["cluster_score"] = skill_cluster_score(pts, labels)
    except ValueError:
        out["cluster_score"] = None
    if n_inits:
        try:
            stds = endpoint_std(records, n_inits)
            out["endpoint_std"] = {str(k): v for k, v in stds.items()}
            out["mean_endpoint_std"] = float(np.mean(list(stds.values())))
        except ValueError:
            pass
    return out
