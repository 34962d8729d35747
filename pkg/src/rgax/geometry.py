"""Pitch geometry for shot features.

Coordinates are planar with the goal line vertical through
``goal_center``; the posts sit at ``goal_center[1] +/- goal_width / 2``.
Units are whatever the input uses (metres for the 7.32 default).
"""

import numpy as np

GOAL_WIDTH = 7.32
GOAL_HEIGHT = 2.44


def _posts(goal_center, goal_width):
    gx, gy = goal_center
    return (gx, gy - goal_width / 2.0), (gx, gy + goal_width / 2.0)


def subtended_angle(x, y, goal_width=GOAL_WIDTH, goal_center=(0.0, 0.0)):
    """Angle (radians, in [0, pi]) between the lines to the two posts.

    A point on the goal line between the posts gives pi; on the goal line
    outside the frame it gives 0.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    (p1x, p1y), (p2x, p2y) = _posts(goal_center, goal_width)
    ax, ay = p1x - x, p1y - y
    bx, by = p2x - x, p2y - y
    cross = np.abs(ax * by - ay * bx)
    dot = ax * bx + ay * by
    return np.arctan2(cross, dot)


def engineer_geometry(x, y, goal_width=GOAL_WIDTH, goal_center=(0.0, 0.0)):
    """Distance to the goal centre and the subtended post angle."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dist = np.hypot(x - goal_center[0], y - goal_center[1])
    return dist, subtended_angle(x, y, goal_width, goal_center)


def angle_to_goal_center(x, y, goal_center=(0.0, 0.0)):
    """Angle in degrees between the goal-line normal and the line to the goal
    centre; 0 for a central position."""
    dx = np.abs(np.asarray(x, dtype=float) - goal_center[0])
    dy = np.abs(np.asarray(y, dtype=float) - goal_center[1])
    return np.degrees(np.arctan2(dy, dx))


def in_cone(px, py, sx, sy, goal_width=GOAL_WIDTH, goal_center=(0.0, 0.0)):
    """Whether points (px, py) lie inside the triangle shot -> post -> post."""
    (ax, ay), (bx, by) = _posts(goal_center, goal_width)
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)

    def side(x1, y1, x2, y2, x3, y3):
        return (x1 - x3) * (y2 - y3) - (x2 - x3) * (y1 - y3)

    d1 = side(px, py, sx, sy, ax, ay)
    d2 = side(px, py, ax, ay, bx, by)
    d3 = side(px, py, bx, by, sx, sy)
    neg = (d1 < 0) | (d2 < 0) | (d3 < 0)
    pos = (d1 > 0) | (d2 > 0) | (d3 > 0)
    return ~(neg & pos)


def shot_features(shot, keeper=None, defenders=(), attackers=(),
                  goal_width=GOAL_WIDTH, goal_center=(0.0, 0.0)):
    """Numeric shot features from one freeze frame.

    ``shot`` and ``keeper`` are (x, y) pairs; ``defenders`` and ``attackers``
    are sequences of (x, y) excluding the keeper and the shooter. Features
    that need an absent player are NaN (imputed downstream).
    """
    sx, sy = map(float, shot)
    gx, gy = goal_center
    dist, ang = engineer_geometry(sx, sy, goal_width, goal_center)
    out = {"DistToGoal": float(dist), "angle": float(ang),
           "AngleToGoal": float(angle_to_goal_center(sx, sy, goal_center))}

    if keeper is not None:
        kx, ky = map(float, keeper)
        out["DistToKeeper"] = float(np.hypot(kx - gx, ky - gy))
        out["DistSGK"] = float(np.hypot(kx - sx, ky - sy))
        out["AngleToKeeper"] = float(angle_to_goal_center(kx, ky, goal_center))
        out["AngleDeviation"] = abs(out["AngleToGoal"] - out["AngleToKeeper"])
    else:
        for k in ("DistToKeeper", "DistSGK", "AngleToKeeper", "AngleDeviation"):
            out[k] = np.nan

    shot_depth = abs(sx - gx)
    d = np.asarray(defenders, dtype=float).reshape(-1, 2)
    a = np.asarray(attackers, dtype=float).reshape(-1, 2)
    dd = np.hypot(d[:, 0] - sx, d[:, 1] - sy)
    ahead = np.abs(d[:, 0] - gx) < shot_depth
    cone = in_cone(d[:, 0], d[:, 1], sx, sy, goal_width, goal_center) if len(d) else np.zeros(0, bool)

    def kth(v, k):
        v = np.sort(v)
        return float(v[k]) if len(v) > k else np.nan

    out["distance.ToD1"] = kth(dd[ahead], 0)
    out["distance.ToD2"] = kth(dd[ahead], 1)
    out["distance.ToD1.360"] = kth(dd, 0)
    out["distance.ToD2.360"] = kth(dd, 1)
    out["AttackersBehindBall"] = int(np.sum(np.abs(a[:, 0] - gx) > shot_depth))
    out["DefendersBehindBall"] = int(np.sum(np.abs(d[:, 0] - gx) > shot_depth))
    out["DefendersInCone"] = int(np.sum(cone))
    with np.errstate(divide="ignore"):
        inv = 1.0 / np.maximum(dd, 1e-9)
    out["density"] = float(np.sum(inv))
    out["density.incone"] = float(np.sum(inv[cone]))
    return out


def on_target(end_y, end_z, goal_width=GOAL_WIDTH, goal_height=GOAL_HEIGHT,
              goal_center_y=0.0):
    """A shot is on target when its end location lies within the frame."""
    end_y = np.asarray(end_y, dtype=float)
    end_z = np.asarray(end_z, dtype=float)
    return (np.abs(end_y - goal_center_y) <= goal_width / 2.0) & (end_z >= 0) & (end_z <= goal_height)


def end_location_deltas(end_y, end_z, goal_height=GOAL_HEIGHT, goal_center_y=0.0):
    """Horizontal and vertical offsets of the end location from the goal centre."""
    return (np.asarray(end_y, dtype=float) - goal_center_y,
            np.asarray(end_z, dtype=float) - goal_height / 2.0)
