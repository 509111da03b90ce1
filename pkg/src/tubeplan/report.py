"""Batch-result emission: delimited tables, summary documents, boundary
extraction for plotting, and rendered figures.

Every figure is rendered headlessly (Agg backend) next to the delimited
file carrying the same data, so reports stay scriptable while remaining
inspectable at a glance.
"""

from __future__ import annotations

import csv
import json

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from . import contours as ct  # noqa: E402

RUN_FIELDS = ("run", "seed", "scene", "status", "goal_reached", "cycles",
              "linear_bound", "product_bound")


def write_runs_csv(path, rows):
    """One row per run; rows are dicts with RUN_FIELDS keys."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RUN_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in RUN_FIELDS})


def write_poses_csv(path, run, poses):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "step"] + [f"s{i}" for i in
                                           range(len(poses[0]))])
        for k, pose in enumerate(poses):
            writer.writerow([run, k, *[f"{v:.12g}" for v in pose]])


def aggregate(rows):
    """Batch summary recomputable from the per-run rows."""
    cycles = [r["cycles"] for r in rows]
    statuses = [r["status"] for r in rows]
    n = len(rows)
    return {
        "runs": n,
        "success_rate": sum(r["goal_reached"] for r in rows) / n if n else
        None,
        "max_cycles": max(cycles) if cycles else 0,
        "mean_cycles": float(np.mean(cycles)) if cycles else None,
        "statuses": {s: statuses.count(s) for s in sorted(set(statuses))},
    }


def cycle_histogram(cycles, bin_width=5):
    """(bin_lo, bin_hi, count) triples covering the observed cycles."""
    if not cycles:
        return []
    hi = (max(cycles) // bin_width + 1) * bin_width
    edges = np.arange(0, hi + bin_width, bin_width)
    counts, _ = np.histogram(cycles, bins=edges)
    return [(int(lo), int(lo + bin_width), int(c))
            for lo, c in zip(edges[:-1], counts)]


def write_histogram_csv(path, cycles, bin_width=5):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "count"])
        for row in cycle_histogram(cycles, bin_width):
            writer.writerow(row)


def write_summary(path, summary):
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# contour boundary extraction


def membership_field(cset, xs, ys, t):
    """Signed field F with F <= 0 exactly on the membership (safe) set.

    F = max over obstacles of max(P2, (1-delta)P1 - P2^2): continuous, so
    its zero level set is the contour boundary.
    """
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel(),
                           np.full(gx.size, float(t))])
    field = np.full(gx.size, -np.inf)
    for entry in cset.entries:
        p1 = entry.p1.evaluate(pts)
        p2 = entry.p2.evaluate(pts)
        field = np.maximum(field,
                           np.maximum(p2, (1.0 - cset.delta) * p1 - p2 * p2))
    return field.reshape(gx.shape)


def marching_squares(xs, ys, field):
    """Zero-crossing segments of a scalar field on a rectilinear grid.

    Returns an (n, 2, 2) array of line segments with linear interpolation
    along cell edges; ambiguous saddle cells are split arbitrarily but
    consistently.
    """
    segs = []

    def interp(pa, va, pb, vb):
        s = va / (va - vb)
        return (pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1]))

    for i in range(len(xs) - 1):
        for j in range(len(ys) - 1):
            corners = [(xs[i], ys[j]), (xs[i + 1], ys[j]),
                       (xs[i + 1], ys[j + 1]), (xs[i], ys[j + 1])]
            vals = [field[i, j], field[i + 1, j],
                    field[i + 1, j + 1], field[i, j + 1]]
            crossings = []
            for k in range(4):
                va, vb = vals[k], vals[(k + 1) % 4]
                if (va < 0.0) != (vb < 0.0):
                    crossings.append(interp(corners[k], va,
                                            corners[(k + 1) % 4], vb))
            if len(crossings) == 2:
                segs.append(crossings)
            elif len(crossings) == 4:  # saddle: pair along traversal order
                segs.append(crossings[:2])
                segs.append(crossings[2:])
    return np.array(segs) if segs else np.zeros((0, 2, 2))


def contour_boundary_segments(cset, window, resolution=200, t=0.0):
    (x0, x1), (y0, y1) = window
    xs = np.linspace(x0, x1, resolution)
    ys = np.linspace(y0, y1, resolution)
    field = membership_field(cset, xs, ys, t)
    return marching_squares(xs, ys, field)


def write_boundary_csv(path, segments):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x0", "y0", "x1", "y1"])
        for (a, b) in segments:
            writer.writerow([f"{a[0]:.9g}", f"{a[1]:.9g}",
                             f"{b[0]:.9g}", f"{b[1]:.9g}"])


def write_ellipse_csv(path, cset, t=0.0):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cx", "cy", "semi_x", "semi_y"])
        for entry in cset.entries:
            (cx, cy), ax, ay = ct.outer_ellipse_params(entry, cset.delta, t)
            writer.writerow([f"{cx:.9g}", f"{cy:.9g}",
                             f"{ax:.9g}", f"{ay:.9g}"])


# ---------------------------------------------------------------------------
# figures


def render_trajectories(path, cset, trajectories, waypoints=None, goal=None,
                        goal_radius=None, window=None, t=0.0):
    """Trajectory overview: contour boundaries, reference path, goal disc,
    and the executed position traces."""
    fig, axis = plt.subplots(figsize=(7, 5))
    if window is None:
        pts = np.concatenate([np.asarray(tr)[:, :2] for tr in trajectories]) \
            if trajectories else np.zeros((1, 2))
        lo = pts.min(axis=0) - 1.0
        hi = pts.max(axis=0) + 1.0
        window = ((lo[0], hi[0]), (lo[1], hi[1]))
    if cset.entries:
        segs = contour_boundary_segments(cset, window, t=t)
        for (a, b) in segs:
            axis.plot([a[0], b[0]], [a[1], b[1]], color="red", lw=0.8)
    if waypoints is not None:
        wp = np.asarray(waypoints)
        axis.plot(wp[:, 0], wp[:, 1], "b--", lw=1.2, label="reference path")
    if goal is not None and goal_radius:
        axis.add_patch(plt.Circle(goal, goal_radius, color="green",
                                  fill=False, lw=1.5, label="goal"))
    for tr in trajectories:
        tr = np.asarray(tr)
        axis.plot(tr[:, 0], tr[:, 1], lw=1.0)
    axis.set_xlabel("x")
    axis.set_ylabel("y")
    axis.set_aspect("equal", adjustable="datalim")
    axis.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_histogram(path, cycles, bin_width=5):
    fig, axis = plt.subplots(figsize=(6, 4))
    bins = cycle_histogram(cycles, bin_width)
    if bins:
        axis.bar([lo for lo, _, _ in bins], [c for _, _, c in bins],
                 width=bin_width * 0.9, align="edge")
    axis.set_xlabel("planning cycles to reach the goal")
    axis.set_ylabel("runs")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
