"""SVG figures for run directories.

Arrow scales are fixed (not autoscaled per frame) so snapshots from one run,
or from two runs, can be compared by eye.
"""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Circle, Rectangle  # noqa: E402
import numpy as np  # noqa: E402

from .moments import moment_indices  # noqa: E402

__all__ = ["snapshot_figure", "write_snapshots", "plot_errors", "SVG_METADATA"]

# no timestamp and a fixed hash salt keep the SVG bytes reproducible
SVG_METADATA = {"Date": None, "Creator": "crowdshape"}
VEL_SCALE = 1.0  # length units drawn per unit speed
CTRL_SCALE = 2.0  # length units drawn per unit acceleration


def _save(fig, path):
    with matplotlib.rc_context({"svg.hashsalt": "crowdshape", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)


def snapshot_figure(frame, obstacles=(), extent=None):
    s = frame.state
    ref = frame.reference
    fig, ax = plt.subplots(figsize=(6, 6))
    half = ref.side / 2
    ax.add_patch(Rectangle(ref.center - half, ref.side, ref.side, fill=False, ls="--", ec="tab:green", label="desired"))
    for ob in obstacles:
        ax.add_patch(Circle(ob.center, ob.radius, color="0.6", alpha=0.5))
        ax.add_patch(Circle(ob.center, ob.radius + ob.delta, fill=False, ec="0.6", ls=":"))
    ax.scatter(s.follower_pos[:, 0], s.follower_pos[:, 1], s=8, c="tab:blue", label="followers")
    ax.scatter(s.leader_pos[:, 0], s.leader_pos[:, 1], s=40, marker="^", c="tab:red", label="leaders")
    lp, lv = s.leader_pos, s.leader_vel
    ax.quiver(lp[:, 0], lp[:, 1], lv[:, 0], lv[:, 1], color="tab:red", angles="xy", scale_units="xy", scale=1 / VEL_SCALE, width=0.004)
    if frame.controls is not None:
        u = np.asarray(frame.controls)
        ax.quiver(lp[:, 0], lp[:, 1], u[:, 0], u[:, 1], color="k", angles="xy", scale_units="xy", scale=1 / CTRL_SCALE, width=0.003)
    com = s.follower_pos.mean(axis=0)
    ax.plot(*com, "x", c="tab:blue", ms=10)
    if extent is not None:
        ax.set_xlim(extent[0])
        ax.set_ylim(extent[1])
    ax.set_aspect("equal")
    ax.set_title(f"t = {frame.time:g}")
    ax.legend(loc="upper left", fontsize=7)
    return fig


def _extent(record, obstacles):
    pts = [np.vstack([f.state.follower_pos, f.state.leader_pos]) for f in record.frames]
    for f in record.frames:
        c, h = f.reference.center, f.reference.side / 2
        pts.append(np.array([c - h, c + h]))
    for ob in obstacles:
        pts.append(np.array(ob.center) + np.array([[-1, -1], [1, 1]]) * (ob.radius + ob.delta))
    allp = np.vstack(pts)
    allp = allp[np.all(np.isfinite(allp), axis=1)]
    lo, hi = allp.min(axis=0) - 5, allp.max(axis=0) + 5
    return (lo[0], hi[0]), (lo[1], hi[1])


def write_snapshots(record, cfg, out_dir):
    """One SVG per requested time (nearest recorded frame); returns written paths."""
    if not record.frames or not cfg.snapshots:
        return []
    out_dir.mkdir(parents=True, exist_ok=True)
    times = record.times
    extent = _extent(record, cfg.obstacles)
    written = []
    for t in cfg.snapshots:
        k = int(np.argmin(np.abs(times - t)))
        path = out_dir / f"snapshot_t{times[k]:08.2f}.svg"
        _save(snapshot_figure(record.frames[k], cfg.obstacles, extent), path)
        written.append(path)
    return written


def plot_errors(record, path):
    times, errs = record.times, record.error_matrix
    fig, ax = plt.subplots(figsize=(7, 4))
    for col, (a, b) in enumerate(moment_indices(record.m)):
        series = errs[:, col]
        if np.any(series > 0):
            ax.plot(times, series, lw=0.8, label=f"e{a}{b}")
    ax.set_yscale("symlog", linthresh=1e-3)
    ax.set_xlabel("t")
    ax.set_ylabel("weighted squared error")
    ax.legend(ncol=4, fontsize=6)
    _save(fig, path)
