"""Scenario files, seeded initial states, batch runs and their on-disk outputs.

A scenario is a JSON object; see ``scenarios/*.json`` for complete
examples. Output of :func:`run` in ``out_dir``:

``trajectory.jsonl``
    one JSON object per control period: time, follower and leader positions
    and velocities, the observation, the applied controls (``null`` on the
    last frame), the desired signal and the weighted errors. Coordinates are
    in the scenario's world frame and length units; velocities per second.
``errors.csv``
    column ``t`` then ``e_ab`` for every tracked moment in graded-lex order.
``snapshots/snapshot_t<time>.svg``
    crowd, leaders, desired square, leader velocity and control arrows.
``errors.svg``
    weighted error traces.
``manifest.json``
    config echo, package versions, per-step solver timings and counts.

Initial follower positions are drawn i.i.d. uniform on the configured
rectangle from ``numpy.random.Generator(PCG64(seed))``: one call to
``uniform(low=(x0, y0), high=(x1, y1), size=(N, 2))``.
"""
from dataclasses import dataclass, field
import csv
import io
import json
import logging
from importlib import resources
from pathlib import Path
import platform
import time as _time

import numpy as np

from .dynamics import CrowdState, Obstacle, standard_model
from .exceptions import ConfigError, InvalidInputError, NumericalFailure
from .hjb_core import CostWeights, HorizonConfig, default_dxi, HjbLayout, standard_weights
from .moments import moment_count, moment_indices, stored_index
from .mpc_controller import run_closed_loop, weighted_errors
from .shape_signals import ShapeSchedule

logger = logging.getLogger(__name__)

__all__ = [
    "ScenarioConfig",
    "ErrorSeries",
    "load_scenario",
    "parse_scenario",
    "scenario_path",
    "init_state",
    "run",
    "run_scenario",
    "write_outputs",
    "frame_to_json",
    "read_errors",
    "compare_errors",
]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

_DXI_KEYS = {"moment_order1", "moment_growth", "dot_m1", "leader_pos", "leader_vel"}


@dataclass
class ScenarioConfig:
    name: str
    N: int
    M: int
    m: int
    q: int
    dt: float
    dt_sim: float
    horizon: float
    u_max: float
    p: float
    c0: float
    grad_eps: float
    kappa: float
    hold_periods: int
    running: np.ndarray
    terminal: np.ndarray
    follower_region: tuple
    seed: int
    leader_positions: np.ndarray
    schedule: ShapeSchedule
    obstacles: list
    dxi: np.ndarray
    snapshots: list = field(default_factory=list)
    near_leader: str = "clamp"
    source: dict = field(default_factory=dict)

    def weights(self):
        return CostWeights(self.running, self.terminal, self.c0, self.u_max, self.p)

    def horizon_config(self):
        return HorizonConfig(q=self.q, dt=self.dt, dxi=self.dxi, grad_eps=self.grad_eps)

    def model(self):
        return standard_model(p=self.p)

    def to_json(self):
        """Fully expanded config (weights as explicit tables)."""
        names = [f"{a}{b}" for a, b in moment_indices(self.m)]
        return {
            "name": self.name,
            "N": self.N,
            "M": self.M,
            "m": self.m,
            "q": self.q,
            "dt": self.dt,
            "dt_sim": self.dt_sim,
            "horizon": self.horizon,
            "u_max": self.u_max,
            "p": self.p,
            "c0": self.c0,
            "grad_eps": self.grad_eps,
            "kappa": self.kappa,
            "hold_periods": self.hold_periods,
            "weights": {
                "running": dict(zip(names, self.running.tolist())),
                "terminal": dict(zip(names, self.terminal.tolist())),
            },
            "follower_init": {"region": [list(r) for r in self.follower_region], "seed": self.seed},
            "leader_init": {"positions": self.leader_positions.tolist()},
            "schedule": self.schedule.to_json(),
            "obstacles": [
                {"center": list(o.center), "radius": o.radius, "delta": o.delta, "kappa": o.kappa}
                for o in self.obstacles
            ],
            "dxi": self.dxi.tolist(),
            "near_leader": self.near_leader,
            "output": {"snapshots": list(self.snapshots)},
        }


def scenario_path(name_or_path):
    """Resolve a shipped scenario name (``sim1``) or return the given path."""
    p = Path(name_or_path)
    if p.suffix == ".json" or p.exists():
        return p
    shipped = resources.files("crowdshape") / "scenarios" / f"{name_or_path}.json"
    if shipped.is_file():
        return Path(str(shipped))
    return p


def load_scenario(path, seed=None, snapshots=None):
    """Read, validate and expand a scenario file."""
    p = scenario_path(path)
    try:
        text = Path(p).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {p}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if seed is not None:
        raw.setdefault("follower_init", {})["seed"] = int(seed)
    if snapshots is not None:
        raw.setdefault("output", {})["snapshots"] = list(snapshots)
    return parse_scenario(raw, name=Path(p).stem)


def _multiple(a, b):
    r = a / b
    return abs(r - round(r)) <= 1e-6 * max(1.0, abs(r))


def _weight_table(table, m, problems, label):
    n = moment_count(m)
    if table is None or table == "standard" or (isinstance(table, dict) and table.get("rule") == "standard"):
        first = 1000.0 if not isinstance(table, dict) else float(table.get("first", 1000.0))
        return standard_weights(m, first)
    if isinstance(table, dict):
        out = np.zeros(n)
        for key, val in table.items():
            try:
                a, b = int(key[0]), int(key[1:])
                out[stored_index(a, b)] = float(val)
            except (ValueError, IndexError):
                problems.append(f"weights.{label}: bad moment key {key!r} (expected e.g. '10', '21')")
        return out
    if isinstance(table, list):
        if len(table) != n:
            problems.append(f"weights.{label}: expected {n} entries for m = {m}, got {len(table)}")
            return np.zeros(n)
        return np.asarray(table, dtype=float)
    problems.append(f"weights.{label}: unsupported value {table!r}")
    return np.zeros(n)


def parse_scenario(raw, name="scenario"):
    """Validate a decoded scenario mapping; every violation is reported."""
    problems = []
    if not isinstance(raw, dict):
        raise ConfigError("scenario must be a JSON object")

    def get(key, kind, default=None, required=True):
        if key not in raw:
            if required and default is None:
                problems.append(f"{key}: missing")
            return default
        try:
            return kind(raw[key])
        except (TypeError, ValueError):
            problems.append(f"{key}: cannot convert {raw[key]!r} to {kind.__name__}")
            return default

    N = get("N", int)
    M_ = get("M", int)
    m = get("m", int)
    q = get("q", int, 3)
    dt = get("dt", float, 0.1)
    dt_sim = get("dt_sim", float, None, required=False)
    horizon = get("horizon", float)
    u_max = get("u_max", float, 5.0)
    p = get("p", float, 0.5)
    c0 = get("c0", float, 10.0)
    grad_eps = get("grad_eps", float, None, required=False)
    kappa = get("kappa", float, 20.0)
    hold = get("hold_periods", int, 1)
    for key, val, lo in (("N", N, 1), ("M", M_, 1), ("m", m, 1), ("q", q, 1), ("hold_periods", hold, 1)):
        if val is not None and val < lo:
            problems.append(f"{key}: must be >= {lo}, got {val}")
    for key, val in (("dt", dt), ("u_max", u_max)):
        if val is not None and not val > 0:
            problems.append(f"{key}: must be positive, got {val}")
    for key, val in (("p", p), ("c0", c0), ("kappa", kappa)):
        if val is not None and not val >= 0:
            problems.append(f"{key}: must be non-negative, got {val}")
    if dt_sim is None and dt is not None:
        dt_sim = dt / 10.0
    if dt_sim is not None and not dt_sim > 0:
        problems.append(f"dt_sim: must be positive, got {dt_sim}")
    elif dt and dt_sim and not _multiple(dt, dt_sim):
        problems.append(f"dt_sim: {dt_sim} does not divide dt = {dt}")
    if horizon is not None and horizon < 0:
        problems.append(f"horizon: must be non-negative, got {horizon}")
    elif horizon is not None and dt and not _multiple(horizon, dt):
        problems.append(f"horizon: {horizon} is not a multiple of dt = {dt}")
    if grad_eps is None and u_max:
        grad_eps = 1e-8 * u_max

    weights = raw.get("weights", {"rule": "standard"})
    mm = m if m and m >= 1 else 1
    if isinstance(weights, dict) and ("running" in weights or "terminal" in weights):
        running = _weight_table(weights.get("running", "standard"), mm, problems, "running")
        terminal = _weight_table(weights.get("terminal", weights.get("running", "standard")), mm, problems, "terminal")
    else:
        running = _weight_table(weights, mm, problems, "rule")
        terminal = running.copy()
    if np.any(running < 0) or np.any(terminal < 0):
        problems.append("weights: must be non-negative")

    finit = raw.get("follower_init", {})
    region = finit.get("region", [[-50, 50], [-50, 50]])
    try:
        region = tuple(tuple(float(v) for v in r) for r in region)
        if len(region) != 2 or any(len(r) != 2 or not r[1] > r[0] for r in region):
            raise ValueError
    except (TypeError, ValueError):
        problems.append(f"follower_init.region: expected [[x0, x1], [y0, y1]] with x0 < x1, got {region!r}")
        region = ((-50.0, 50.0), (-50.0, 50.0))
    seed = finit.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        problems.append(f"follower_init.seed: expected a non-negative integer, got {seed!r}")
        seed = 0

    linit = raw.get("leader_init", {})
    try:
        leaders = np.asarray(linit.get("positions"), dtype=float).reshape(-1, 2)
    except (TypeError, ValueError):
        problems.append("leader_init.positions: expected a list of [x, y] pairs")
        leaders = np.zeros((0, 2))
    if M_ is not None and leaders.shape[0] != M_:
        problems.append(f"leader_init.positions: {leaders.shape[0]} positions for M = {M_}")

    schedule = None
    try:
        schedule = ShapeSchedule(raw.get("schedule", []))
    except (InvalidInputError, KeyError, TypeError, ValueError) as exc:
        problems.append(f"schedule: {exc}")

    obstacles = []
    for i, ob in enumerate(raw.get("obstacles", [])):
        try:
            obstacles.append(Obstacle(tuple(ob["center"]), float(ob["radius"]), float(ob.get("delta", 2.0)), float(ob.get("kappa", kappa if kappa is not None else 20.0))))
        except (InvalidInputError, KeyError, TypeError, ValueError) as exc:
            problems.append(f"obstacles[{i}]: {exc}")

    dxi = None
    if m and M_ and m >= 1 and M_ >= 1:
        table = raw.get("dxi", {})
        if isinstance(table, list):
            dxi = np.asarray(table, dtype=float)
            if dxi.size != HjbLayout(m, M_).dim:
                problems.append(f"dxi: expected {HjbLayout(m, M_).dim} entries, got {dxi.size}")
        elif isinstance(table, dict):
            unknown = set(table) - _DXI_KEYS
            if unknown:
                problems.append(f"dxi: unknown keys {sorted(unknown)}")
            dxi = default_dxi(
                m,
                M_,
                order1=float(table.get("moment_order1", 0.5)),
                leader_pos=float(table.get("leader_pos", 0.5)),
                leader_vel=float(table.get("leader_vel", 0.2)),
                dot_m1=float(table.get("dot_m1", 0.2)),
                growth=float(table.get("moment_growth", 5.0)),
            )
        else:
            problems.append("dxi: expected an object of overrides or an explicit list")
        if dxi is not None and np.any(~(dxi > 0)):
            problems.append("dxi: all steps must be positive")

    near = raw.get("near_leader", "clamp")
    if near not in ("clamp", "raise"):
        problems.append(f"near_leader: expected 'clamp' or 'raise', got {near!r}")

    snaps = raw.get("output", {}).get("snapshots", [])
    try:
        snaps = [float(t) for t in snaps]
    except (TypeError, ValueError):
        problems.append(f"output.snapshots: expected a list of times, got {snaps!r}")
        snaps = []

    if problems:
        raise ConfigError(f"invalid scenario {name!r}", problems)
    return ScenarioConfig(
        name=str(raw.get("name", name)),
        N=N,
        M=M_,
        m=m,
        q=q,
        dt=dt,
        dt_sim=dt_sim,
        horizon=horizon,
        u_max=u_max,
        p=p,
        c0=c0,
        grad_eps=grad_eps,
        kappa=kappa,
        hold_periods=hold,
        running=running,
        terminal=terminal,
        follower_region=region,
        seed=seed,
        leader_positions=leaders,
        schedule=schedule,
        obstacles=obstacles,
        dxi=dxi,
        snapshots=snaps,
        near_leader=near,
        source=raw,
    )


def init_state(cfg):
    """Uniform i.i.d. followers from the configured seed, leaders as configured, all at rest."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    (x0, x1), (y0, y1) = cfg.follower_region
    pos = rng.uniform(low=(x0, y0), high=(x1, y1), size=(cfg.N, 2))
    return CrowdState(0.0, pos, np.zeros((cfg.N, 2)), cfg.leader_positions.copy(), np.zeros((cfg.M, 2)))


def _floats(arr):
    return np.asarray(arr, dtype=float).tolist()


def frame_to_json(frame):
    s = frame.state
    obs = frame.observation
    ref = frame.reference
    return {
        "t": frame.time,
        "followers": {"pos": _floats(s.follower_pos), "vel": _floats(s.follower_vel)},
        "leaders": {"pos": _floats(s.leader_pos), "vel": _floats(s.leader_vel)},
        "observation": {
            "moments": _floats(obs.moments.values),
            "dot_m1": _floats(obs.dot_m1),
        },
        "controls": None if frame.controls is None else _floats(frame.controls),
        "desired": {
            "center": _floats(ref.center),
            "side": float(ref.side),
            "center_rate": _floats(ref.center_rate),
            "central": _floats(ref.central),
        },
        "errors": _floats(frame.errors),
    }


def _error_header(m):
    return ["t"] + [f"e{a}{b}" for a, b in moment_indices(m)]


def _errors_csv(record):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_error_header(record.m))
    for f in record.frames:
        w.writerow([repr(float(f.time))] + [repr(float(e)) for e in f.errors])
    return buf.getvalue()


def _versions():
    import matplotlib

    from . import __version__

    return {
        "crowdshape": __version__,
        "numpy": np.__version__,
        "matplotlib": matplotlib.__version__,
        "python": platform.python_version(),
    }


def write_outputs(record, cfg, out_dir, status="ok", message=None, wall=None):
    """Write every artefact of a (possibly partial) run."""
    from . import plotting

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trajectory.jsonl", "w") as fh:
        for f in record.frames:
            fh.write(json.dumps(frame_to_json(f), separators=(",", ":")) + "\n")
    (out / "errors.csv").write_text(_errors_csv(record))
    snap_dir = out / "snapshots"
    written = plotting.write_snapshots(record, cfg, snap_dir)
    if record.frames:
        plotting.plot_errors(record, out / "errors.svg")
    manifest = {
        "status": status,
        "message": message,
        "config": cfg.to_json(),
        "versions": _versions(),
        "frames": len(record.frames),
        "controller_steps": len(record.timings),
        "timings": {"controller_step_seconds": list(record.timings), "wall_seconds": wall},
        "solver": record.solver_stats,
        "snapshots": [str(p.relative_to(out)) for p in written],
        "final_center_of_mass": _floats(record.frames[-1].state.follower_pos.mean(axis=0)) if record.frames else None,
        "final_summed_error": float(record.frames[-1].errors.sum()) if record.frames else None,
        "integrated_errors": _integrated_by_order(record.times, record.error_matrix, record.m) if record.frames else None,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def run_scenario(cfg, progress=None):
    """Closed-loop run of a config; returns the trajectory record."""
    return run_closed_loop(
        init_state(cfg),
        cfg.schedule,
        cfg.model(),
        cfg.obstacles,
        cfg.weights(),
        cfg.horizon_config(),
        cfg.horizon,
        cfg.dt_sim,
        hold_periods=cfg.hold_periods,
        progress=progress,
        near_leader=cfg.near_leader,
    )


def run(cfg, out_dir, progress=None):
    """Run a scenario and write its outputs; returns an exit status.

    Numerical failures still write whatever frames were produced.
    """
    from .mpc_controller import TrajectoryRecord

    t0 = _time.perf_counter()
    try:
        record = run_scenario(cfg, progress)
    except NumericalFailure as exc:
        logger.error("numerical failure: %s", exc)
        record = exc.record if exc.record is not None else TrajectoryRecord(cfg.m)
        write_outputs(record, cfg, out_dir, status="numerical_failure", message=str(exc), wall=_time.perf_counter() - t0)
        return EXIT_NUMERIC
    write_outputs(record, cfg, out_dir, wall=_time.perf_counter() - t0)
    return EXIT_OK


@dataclass
class ErrorSeries:
    """Weighted error history: ``values[i, k]`` is ``e`` of moment ``indices[k]`` at ``times[i]``."""

    times: np.ndarray
    values: np.ndarray
    indices: tuple
    fingerprint: dict = field(default_factory=dict)

    @classmethod
    def from_record(cls, record, cfg=None):
        fp = _fingerprint(cfg) if cfg is not None else {}
        return cls(record.times, record.error_matrix, tuple(moment_indices(record.m)), fp)


def _fingerprint(cfg):
    if cfg is None:
        return {}
    data = cfg.to_json() if hasattr(cfg, "to_json") else cfg
    return {"schedule": data["schedule"], "weights": data["weights"], "m": data["m"], "horizon": data["horizon"]}


def read_errors(run_dir):
    """Load ``errors.csv`` (and the config fingerprint from the manifest) of a run directory."""
    d = Path(run_dir)
    with open(d / "errors.csv") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    idx = tuple((int(h[1]), int(h[2:])) for h in header[1:])
    data = np.array([[float(v) for v in r] for r in body]) if body else np.zeros((0, len(header)))
    fp = {}
    man = d / "manifest.json"
    if man.exists():
        fp = _fingerprint(json.loads(man.read_text())["config"])
    return ErrorSeries(data[:, 0], data[:, 1:], idx, fp)


_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def _integrated_by_order(times, values, m):
    out = {}
    if len(times) == 0:
        return out
    idx = moment_indices(m)
    for k in range(1, m + 1):
        cols = [i for i, (a, b) in enumerate(idx) if a + b == k]
        series = values[:, cols].sum(axis=1)
        out[str(k)] = float(_trapezoid(series, times)) if len(times) > 1 else 0.0
    return out


def compare_errors(a, b):
    """Per-order time-integrated weighted errors of two runs and their ratio ``a / b``.

    Rows whose denominator is zero carry ``ratio = inf`` (or ``nan`` for
    0/0) and ``flag = "undefined"``.
    """
    if a.indices != b.indices:
        raise InvalidInputError("runs track different moment sets")
    if a.fingerprint and b.fingerprint and (
        a.fingerprint.get("schedule") != b.fingerprint.get("schedule")
        or a.fingerprint.get("weights") != b.fingerprint.get("weights")
    ):
        raise InvalidInputError("runs use different schedules or weights and are not comparable")
    m = max(x + y for x, y in a.indices)
    ia = _integrated_by_order(a.times, a.values, m)
    ib = _integrated_by_order(b.times, b.values, m)
    rows = []
    for k in range(1, m + 1):
        va, vb = ia[str(k)], ib[str(k)]
        if vb == 0:
            ratio = float("nan") if va == 0 else float("inf")
            flag = "undefined"
        else:
            ratio = va / vb
            flag = ""
        rows.append({"order": k, "a": va, "b": vb, "ratio": ratio, "flag": flag})
    return rows


def format_comparison(rows):
    lines = ["order,integrated_a,integrated_b,ratio,flag"]
    for r in rows:
        lines.append(f"{r['order']},{r['a']!r},{r['b']!r},{r['ratio']!r},{r['flag']}")
    return "\n".join(lines) + "\n"


def recompute_errors(frames_json, cfg):
    """Weighted errors recomputed from serialised frames (offline consistency check)."""
    out = []
    for fr in frames_json:
        st = CrowdState(fr["t"], fr["followers"]["pos"], fr["followers"]["vel"], fr["leaders"]["pos"], fr["leaders"]["vel"])
        out.append(weighted_errors(st, cfg.schedule, cfg.running, cfg.m))
    return np.array(out)
