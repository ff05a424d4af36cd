"""Run configuration and plot-ready file output.

Configs are one JSON document each, validated strictly: unknown keys,
duplicate keys, and out-of-range values all raise ConfigError, so a config
that loads is a config that runs. Snapshots and series go out as CSV with
floats at 17 significant digits, which reload bit-exactly; nothing
time-stamped or environment-dependent is ever written, so a fixed config
and seed produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .core import AreaGrid, ModelParams, SimState, check_shape
from .errors import ConfigError, SnapshotFormatError
from .selfsim import SelfSimInput
from .stepper import StepperConfig, TrajectoryRecord

_MISSING = object()

_FAMILY_KEYS = {
    "exponential": {"scale", "rate"},
    "compact-bump": {"a_lo", "a_hi", "weights"},
    "table": {"values"},
}


def _fmt(value) -> str:
    """Decimal text with 17 significant digits; round-trips float64."""
    return format(float(value), ".16e")


def _number(name, value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(f"{name} must be finite, got {value!r}")
    return float(value)


def _integer(name, value) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    return value


def _boolean(name, value) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{name} must be true or false, got {value!r}")
    return value


class _Section:
    """One config sub-dictionary with strict key accounting."""

    def __init__(self, name, data):
        if not isinstance(data, dict):
            raise ConfigError(f"{name} must be an object, got {type(data).__name__}")
        self.name = name
        self.data = dict(data)

    def take(self, key, default=_MISSING):
        if key in self.data:
            return self.data.pop(key)
        if default is _MISSING:
            raise ConfigError(f"{self.name}: missing required key {key!r}")
        return default

    def done(self):
        if self.data:
            raise ConfigError(f"{self.name}: unknown keys {sorted(self.data)}")


@dataclass(frozen=True)
class RunConfig:
    """Validated run description; sections a command does not use are None.

    initial_params are the family keyword arguments exactly as the state
    builder takes them. seed drives the perturbation noise of stability
    runs; everything else is deterministic with or without it.
    """

    params: ModelParams | None
    stepper: StepperConfig | None
    t_final: float | None
    initial_family: str | None
    initial_params: dict
    project: bool
    out_dir: str
    seed: int
    snapshot_every: int
    tightness: bool
    bounds: bool
    lewis: bool
    ladder_rungs: tuple | None
    selfsim: SelfSimInput | None
    stability_deltas: tuple | None
    stability_t_final: float | None

    def require(self, *sections) -> "RunConfig":
        """Raise unless every named config section was present in the file."""
        fields = {"model": "params", "initial": "initial_family",
                  "ladder": "ladder_rungs", "stability": "stability_deltas"}
        for name in sections:
            if getattr(self, fields.get(name, name)) is None:
                raise ConfigError(f"config is missing the {name!r} section")
        return self


def _no_duplicates(pairs):
    out = {}
    for key, value in pairs:
        if key in out:
            raise ConfigError(f"duplicate key {key!r} in config")
        out[key] = value
    return out


def _parse_model(raw) -> ModelParams:
    sec = _Section("model", raw)
    beta = _number("model.beta", sec.take("beta"))
    n0 = _integer("model.n0", sec.take("n0"))
    delta_a = _number("model.delta_a", sec.take("delta_a"))
    num_nodes = _integer("model.num_nodes", sec.take("num_nodes"))
    truncated = _boolean("model.truncated", sec.take("truncated", True))
    sec.done()
    try:
        return ModelParams(beta=beta, n0=n0, truncated=truncated,
                           grid=AreaGrid(delta_a=delta_a, num_nodes=num_nodes))
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from None


def _parse_stepper(raw) -> StepperConfig:
    sec = _Section("stepper", raw)
    dt = _number("stepper.dt", sec.take("dt"))
    kwargs = {"dt": dt}
    scheme = sec.take("scheme", None)
    if scheme is not None:
        if not isinstance(scheme, str):
            raise ConfigError(f"stepper.scheme must be a string, got {scheme!r}")
        kwargs["scheme"] = scheme
    for key, kind in (("record_every", _integer),
                      ("picard_max_iter", _integer),
                      ("window_retry_cap", _integer),
                      ("picard_tol", _number),
                      ("coupling_floor_factor", _number),
                      ("overflow_tol_factor", _number)):
        value = sec.take(key, None)
        if value is not None:
            kwargs[key] = kind(f"stepper.{key}", value)
    window_time = sec.take("window_time", None)
    if window_time is not None:
        window_time = _number("stepper.window_time", window_time)
        if window_time <= 0.0:
            raise ConfigError("stepper.window_time must be positive")
        kwargs["window_steps"] = max(1, int(round(window_time / dt)))
    sec.done()
    try:
        return StepperConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"stepper: {exc}") from None


def _parse_initial(raw):
    sec = _Section("initial", raw)
    family = sec.take("family")
    if family not in _FAMILY_KEYS:
        raise ConfigError(f"initial.family must be one of "
                          f"{sorted(_FAMILY_KEYS)}, got {family!r}")
    project = _boolean("initial.project", sec.take("project", True))
    kwargs = {}
    for key in _FAMILY_KEYS[family]:
        value = sec.take(key, None)
        if value is not None:
            kwargs[key] = value
    sec.done()
    return family, kwargs, project


def _parse_selfsim(raw) -> SelfSimInput:
    sec = _Section("selfsim", raw)
    beta = _number("selfsim.beta", sec.take("beta"))
    boundary = sec.take("boundary_values")
    if (not isinstance(boundary, list) or len(boundary) != 4):
        raise ConfigError("selfsim.boundary_values must be a list of the "
                          "four class 2..5 values")
    boundary = tuple(_number("selfsim.boundary_values", v) for v in boundary)
    kwargs = {}
    for key, kind in (("n_cap", _integer), ("max_iter", _integer),
                      ("tol", _number), ("damping", _number)):
        value = sec.take(key, None)
        if value is not None:
            kwargs[key] = kind(f"selfsim.{key}", value)
    sec.done()
    try:
        return SelfSimInput(beta=beta, boundary_values=boundary, **kwargs)
    except ValueError as exc:
        raise ConfigError(f"selfsim: {exc}") from None


def load_config(path) -> RunConfig:
    """Read and validate one JSON run configuration."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh, object_pairs_hook=_no_duplicates)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None

    top = _Section("config", raw)
    model_raw = top.take("model", None)
    stepper_raw = top.take("stepper", None)
    t_final = top.take("t_final", None)
    initial_raw = top.take("initial", None)
    output_raw = top.take("output", None)
    seed = _integer("seed", top.take("seed", 0))
    diag_raw = top.take("diagnostics", None)
    ladder_raw = top.take("ladder", None)
    selfsim_raw = top.take("selfsim", None)
    stability_raw = top.take("stability", None)
    top.done()

    if seed < 0:
        raise ConfigError(f"seed must be non-negative, got {seed}")
    if t_final is not None:
        t_final = _number("t_final", t_final)
        if t_final <= 0.0:
            raise ConfigError(f"t_final must be positive, got {t_final}")

    params = _parse_model(model_raw) if model_raw is not None else None
    stepper = _parse_stepper(stepper_raw) if stepper_raw is not None else None
    family, family_kwargs, project = (None, {}, True)
    if initial_raw is not None:
        family, family_kwargs, project = _parse_initial(initial_raw)

    out_dir = "out"
    snapshot_every = 0
    if output_raw is not None:
        sec = _Section("output", output_raw)
        out_dir = sec.take("directory", "out")
        if not isinstance(out_dir, str) or not out_dir:
            raise ConfigError(f"output.directory must be a non-empty string")
        snapshot_every = _integer("output.snapshot_every",
                                  sec.take("snapshot_every", 0))
        if snapshot_every < 0:
            raise ConfigError("output.snapshot_every must be non-negative")
        sec.done()

    tightness = bounds = lewis = False
    if diag_raw is not None:
        sec = _Section("diagnostics", diag_raw)
        tightness = _boolean("diagnostics.tightness", sec.take("tightness", False))
        bounds = _boolean("diagnostics.bounds", sec.take("bounds", False))
        lewis = _boolean("diagnostics.lewis", sec.take("lewis", False))
        sec.done()

    ladder_rungs = None
    if ladder_raw is not None:
        sec = _Section("ladder", ladder_raw)
        rungs = sec.take("rungs")
        sec.done()
        if (not isinstance(rungs, list) or len(rungs) < 2):
            raise ConfigError("ladder.rungs must list at least two class caps")
        ladder_rungs = tuple(_integer("ladder.rungs", r) for r in rungs)

    selfsim = _parse_selfsim(selfsim_raw) if selfsim_raw is not None else None

    stability_deltas = None
    stability_t_final = None
    if stability_raw is not None:
        sec = _Section("stability", stability_raw)
        deltas = sec.take("deltas")
        stability_t_final = sec.take("t_final", None)
        sec.done()
        if not isinstance(deltas, list) or not deltas:
            raise ConfigError("stability.deltas must be a non-empty list")
        stability_deltas = tuple(
            _number("stability.deltas", d) for d in deltas)
        if any(not 0.0 < d < 1.0 for d in stability_deltas):
            raise ConfigError("stability.deltas must lie in (0, 1)")
        if stability_t_final is not None:
            stability_t_final = _number("stability.t_final", stability_t_final)
            if stability_t_final <= 0.0:
                raise ConfigError("stability.t_final must be positive")

    return RunConfig(
        params=params, stepper=stepper, t_final=t_final,
        initial_family=family, initial_params=family_kwargs, project=project,
        out_dir=out_dir, seed=seed, snapshot_every=snapshot_every,
        tightness=tightness, bounds=bounds, lewis=lewis,
        ladder_rungs=ladder_rungs, selfsim=selfsim,
        stability_deltas=stability_deltas, stability_t_final=stability_t_final)


def with_overrides(config: RunConfig, out_dir=None, seed=None) -> RunConfig:
    """Apply command-line overrides on top of a loaded configuration."""
    updates = {}
    if out_dir is not None:
        updates["out_dir"] = str(out_dir)
    if seed is not None:
        if seed < 0:
            raise ConfigError(f"seed must be non-negative, got {seed}")
        updates["seed"] = int(seed)
    return replace(config, **updates) if updates else config


# ---------------------------------------------------------------------------
# CSV artifacts


def write_table(path, header, rows) -> None:
    """One CSV with a header row; floats at 17 significant digits."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([
                cell if isinstance(cell, (str, int)) else _fmt(cell)
                for cell in row])


def _check_emittable(state: SimState, params: ModelParams) -> None:
    # Boundary zeros for growing classes are a condition on data entering a
    # run, re-imposed each step by the inflow side of the transport shift.
    # Between steps the trailing collision half deposits in-flight gain at
    # the a = 0 node, so emitted evolved states are checked for finiteness
    # and non-negativity only and written exactly as computed.
    if not np.all(np.isfinite(state.f)):
        raise ValueError("refusing to write a state with non-finite entries")
    if state.f.min() < 0.0:
        raise ValueError("refusing to write a state with negative entries")


def write_snapshot(path, state: SimState, params: ModelParams) -> None:
    """One state as CSV columns (n, a, f), class-major, non-negative and finite."""
    check_shape(state, params)
    _check_emittable(state, params)
    nodes = params.grid.nodes
    rows = []
    for i, n in enumerate(params.classes):
        fi = state.f[i]
        rows.extend((int(n), nodes[j], fi[j]) for j in range(nodes.size))
    write_table(path, ("n", "a", "f"), rows)


def read_snapshot(path):
    """Reload a snapshot; returns (state, classes, nodes) bit-exactly.

    The layout must be exactly what write_snapshot produces: header
    (n, a, f), contiguous integer classes in class-major order, and the
    same node list repeated per class.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SnapshotFormatError(f"{path}: empty snapshot") from None
        if header != ["n", "a", "f"]:
            raise SnapshotFormatError(
                f"{path}: expected header n,a,f, got {header}")
        ns, As, fs = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise SnapshotFormatError(
                    f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            try:
                ns.append(int(row[0]))
                As.append(float(row[1]))
                fs.append(float(row[2]))
            except ValueError as exc:
                raise SnapshotFormatError(f"{path}:{lineno}: {exc}") from None

    if not ns:
        raise SnapshotFormatError(f"{path}: snapshot has no data rows")
    classes = np.unique(ns)
    if classes.size < 2 or np.any(np.diff(classes) != 1):
        raise SnapshotFormatError(
            f"{path}: classes must be contiguous, got {classes.tolist()}")
    per_class = len(ns) // classes.size
    if per_class * classes.size != len(ns) or per_class < 2:
        raise SnapshotFormatError(f"{path}: ragged class blocks")
    expected_n = np.repeat(classes, per_class)
    if np.any(np.asarray(ns) != expected_n):
        raise SnapshotFormatError(f"{path}: rows are not class-major ordered")
    nodes = np.asarray(As[:per_class])
    if np.any(np.asarray(As).reshape(classes.size, per_class) != nodes):
        raise SnapshotFormatError(f"{path}: node lists differ across classes")
    if nodes[0] != 0.0 or np.any(np.diff(nodes) <= 0.0):
        raise SnapshotFormatError(
            f"{path}: nodes must increase from zero")
    f = np.asarray(fs).reshape(classes.size, per_class)
    return SimState(f=f, time=0.0), classes, nodes


def timeseries_rows(record: TrajectoryRecord):
    """(header, rows) of the per-step scalar series of one trajectory."""
    header = ["time", "count", "area", "facet_total", "imbalance",
              "exchange_rate", "coupling_num", "coupling_den", "coupling",
              "coupling_sup", "flat", "min_node"]
    columns = [record.times, record.count, record.area, record.facet_total,
               record.imbalance, record.exchange_rate, record.coupling_num,
               record.coupling_den, record.coupling, record.coupling_sup,
               record.flat, record.min_node]
    if record.outflow_cum is not None:
        header += ["outflow_total", "overflow_total"]
        columns += [record.outflow_cum.sum(axis=1),
                    record.overflow_cum.sum(axis=1)]
    return header, list(zip(*columns))


def write_timeseries(path, record: TrajectoryRecord) -> None:
    """Scalar series of one run as a single CSV, one row per step."""
    header, rows = timeseries_rows(record)
    write_table(path, header, rows)


def write_mapping(path, mapping) -> None:
    """Flat key/value CSV for small reports."""
    rows = []
    for key, value in mapping.items():
        if isinstance(value, (bool, np.bool_)):
            value = str(bool(value))
        rows.append((key, value))
    write_table(path, ("key", "value"), rows)
