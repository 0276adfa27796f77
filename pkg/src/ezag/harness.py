"""Experiment specs, seeded batch execution and CSV/manifest output.

Trial ``i`` of a spec uses seed ``base_seed + i``.  The same seed draws the
world (redrawn until connected when ``require_connected`` is set), so every
protocol, model and speed in a spec sees the same deployments.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import TreeOptions, run_plain_rw, run_srrw, run_tree
from .hierarchy import LEVEL_COLUMNS, HierarchyConfig, hierarchy_world, projection_csv, run_hier
from .metrics import TRIAL_COLUMNS, BatchSummary
from .mobility import MODELS, MobilityConfig, link_change_rate, trace_positions
from .protocol import EzagOptions, run_ezag
from .world import DEFAULT_DENSITY, World, WorldConfig, build_world, is_connected

OUTPUT_ENV = "EZAG_OUTPUT_DIR"
KINDS = ("protocol", "link_change", "hierarchy", "projection")
PROTOCOLS = ("ezag", "srrw", "plain_rw", "tree")
MODES = ("oracle", "terminate")
MAX_REDRAWS = 1000

# Link changes per node per second, keyed by (N, speed m/s).
LINK_CHANGE_REFERENCE = {
    (100, 3): 1, (100, 9): 5, (100, 15): 7, (100, 21): 9,
    (500, 3): 3, (500, 9): 8, (500, 15): 12, (500, 21): 16,
    (1000, 3): 3, (1000, 9): 9, (1000, 15): 14, (1000, 21): 18,
}  # fmt: skip


class SpecError(ValueError):
    pass


def _ints(v) -> tuple[int, ...]:
    return tuple(int(x) for x in v)


def _floats(v) -> tuple[float, ...]:
    return tuple(float(x) for x in v)


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    kind: str = "protocol"
    protocols: tuple = ("ezag",)
    n_values: tuple = (100,)
    full_n_values: tuple = ()
    models: tuple = ("random_direction",)
    speeds: tuple = (9.0,)
    trials: int = 50
    base_seed: int = 0
    mode: str = "oracle"
    output: str | None = None
    density: float = DEFAULT_DENSITY
    horizon: float = 600.0
    require_connected: bool = True
    delta: int = 16
    trace_duration: float = 20.0
    sample_dt: float = 0.1
    exponent: float = 5.4
    description: str = ""

    def validate(self) -> None:
        if self.trials < 1:
            raise SpecError(f"trials must be >= 1 (got {self.trials})")
        if not self.n_values:
            raise SpecError("n list must be nonempty")
        if any(n < 1 for n in self.n_values + self.full_n_values):
            raise SpecError("every N must be >= 1")
        if self.kind not in KINDS:
            raise SpecError(f"unknown kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "protocol":
            bad = [p for p in self.protocols if p not in PROTOCOLS]
            if bad or not self.protocols:
                raise SpecError(f"unknown protocol(s) {bad}; expected some of {PROTOCOLS}")
        bad_models = [m for m in self.models if m not in MODELS]
        if bad_models or not self.models:
            raise SpecError(f"unknown mobility model(s) {bad_models}; expected some of {MODELS}")
        if not self.speeds or any(s < 0 for s in self.speeds):
            raise SpecError("speeds must be a nonempty list of values >= 0")
        if self.mode not in MODES:
            raise SpecError(f"mode must be one of {MODES}")
        if not self.density > 0 or not self.horizon > 0:
            raise SpecError("density and horizon must be > 0")
        if self.delta < 1:
            raise SpecError("delta must be >= 1")
        if self.kind == "projection" and any(n < 2 for n in self.n_values + self.full_n_values):
            raise SpecError("projection needs N >= 2")
        if self.trace_duration <= 0 or self.sample_dt <= 0:
            raise SpecError("trace_duration and sample_dt must be > 0")

    def sizes(self, full: bool = False) -> tuple[int, ...]:
        return self.n_values + (self.full_n_values if full else ())

    def seeds(self) -> list[int]:
        return [self.base_seed + i for i in range(self.trials)]

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp["experiment"] = {k: _fmt(v) for k, v in asdict(self).items() if v is not None and v != ""}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    return str(v)


_LIST_KEYS = {
    "protocols": tuple,
    "n": _ints,
    "n_values": _ints,
    "full_n": _ints,
    "full_n_values": _ints,
    "models": tuple,
    "speeds": _floats,
}
_ALIASES = {"n": "n_values", "full_n": "full_n_values", "seed": "base_seed", "protocol": "protocols", "model": "models"}


def parse_spec(text: str, name: str = "spec") -> ExperimentSpec:
    """Parse INI text with one ``[experiment]`` section; lists are comma-separated."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise SpecError(f"malformed spec file: {e}") from None
    if "experiment" not in cp:
        raise SpecError("spec file needs an [experiment] section")
    sec = cp["experiment"]
    known = {f.name: f for f in fields(ExperimentSpec)}
    kw: dict = {"name": name}
    for key, raw in sec.items():
        target = _ALIASES.get(key, key)
        if target not in known:
            raise SpecError(f"unknown spec key {key!r}")
        items = [x.strip() for x in raw.split(",") if x.strip()]
        try:
            if key in _LIST_KEYS or target in _LIST_KEYS:
                kw[target] = (_LIST_KEYS.get(key) or _LIST_KEYS[target])(items)
            elif target in ("trials", "base_seed", "delta"):
                kw[target] = int(raw)
            elif target in ("density", "horizon", "trace_duration", "sample_dt", "exponent"):
                kw[target] = float(raw)
            elif target == "require_connected":
                kw[target] = sec.getboolean(key)
            else:
                kw[target] = raw.strip()
        except ValueError as e:
            raise SpecError(f"bad value for {key!r}: {e}") from None
    return ExperimentSpec(**kw)


def load_spec(ref: str) -> ExperimentSpec:
    """A built-in spec name or a path to a spec file."""
    if ref in BUILTIN_SPECS:
        return BUILTIN_SPECS[ref]
    p = Path(ref)
    if not p.is_file():
        raise SpecError(f"no built-in spec or file named {ref!r}")
    return parse_spec(p.read_text(), name=p.stem)


# -- worlds and single runs ------------------------------------------------------------


def connected_world(n: int, density: float, seed: int, require_connected: bool = True) -> World:
    """Geo-dense world from ``seed``; redraws (seed, 1), (seed, 2), ... until connected."""
    for k in range(MAX_REDRAWS):
        ws = seed if k == 0 else int(np.random.SeedSequence([seed, k]).generate_state(1, np.uint64)[0])
        w = build_world(WorldConfig.geo_dense(n, density, rng_seed=ws))
        if not require_connected or is_connected(w):
            return w
    raise RuntimeError(f"no connected world for N={n} after {MAX_REDRAWS} draws")


def _mobility(model: str, speed: float) -> MobilityConfig:
    return MobilityConfig.for_speed(model, speed)


def run_protocol_trial(spec: ExperimentSpec, protocol: str, n: int, model: str, speed: float, seed: int) -> dict:
    world = connected_world(n, spec.density, seed, spec.require_connected)
    mob = _mobility(model, speed)
    opts = EzagOptions(horizon=spec.horizon, terminate_after_n_steps=spec.mode == "terminate")
    if protocol == "ezag":
        st = run_ezag(world, mob, opts, seed=seed)
    elif protocol == "srrw":
        st = run_srrw(world, mob, opts, seed=seed)
    elif protocol == "plain_rw":
        st = run_plain_rw(world, mob, opts, seed=seed)
    else:
        st = run_tree(world, mob, TreeOptions(horizon=spec.horizon), seed=seed)
    return st.row()


LINK_COLUMNS = ("seed", "n_nodes", "model", "speed", "link_changes_per_node_s", "reference")


def run_link_trial(spec: ExperimentSpec, n: int, model: str, speed: float, seed: int) -> dict:
    world = build_world(WorldConfig.geo_dense(n, spec.density, rng_seed=seed))
    trace = trace_positions(world, _mobility(model, speed), spec.trace_duration, spec.sample_dt, np.random.default_rng(seed))
    rate = link_change_rate(trace, world.comm_range, spec.sample_dt)
    ref = LINK_CHANGE_REFERENCE.get((n, round(speed))) if model == "random_direction" else None
    return {"seed": seed, "n_nodes": n, "model": model, "speed": speed, "link_changes_per_node_s": rate, "reference": "" if ref is None else ref}


HIER_COLUMNS = ("seed", "n_nodes", "model", "speed", "delta") + LEVEL_COLUMNS + ("total_messages", "predicted_messages", "push_messages")


def run_hier_trial(spec: ExperimentSpec, n: int, model: str, speed: float, seed: int) -> list[dict]:
    world = hierarchy_world(n, spec.delta, spec.density, seed)
    res = run_hier(world, _mobility(model, speed), HierarchyConfig(delta=spec.delta, horizon=spec.horizon), seed=seed)
    base = {"seed": seed, "n_nodes": n, "model": model, "speed": speed, "delta": spec.delta}
    tail = {"total_messages": res.total_messages, "predicted_messages": res.predicted_messages, "push_messages": res.push_messages}
    return [base | lv.row() | tail for lv in res.levels]


def _run_task(task):
    fn, args = task
    return fn(*args)


# -- batches ------------------------------------------------------------------------------


def _tasks(spec: ExperimentSpec, full: bool) -> list:
    tasks = []
    seeds = spec.seeds()
    for n in spec.sizes(full):
        for model in spec.models:
            speeds = (0.0,) if model == "static" else spec.speeds
            for speed in speeds:
                if spec.kind == "protocol":
                    for proto in spec.protocols:
                        tasks += [(run_protocol_trial, (spec, proto, n, model, speed, s)) for s in seeds]
                elif spec.kind == "link_change":
                    tasks += [(run_link_trial, (spec, n, model, speed, s)) for s in seeds]
                elif spec.kind == "hierarchy":
                    tasks += [(run_hier_trial, (spec, n, model, speed, s)) for s in seeds]
    return tasks


PROTOCOL_SUMMARY_METRICS = (
    "overhead_50",
    "overhead_75",
    "overhead_85",
    "overhead_100",
    "transfers",
    "total_messages",
    "requests_per_transfer",
    "visit_variance",
    "max_visits",
    "completion_time",
)


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(r.get(k, "")) for k in columns})


def _cell(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v


def _group(rows, keys):
    out: dict = {}
    for r in rows:
        out.setdefault(tuple(r[k] for k in keys), []).append(r)
    return out


def summarize_rows(spec: ExperimentSpec, rows: list[dict]) -> tuple[tuple, list[dict]]:
    if spec.kind == "protocol":
        keys = ("protocol", "n_nodes", "model", "speed", "mode")
        metrics = PROTOCOL_SUMMARY_METRICS
    elif spec.kind == "link_change":
        keys = ("n_nodes", "model", "speed", "reference")
        metrics = ("link_changes_per_node_s",)
    else:
        keys = ("n_nodes", "model", "speed", "delta", "level")
        metrics = ("cells", "mean_transfers_per_cell", "messages", "median_completion_time", "total_messages", "predicted_messages")
    cols = list(keys) + ["trials"]
    for m in metrics:
        cols += [f"{m}_{s}" for s in ("median", "q1", "q3", "min", "max")]
    if spec.kind == "protocol":
        cols += ["complete_fraction", "fraction_overhead_below_1"]
    out = []
    for key, group in _group(rows, keys).items():
        row = dict(zip(keys, key))
        row["trials"] = len(group)
        for m in metrics:
            b = BatchSummary.of(float(g[m]) if g[m] != "" else math.nan for g in group)
            for s in ("median", "q1", "q3", "min", "max"):
                row[f"{m}_{s}"] = getattr(b, s)
        if spec.kind == "protocol":
            row["complete_fraction"] = sum(g["complete"] for g in group) / len(group)
            ov = [g["overhead_100"] for g in group]
            row["fraction_overhead_below_1"] = sum(1 for v in ov if not math.isnan(v) and v < 1) / len(group)
        out.append(row)
    return tuple(cols), out


@dataclass
class ExperimentOutput:
    directory: Path
    trials_csv: Path
    summary_csv: Path
    manifest: Path
    rows: list = field(default_factory=list)
    summary: list = field(default_factory=list)


def resolve_output(spec: ExperimentSpec, output: str | os.PathLike | None = None) -> Path:
    if output is not None:
        return Path(output)
    if spec.output:
        return Path(spec.output)
    return Path(os.environ.get(OUTPUT_ENV, "ezag-out")) / spec.name


def _probe(directory: Path) -> None:
    """Fail with an I/O error before any simulation if we cannot write here."""
    directory.mkdir(parents=True, exist_ok=True)
    probe = directory / ".write-probe"
    with open(probe, "w") as f:
        f.write("")
    probe.unlink()


def run_experiment(spec: ExperimentSpec, output=None, *, full: bool = False, workers: int = 1, trials: int | None = None) -> ExperimentOutput:
    """Run every trial of ``spec`` and write trials.csv, summary.csv and manifest.json."""
    if trials is not None:
        spec = replace(spec, trials=trials)
    spec.validate()
    directory = resolve_output(spec, output)
    _probe(directory)
    out = ExperimentOutput(directory, directory / "trials.csv", directory / "summary.csv", directory / "manifest.json")
    started = time.time()

    if spec.kind == "projection":
        text = projection_csv(spec.sizes(full), spec.exponent)
        out.trials_csv.write_text(text)
        out.summary_csv.write_text(text)
        out.rows = list(csv.DictReader(io.StringIO(text)))
        out.summary = out.rows
    else:
        tasks = _tasks(spec, full)
        if workers > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
        else:
            results = [_run_task(t) for t in tasks]
        rows = []
        for r in results:
            rows.extend(r if isinstance(r, list) else [r])
        columns = {"protocol": TRIAL_COLUMNS, "link_change": LINK_COLUMNS, "hierarchy": HIER_COLUMNS}[spec.kind]
        _write_csv(out.trials_csv, columns, rows)
        scols, summary = summarize_rows(spec, rows)
        _write_csv(out.summary_csv, scols, summary)
        out.rows, out.summary = rows, summary
        if spec.kind == "hierarchy":
            (directory / "projection.csv").write_text(projection_csv(spec.sizes(full), spec.exponent))

    manifest = {
        "spec": asdict(spec),
        "spec_ini": spec.to_ini(),
        "full": full,
        "sizes": list(spec.sizes(full)),
        "seeds": spec.seeds(),
        "seed_rule": "trial i uses seed base_seed + i",
        "artifact_version": __version__,
        "python": sys.version.split()[0],
        "platform": platform.platform(),
        "numpy": np.__version__,
        "started_unix": started,
        "elapsed_s": time.time() - started,
        "files": {"trials": out.trials_csv.name, "summary": out.summary_csv.name},
    }
    out.manifest.write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    return out


# -- built-in specs ---------------------------------------------------------------------------

_SIZES = (100, 200, 400, 800, 1000)
_FULL = (2000, 4000)

BUILTIN_SPECS: dict[str, ExperimentSpec] = {
    s.name: s
    for s in [
        ExperimentSpec("fig1", protocols=("srrw",), n_values=(100, 400, 1000), description="visit-count distribution of the self-repelling walk"),
        ExperimentSpec("fig2a", protocols=("srrw",), n_values=(100, 500, 1000), full_n_values=_FULL, description="self-repelling walk overhead at 50/75/85/100% coverage"),
        ExperimentSpec("fig2b", protocols=("srrw", "ezag"), n_values=_SIZES, full_n_values=_FULL, description="full-coverage overhead vs network size, with and without push"),
        ExperimentSpec("fig3a", protocols=("ezag",), n_values=(100, 500, 1000), models=("random_direction", "random_waypoint", "gauss_markov"), description="EZ-AG overhead under three mobility models"),
        ExperimentSpec("fig3b", protocols=("ezag",), n_values=(100, 500, 1000), speeds=(3.0, 9.0, 15.0, 21.0), description="EZ-AG overhead vs node speed for several sizes"),
        ExperimentSpec("fig4", protocols=("ezag",), n_values=(500,), models=("static", "random_direction"), speeds=(3.0, 9.0, 15.0, 21.0), description="EZ-AG overhead vs speed at N=500"),
        ExperimentSpec("fig4a", protocols=("plain_rw", "srrw"), n_values=(500,), models=("static",), trials=20, horizon=1200.0, description="visit tails of plain and self-repelling walks"),
        ExperimentSpec("var", protocols=("ezag",), n_values=_SIZES, full_n_values=_FULL, description="spread of EZ-AG overhead across trials"),
        ExperimentSpec("termination", protocols=("ezag",), n_values=(500,), mode="terminate", description="coverage when the walk stops after exactly N transfers"),
        ExperimentSpec("fig5", protocols=("ezag",), n_values=_SIZES, full_n_values=_FULL, description="messages, time and token requests vs network size"),
        ExperimentSpec("fig6", protocols=("ezag", "tree"), n_values=(500,), models=("static", "random_direction"), speeds=(3.0, 9.0, 15.0, 21.0), trials=20, description="EZ-AG vs tree: messages and time vs speed"),
        ExperimentSpec("fig7", protocols=("ezag", "tree"), n_values=(100, 200, 400, 800), full_n_values=_FULL, speeds=(9.0, 15.0), trials=20, description="EZ-AG vs tree: messages vs size for mobile networks"),
        ExperimentSpec("table1", kind="link_change", n_values=(100, 500, 1000), speeds=(3.0, 9.0, 15.0, 21.0), trials=5, description="link changes per node per second"),
        ExperimentSpec("hierarchy", kind="hierarchy", n_values=(256, 1024), full_n_values=(4096,), models=("static",), trials=20, description="per-level cost of the cell hierarchy"),
        ExperimentSpec("gossip", kind="projection", n_values=(100, 200, 500, 1000, 2000, 4000), trials=1, description="projected messages: spatial gossip model vs hierarchical EZ-AG"),
    ]
}
