"""Scenario files: a versioned YAML schema that builds runnable experiments.

A scenario file (format tag ``wbc-scenario/1``) names a model and a duration
and declares everything the closed loop needs: simulator settings, controller
weights, contacts, tracked tasks with their reference generators, barriers
(enforced or monitor-only), an optional gait block, one optional scheduled
disturbance, and declared metric checks evaluated after the run.

Parsing normalizes the file: every optional field is materialized with its
default and keys are emitted in one canonical order, so

    parse(serialize(parse(text))) == parse(text)

holds exactly and serialized scenarios diff cleanly.  Schema errors carry the
source file and line of the offending key.  Dotted overrides (``sim.dt``,
``ext_force.fy``, ``tasks.torso.weight``) edit the normalized form and are
re-validated; list segments match an element index or its name/frame.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import contacts as ct
from . import gait as gt
from . import idqp
from . import multibody as mb
from . import safety as sf
from . import sim as sm
from . import tasks as tk
from .errors import ScenarioError

SCHEMA = "wbc-scenario/1"

REFERENCE_TYPES = ("constant", "sinusoid", "arm-sinusoid", "squat", "bow")

# metric roots a declared check may address (see sim._summarize)
METRIC_ROOTS = (
    "min_h", "min_bound_gap", "max_task_err", "max_qdd_consistency",
    "max_dyn_residual", "max_cons_residual", "max_loop_residual",
    "min_zmp_margin", "min_friction_margin", "fallback_ticks",
    "max_iterations", "incident_counts", "steps", "mean_speed",
    "commanded_speed", "ticks",
)

_REQUIRED = object()


# ---------------------------------------------------------------------------
# scalar coercers: raise ValueError, the walker adds file/line context


def _float(v) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError("expected a number")
    return float(v)


def _pos(v) -> float:
    x = _float(v)
    if not x > 0.0:
        raise ValueError("must be > 0")
    return x


def _nonneg(v) -> float:
    x = _float(v)
    if x < 0.0:
        raise ValueError("must be >= 0")
    return x


def _int(v) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValueError("expected an integer")
    return int(v)


def _pos_int(v) -> int:
    x = _int(v)
    if x < 1:
        raise ValueError("must be >= 1")
    return x


def _bool(v) -> bool:
    if not isinstance(v, bool):
        raise ValueError("expected true or false")
    return v


def _str(v) -> str:
    if not isinstance(v, str) or not v:
        raise ValueError("expected a nonempty string")
    return v


def _floats(v) -> list:
    if not isinstance(v, (list, tuple)):
        raise ValueError("expected a list of numbers")
    return [_float(x) for x in v]


def _ints(v) -> list:
    if not isinstance(v, (list, tuple)):
        raise ValueError("expected a list of integers")
    return [_int(x) for x in v]


def _gain(v):
    """Scalar or per-axis list, both forms kept as written."""
    return _floats(v) if isinstance(v, (list, tuple)) else _float(v)


def _opt(coerce):
    return lambda v: None if v is None else coerce(v)


class _Nested:
    """Marks a field whose value is normalized by a (ctx, value, path) fn."""

    def __init__(self, fn):
        self.fn = fn


class _Ctx:
    """Error reporting with the source name and, when known, the line."""

    def __init__(self, source: str, lines: dict):
        self.source = source
        self.lines = lines

    def fail(self, path: str, msg: str):
        where = self.source
        line = self.lines.get(path)
        if line is not None:
            where = f"{self.source}:{line}"
        raise ScenarioError(f"{where}: {path or 'top level'}: {msg}")


def _line_map(text: str) -> dict:
    """Dotted path -> 1-based line number, from the YAML node graph."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    lines: dict = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for kn, vn in node.value:
                sub = f"{path}.{kn.value}" if path else str(kn.value)
                lines[sub] = kn.start_mark.line + 1
                walk(vn, sub)
        elif isinstance(node, yaml.SequenceNode):
            for i, vn in enumerate(node.value):
                sub = f"{path}[{i}]"
                lines[sub] = vn.start_mark.line + 1
                walk(vn, sub)

    if root is not None:
        walk(root, "")
    return lines


def _take(ctx: _Ctx, data, path: str, table: dict) -> dict:
    """Normalize one mapping against a field table, canonical key order."""
    if not isinstance(data, dict):
        ctx.fail(path, "expected a mapping")
    for key in data:
        if key not in table:
            ctx.fail(f"{path}.{key}" if path else str(key),
                     f"unknown field {key!r}")
    out = {}
    for key, (kind, default) in table.items():
        p = f"{path}.{key}" if path else str(key)
        if key in data:
            raw = data[key]
        elif default is _REQUIRED:
            ctx.fail(path, f"missing required field {key!r}")
        else:
            raw = copy.deepcopy(default)
        if isinstance(kind, _Nested):
            out[key] = None if raw is None else kind.fn(ctx, raw, p)
        else:
            try:
                out[key] = kind(raw)
            except ValueError as exc:
                ctx.fail(p, str(exc))
    return out


def _norm_list(ctx, items, path, fn) -> list:
    if not isinstance(items, list):
        ctx.fail(path, "expected a list")
    return [fn(ctx, it, f"{path}[{i}]") for i, it in enumerate(items)]


# ---------------------------------------------------------------------------
# section tables

_SIM_DEF = sm.SimConfig()
_SIM_FIELDS = {
    "dt": (_pos, _SIM_DEF.dt),
    "integrator": (_str, _SIM_DEF.integrator),
    "alpha": (_nonneg, _SIM_DEF.alpha),
    "beta": (_nonneg, _SIM_DEF.beta),
    "substeps": (_pos_int, _SIM_DEF.substeps),
}

_OPTS_DEF = idqp.ControllerOptions()
_CONTROLLER_FIELDS = {
    "gamma_qdd": (_pos, _OPTS_DEF.gamma_qdd),
    "gamma_u": (_pos, _OPTS_DEF.gamma_u),
    "gamma_lam": (_pos, _OPTS_DEF.gamma_lam),
    "zmp_shrink": (_nonneg, _OPTS_DEF.zmp_shrink),
    "eps_normal": (_nonneg, _OPTS_DEF.eps_normal),
    "use_zmp": (_bool, _OPTS_DEF.use_zmp),
    "max_iter": (_pos_int, _OPTS_DEF.max_iter),
}

_EXT_FORCE_FIELDS = {
    "frame": (_str, _REQUIRED),
    "start": (_nonneg, _REQUIRED),
    "duration": (_nonneg, _REQUIRED),
    "fx": (_float, 0.0),
    "fy": (_float, 0.0),
    "fz": (_float, 0.0),
    "tx": (_float, 0.0),
    "ty": (_float, 0.0),
    "tz": (_float, 0.0),
}

_CONTACT_FIELDS = {
    "frame": (_str, _REQUIRED),
    "kind": (_str, ct.POINT_3DOF),
    "mu": (_pos, 0.6),
    "gamma": (_nonneg, 0.0),
    "half_extents": (_opt(_floats), None),
}

_TASK_FIELDS = {
    "name": (_str, _REQUIRED),
    "kind": (_str, _REQUIRED),
    "reference": (_Nested(lambda c, v, p: _norm_reference(c, v, p)), _REQUIRED),
    "frame": (_opt(_str), None),
    "joints": (_opt(_ints), None),
    "axes": (_opt(_ints), None),
    "kp": (_gain, tk.DEFAULT_KP),
    "kd": (_gain, tk.DEFAULT_KD),
    "weight": (_gain, 1.0),
}

_REFERENCE_FIELDS = {
    "constant": {
        "type": (_str, _REQUIRED),
        "values": (_gain, _REQUIRED),
    },
    "sinusoid": {
        "type": (_str, _REQUIRED),
        "offset": (_gain, 0.0),
        "amplitude": (_gain, _REQUIRED),
        "omega": (_gain, _REQUIRED),
        "phase": (_gain, 0.0),
    },
    "arm-sinusoid": {
        "type": (_str, _REQUIRED),
        "amplitude": (_float, 0.3),
        "omega": (_float, math.pi / 5.0),
    },
    "squat": {
        "type": (_str, _REQUIRED),
        "base_height": (_float, _REQUIRED),
        "drop": (_float, 0.12),
        "wobble_amp": (_float, 0.03),
        "wobble_omega": (_float, math.pi),
    },
    "bow": {
        "type": (_str, _REQUIRED),
        "amplitude": (_float, 0.45),
        "peak_time": (_pos, 3.0),
    },
}

_BARRIER_FIELDS = {
    "name": (_str, _REQUIRED),
    "kind": (_str, _REQUIRED),
    "frame": (_str, _REQUIRED),
    "coord": (_int, _REQUIRED),
    "threshold": (_float, _REQUIRED),
    "sign": (_float, 1.0),
    "frame_other": (_opt(_str), None),
    "poles": (_floats, list(sf.DEFAULT_POLES)),
    "slack": (_bool, False),
    "domain": (_opt(_str), None),
    "monitor": (_bool, False),
}

_GAIT_DEF = gt.GaitParams()
_GAIT_FIELDS = {
    "period": (_pos, _GAIT_DEF.period),
    "com_height": (_pos, _REQUIRED),
    "z_apex": (_nonneg, _GAIT_DEF.z_apex),
    "smoothing": (_pos, _GAIT_DEF.smoothing),
    "step_width": (_nonneg, _GAIT_DEF.step_width),
    "v_des": (_float, _GAIT_DEF.v_des),
    "reach": (_pos, _GAIT_DEF.reach),
    "axis": (_int, _GAIT_DEF.axis),
    "gravity": (_pos, _GAIT_DEF.gravity),
    "provider": (_str, "deadbeat"),
    "first_swing": (_str, "left"),
    "left_frame": (_str, "foot_l"),
    "right_frame": (_str, "foot_r"),
    "torso_joint": (_int, 2),
    "task_axes": (_ints, [1, 2]),
    "mu": (_pos, 0.6),
}

_CHECK_FIELDS = {
    "metric": (_str, _REQUIRED),
    "min": (_opt(_float), None),
    "max": (_opt(_float), None),
}

_OUTPUT_FIELDS = {
    "csv": (_opt(_str), None),
    "metrics": (_opt(_str), None),
}


def _norm_reference(ctx, data, path):
    if not isinstance(data, dict):
        ctx.fail(path, "expected a mapping")
    rtype = data.get("type")
    if rtype not in _REFERENCE_FIELDS:
        ctx.fail(f"{path}.type",
                 f"unknown reference type {rtype!r}; have "
                 f"{', '.join(REFERENCE_TYPES)}")
    return _take(ctx, data, path, _REFERENCE_FIELDS[rtype])


def _norm_sim(ctx, data, path):
    out = _take(ctx, data, path, _SIM_FIELDS)
    if out["integrator"] not in sm.INTEGRATORS:
        ctx.fail(f"{path}.integrator",
                 f"unknown integrator {out['integrator']!r}; have "
                 f"{', '.join(sm.INTEGRATORS)}")
    return out


def _norm_contact(ctx, data, path):
    out = _take(ctx, data, path, _CONTACT_FIELDS)
    if out["kind"] not in (ct.POINT_3DOF, ct.SURFACE_6DOF):
        ctx.fail(f"{path}.kind", f"unknown contact kind {out['kind']!r}")
    if out["half_extents"] is not None and len(out["half_extents"]) != 2:
        ctx.fail(f"{path}.half_extents", "expected two numbers")
    return out


def _norm_task(ctx, data, path):
    out = _take(ctx, data, path, _TASK_FIELDS)
    if out["kind"] not in tk.KINDS:
        ctx.fail(f"{path}.kind",
                 f"unknown task kind {out['kind']!r}; have {', '.join(tk.KINDS)}")
    return out


def _norm_barrier(ctx, data, path):
    out = _take(ctx, data, path, _BARRIER_FIELDS)
    if out["kind"] not in sf.BARRIER_KINDS:
        ctx.fail(f"{path}.kind", f"unknown barrier kind {out['kind']!r}")
    return out


def _norm_gait(ctx, data, path):
    out = _take(ctx, data, path, _GAIT_FIELDS)
    if out["provider"] not in gt.PROVIDERS:
        ctx.fail(f"{path}.provider",
                 f"unknown placement provider {out['provider']!r}; have "
                 f"{', '.join(sorted(gt.PROVIDERS))}")
    if out["first_swing"] not in ("left", "right"):
        ctx.fail(f"{path}.first_swing", "expected 'left' or 'right'")
    if out["axis"] not in (0, 1):
        ctx.fail(f"{path}.axis", "walking axis must be 0 or 1")
    return out


def _norm_check(ctx, data, path):
    out = _take(ctx, data, path, _CHECK_FIELDS)
    if out["min"] is None and out["max"] is None:
        ctx.fail(path, "a check needs min, max, or both")
    root = out["metric"].split(".", 1)[0]
    if root not in METRIC_ROOTS:
        ctx.fail(f"{path}.metric",
                 f"unknown metric {out['metric']!r}; roots are "
                 f"{', '.join(METRIC_ROOTS)}")
    return out


_TOP_FIELDS = {
    "schema": (_str, _REQUIRED),
    "name": (_str, _REQUIRED),
    "model": (_str, _REQUIRED),
    "duration": (_pos, _REQUIRED),
    "control_rate": (_pos, 1000.0),
    "q0": (_opt(_floats), None),
    "qd0": (_opt(_floats), None),
    "sim": (_Nested(_norm_sim), {}),
    "controller": (_Nested(lambda c, v, p: _take(c, v, p, _CONTROLLER_FIELDS)),
                   {}),
    "ext_force": (_Nested(lambda c, v, p: _take(c, v, p, _EXT_FORCE_FIELDS)),
                  None),
    "contacts": (_Nested(lambda c, v, p: _norm_list(c, v, p, _norm_contact)),
                 []),
    "tasks": (_Nested(lambda c, v, p: _norm_list(c, v, p, _norm_task)), []),
    "barriers": (_Nested(lambda c, v, p: _norm_list(c, v, p, _norm_barrier)),
                 []),
    "gait": (_Nested(_norm_gait), None),
    "checks": (_Nested(lambda c, v, p: _norm_list(c, v, p, _norm_check)), []),
    "output": (_Nested(lambda c, v, p: _take(c, v, p, _OUTPUT_FIELDS)), {}),
}


def _normalize(ctx: _Ctx, data) -> dict:
    out = _take(ctx, data, "", _TOP_FIELDS)
    if out["schema"] != SCHEMA:
        ctx.fail("schema", f"unsupported schema {out['schema']!r}; "
                           f"this loader reads {SCHEMA!r}")
    tick = 1.0 / out["control_rate"]
    span = out["sim"]["dt"] * out["sim"]["substeps"]
    if abs(span - tick) > 1e-12:
        ctx.fail("sim.dt", f"dt x substeps = {span:g} must tile the control "
                           f"tick {tick:g}")
    if out["gait"] is not None:
        if out["tasks"]:
            ctx.fail("tasks", "a gait scenario supplies its own task stack")
        if out["contacts"]:
            ctx.fail("contacts", "a gait scenario owns its contact schedule")
    for path_key, items, label in (("tasks", out["tasks"], "task"),
                                   ("barriers", out["barriers"], "barrier")):
        names = [it["name"] for it in items]
        for i, n in enumerate(names):
            if n in names[:i]:
                ctx.fail(f"{path_key}[{i}].name", f"duplicate {label} name {n!r}")
    return out


# ---------------------------------------------------------------------------
# the config object


@dataclass(frozen=True)
class ScenarioConfig:
    """A normalized scenario: plain data, equal iff the experiments match."""

    data: dict
    source: str = field(default="<memory>", compare=False)
    base_dir: Path | None = field(default=None, compare=False)
    overrides: tuple = field(default=(), compare=False)

    @property
    def name(self) -> str:
        return self.data["name"]

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=False,
                              default_flow_style=False, width=88)

    def with_overrides(self, pairs) -> "ScenarioConfig":
        """Apply dotted key=value edits and re-validate."""
        data = copy.deepcopy(self.data)
        applied = []
        for item in pairs:
            key, value = item if isinstance(item, tuple) else parse_set(item)
            _assign(data, key, value)
            applied.append((key, value))
        ctx = _Ctx(f"{self.source} (with overrides)", {})
        return ScenarioConfig(data=_normalize(ctx, data), source=self.source,
                              base_dir=self.base_dir,
                              overrides=self.overrides + tuple(applied))

    def load_model(self) -> mb.RobotModel:
        ref = self.data["model"]
        if ref.endswith(".yaml") or "/" in ref:
            base = self.base_dir if self.base_dir is not None else Path.cwd()
            return mb.load_model((base / ref).resolve())
        return mb.load_builtin_model(ref)

    def build(self) -> sm.Scenario:
        """Construct the runnable scenario, checking model references."""
        d = self.data
        model = self.load_model()
        for f in self._used_frames():
            model.frame(f)

        ext = ()
        if d["ext_force"] is not None:
            e = d["ext_force"]
            ext = (sm.ExternalForce(
                frame=e["frame"],
                wrench=(e["fx"], e["fy"], e["fz"], e["tx"], e["ty"], e["tz"]),
                start=e["start"], duration=e["duration"]),)
        sim_cfg = sm.SimConfig(dt=d["sim"]["dt"],
                               integrator=d["sim"]["integrator"],
                               alpha=d["sim"]["alpha"], beta=d["sim"]["beta"],
                               substeps=d["sim"]["substeps"],
                               external_forces=ext)
        options = idqp.ControllerOptions(**d["controller"])
        contacts = tuple(
            ct.ContactSpec(frame=c["frame"], kind=c["kind"], mu=c["mu"],
                           gamma=c["gamma"],
                           half_extents=(tuple(c["half_extents"])
                                         if c["half_extents"] else None))
            for c in d["contacts"])
        tasks = tuple(self._build_task(model, td) for td in d["tasks"])
        barriers, monitors = [], []
        for b in d["barriers"]:
            spec = sf.BarrierSpec(name=b["name"], kind=b["kind"],
                                  frame=b["frame"], coord=b["coord"],
                                  threshold=b["threshold"], sign=b["sign"],
                                  frame_other=b["frame_other"],
                                  poles=tuple(b["poles"]), slack=b["slack"],
                                  domain=b["domain"])
            (monitors if b["monitor"] else barriers).append(spec)
        gait = self._build_gait(model, d["gait"]) if d["gait"] else None
        q0 = self._state_vector(model, "q0")
        qd0 = self._state_vector(model, "qd0")
        return sm.Scenario(name=d["name"], model=model,
                           duration=d["duration"],
                           control_rate=d["control_rate"], tasks=tasks,
                           contacts=contacts, barriers=tuple(barriers),
                           monitors=tuple(monitors), options=options,
                           sim=sim_cfg, gait=gait, q0=q0, qd0=qd0,
                           assertions=tuple(d["checks"]), raw=d)

    def _used_frames(self):
        d = self.data
        out = [c["frame"] for c in d["contacts"]]
        out += [t["frame"] for t in d["tasks"] if t["frame"]]
        for b in d["barriers"]:
            out.append(b["frame"])
            if b["frame_other"]:
                out.append(b["frame_other"])
        if d["ext_force"] is not None:
            out.append(d["ext_force"]["frame"])
        if d["gait"] is not None:
            out += [d["gait"]["left_frame"], d["gait"]["right_frame"]]
        return out

    def _state_vector(self, model, key):
        vals = self.data[key]
        if vals is None:
            return None
        if len(vals) != model.nq:
            raise ScenarioError(f"{self.source}: {key} has {len(vals)} entries, "
                                f"model {model.name!r} has nq = {model.nq}")
        return [float(v) for v in vals]

    def _build_task(self, model, td) -> tk.TaskSpec:
        joints = td["joints"]
        if joints is not None:
            bad = [j for j in joints if not 0 <= j < model.nq]
            if bad:
                raise ScenarioError(
                    f"{self.source}: task {td['name']!r} references joints "
                    f"{bad} outside 0..{model.nq - 1}")
        return tk.TaskSpec(name=td["name"], kind=td["kind"],
                           reference=_make_reference(td["reference"]),
                           frame=td["frame"],
                           joints=tuple(joints) if joints is not None else None,
                           axes=tuple(td["axes"]) if td["axes"] is not None
                           else None,
                           kp=td["kp"], kd=td["kd"], weight=td["weight"])

    def _build_gait(self, model, g) -> gt.GaitScheduler:
        if not 0 <= g["torso_joint"] < model.nq:
            raise ScenarioError(f"{self.source}: gait torso_joint "
                                f"{g['torso_joint']} outside 0..{model.nq - 1}")
        params = gt.GaitParams(period=g["period"], com_height=g["com_height"],
                               z_apex=g["z_apex"], smoothing=g["smoothing"],
                               step_width=g["step_width"], v_des=g["v_des"],
                               reach=g["reach"], axis=g["axis"],
                               gravity=g["gravity"])
        return gt.GaitScheduler(model=model, params=params,
                                left_frame=g["left_frame"],
                                right_frame=g["right_frame"],
                                torso_joint=g["torso_joint"],
                                first_swing=g["first_swing"],
                                provider=g["provider"],
                                task_axes=tuple(g["task_axes"]), mu=g["mu"])


def _make_reference(rd: dict) -> tk.Reference:
    rtype = rd["type"]
    if rtype == "constant":
        return tk.constant_reference(rd["values"])
    if rtype == "sinusoid":
        return tk.sinusoid_reference(rd["offset"], rd["amplitude"],
                                     rd["omega"], rd["phase"])
    if rtype == "arm-sinusoid":
        return tk.arm_sinusoid_reference(rd["amplitude"], rd["omega"])
    if rtype == "squat":
        return tk.squat_reference(rd["base_height"], rd["drop"],
                                  rd["wobble_amp"], rd["wobble_omega"])
    return tk.bow_reference(rd["amplitude"], rd["peak_time"])


# ---------------------------------------------------------------------------
# parse / serialize / overrides


def parse_scenario(text: str, source: str = "<memory>",
                   base_dir: Path | None = None) -> ScenarioConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ScenarioError(f"{where}: invalid YAML: {exc}") from None
    ctx = _Ctx(source, _line_map(text))
    if data is None:
        ctx.fail("", "empty scenario file")
    return ScenarioConfig(data=_normalize(ctx, data), source=source,
                          base_dir=base_dir)


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    return parse_scenario(path.read_text(), source=str(path),
                          base_dir=path.parent)


def serialize_scenario(cfg: ScenarioConfig) -> str:
    return cfg.to_yaml()


def parse_set(item: str):
    """Split one ``key=value`` override; the value parses as YAML."""
    key, sep, raw = item.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ScenarioError(f"override {item!r} must look like key=value")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError:
        value = raw
    return key, value


def _element(seq: list, part: str, dotted: str):
    try:
        idx = int(part)
    except ValueError:
        for el in seq:
            if isinstance(el, dict) and part in (el.get("name"),
                                                 el.get("frame")):
                return el
        raise ScenarioError(f"override {dotted!r}: no list element named "
                            f"{part!r}") from None
    if not -len(seq) <= idx < len(seq):
        raise ScenarioError(f"override {dotted!r}: index {idx} out of range")
    return seq[idx]


def _assign(data: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = data
    for i, part in enumerate(parts[:-1]):
        if isinstance(node, dict):
            if part not in node:
                raise ScenarioError(f"override {dotted!r}: unknown field "
                                    f"{part!r}")
            node = node[part]
        elif isinstance(node, list):
            node = _element(node, part, dotted)
        else:
            raise ScenarioError(f"override {dotted!r}: "
                                f"{'.'.join(parts[:i])} is not set in this "
                                f"scenario")
    leaf = parts[-1]
    if isinstance(node, dict):
        if leaf not in node:
            raise ScenarioError(f"override {dotted!r}: unknown field {leaf!r}")
        node[leaf] = value
    elif isinstance(node, list):
        try:
            idx = int(leaf)
        except ValueError:
            raise ScenarioError(f"override {dotted!r}: list element needs an "
                                f"integer index") from None
        if not -len(node) <= idx < len(node):
            raise ScenarioError(f"override {dotted!r}: index {idx} out of range")
        node[idx] = value
    else:
        raise ScenarioError(f"override {dotted!r}: cannot assign into "
                            f"{type(node).__name__}")


# ---------------------------------------------------------------------------
# shipped scenario files


def builtin_scenario_dir() -> Path:
    return Path(__file__).parent / "scenarios"


def list_builtin_scenarios() -> list:
    return sorted(p.stem for p in builtin_scenario_dir().glob("*.yaml"))


def resolve_scenario(ref: str, extra_dir=None) -> Path:
    """Find a scenario by path, by bare name, or in the extra directory."""
    cand = [Path(ref)]
    if not ref.endswith(".yaml"):
        cand.append(Path(ref + ".yaml"))
    for c in cand:
        if c.is_file():
            return c
    name = Path(ref).stem
    dirs = ([Path(extra_dir)] if extra_dir else []) + [builtin_scenario_dir()]
    for base in dirs:
        p = base / f"{name}.yaml"
        if p.is_file():
            return p
    raise ScenarioError(f"scenario {ref!r} not found (builtins: "
                        f"{', '.join(list_builtin_scenarios()) or 'none'})")
