"""Command-line front end: JSON config in, JSON report and CSV dumps out.

Exit codes: 0 all checks pass, 1 engine failure or failed check, 2 bad config.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from . import __version__
from .catalog import eps_from_spec, from_spec
from .cover import CoverConfig
from .errors import EngineError
from .negligibility import build_extraction, clearance, extract, extract_inverse
from .pipeline import (
    ApproxHandle,
    build_psi,
    eval_psi,
    max_centers_from_env,
    sample_ball,
    separate,
    support_function,
    verify,
)
from .pou import RootConfig
from .regions import BallRegion, OutsideBall, disjoint_balls
from .smooth import central_difference
from .space import Ball, IndexAllocator, SparseVec

log = logging.getLogger("nocrit")

COMMANDS = ("approximate", "remove-compact", "separate", "support", "verify")
SCHEMA_VERSION = 1

_point = {"type": "array", "items": {"type": "number"}, "minItems": 1, "maxItems": 16}
_ball = {
    "type": "object",
    "properties": {"center": _point, "radius": {"type": "number", "exclusiveMinimum": 0, "maximum": 100}},
    "required": ["center", "radius"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "command": {"enum": list(COMMANDS)},
        "function": {
            "type": "object",
            "properties": {
                "id": {"enum": ["constant", "linear", "quadratic", "oscillatory", "custom"]},
                "c": {},
                "a": _point,
                "b0": {"type": "number"},
                "b": _point,
                "q": _point,
            },
            "required": ["id"],
            "additionalProperties": False,
        },
        "eps": {
            "oneOf": [
                {"type": "number", "exclusiveMinimum": 0},
                {
                    "type": "object",
                    "properties": {
                        "id": {"const": "affine_norm"},
                        "scale": {"type": "number", "exclusiveMinimum": 0},
                        "offset": {"type": "number", "exclusiveMinimum": 0},
                    },
                    "required": ["id"],
                    "additionalProperties": False,
                },
            ]
        },
        "region": _ball,
        "ambient_dim": {"type": "integer", "minimum": 1, "maximum": 16},
        "seed": {"type": "integer"},
        "samples": {"type": "integer", "minimum": 1, "maximum": 1000000},
        "tolerances": {
            "type": "object",
            "properties": {
                "max_centers": {"type": "integer", "minimum": 1},
                "grid_factor": {"type": "number", "exclusiveMinimum": 0},
                "gap": {"type": "number", "exclusiveMinimum": 0},
                "newton_tol": {"type": "number", "exclusiveMinimum": 0},
                "grad_tol": {"type": "number", "exclusiveMinimum": 0},
                "max_seeds": {"type": "integer", "minimum": 1},
                "slack": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "compact": {"type": "array", "items": _point, "minItems": 1},
        "open_ball": _ball,
        "nets": {
            "type": "object",
            "properties": {
                "c1": {"type": "array", "items": _point, "minItems": 1},
                "c2": {"type": "array", "items": _point, "minItems": 1},
            },
            "required": ["c1", "c2"],
            "additionalProperties": False,
        },
        "open_set": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["ball", "balls", "outside_ball"]},
                "centers": {"type": "array", "items": _point, "minItems": 1},
                "radii": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
            },
            "required": ["kind", "centers", "radii"],
            "additionalProperties": False,
        },
        "floor": {"type": "number", "exclusiveMinimum": 0},
        "plot": {
            "type": "object",
            "properties": {
                "axes": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1, "maxItems": 2},
                "resolution": {"type": "integer", "minimum": 2, "maximum": 1001},
            },
            "additionalProperties": False,
        },
        "outputs": {
            "type": "object",
            "properties": {"report": {"type": "string"}, "samples": {"type": "string"}, "plot": {"type": "string"}},
            "additionalProperties": False,
        },
    },
    "required": ["schema_version", "command", "region", "ambient_dim"],
    "additionalProperties": False,
}

REPORT_SCHEMA = {
    "type": "object",
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "engine_version": {"type": "string"},
        "command": {"enum": list(COMMANDS)},
        "config": {"type": "object"},
        "verification": {"type": "object"},
        "timings": {"type": "object"},
        "pass": {"type": "boolean"},
    },
    "required": ["schema_version", "engine_version", "command", "config", "verification", "timings", "pass"],
    "additionalProperties": False,
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    raw: dict
    region: Ball
    ambient_dim: int
    seed: int = 0
    samples: int = 2000
    out: Path = field(default_factory=lambda: Path("."))

    def vec(self, coords) -> SparseVec:
        if len(coords) > self.ambient_dim:
            raise ConfigError(f"point {coords} has more than ambient_dim={self.ambient_dim} coordinates")
        return SparseVec.from_dense(coords)

    @property
    def tolerances(self) -> dict:
        return self.raw.get("tolerances", {})

    def output(self, key: str, default: str) -> Path:
        return self.out / self.raw.get("outputs", {}).get(key, default)


def load_config(raw: dict, seed: Optional[int] = None, samples: Optional[int] = None, out: Optional[str] = None, command: Optional[str] = None) -> RunConfig:
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        raise ConfigError(f"config: {e.message} at {list(e.absolute_path)}") from None
    raw = dict(raw)
    if command is not None:
        if raw["command"] != command:
            log.info("command line overrides config command %s -> %s", raw["command"], command)
        raw["command"] = command
    d = raw["ambient_dim"]
    if len(raw["region"]["center"]) > d:
        raise ConfigError("region center has more coordinates than ambient_dim")
    cmd = raw["command"]
    need = {
        "approximate": ["function", "eps"],
        "verify": ["function", "eps"],
        "remove-compact": ["compact", "open_ball"],
        "separate": ["nets"],
        "support": ["open_set", "floor"],
    }[cmd]
    missing = [k for k in need if k not in raw]
    if missing:
        raise ConfigError(f"command {cmd!r} needs {missing}")
    if seed is not None:
        raw["seed"] = seed
    if samples is not None:
        raw["samples"] = samples
    cfg = RunConfig(
        command=cmd,
        raw=raw,
        region=Ball(SparseVec.from_dense(raw["region"]["center"]), float(raw["region"]["radius"])),
        ambient_dim=d,
        seed=int(raw.get("seed", 0)),
        samples=int(raw.get("samples", 2000)),
        out=Path(out) if out else Path("."),
    )
    return cfg


def _cover_config(cfg: RunConfig, default_max: Optional[int] = None) -> CoverConfig:
    t = cfg.tolerances
    kw = {"max_centers": t.get("max_centers", default_max or max_centers_from_env())}
    if "grid_factor" in t:
        kw["grid_factor"] = t["grid_factor"]
    if "gap" in t:
        kw["gap"] = t["gap"]
    return CoverConfig(**kw)


def _root_config(cfg: RunConfig) -> RootConfig:
    t = cfg.tolerances
    kw = {k: t[k] for k in ("newton_tol", "grad_tol", "max_seeds") if k in t}
    return RootConfig(**kw)


def _fmt(v) -> str:
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _psi_row(h: ApproxHandle, p, evaluate=None):
    x = SparseVec.from_dense(p)
    fx = h.f(x)
    try:
        phi = h.partition.phi_jet(x).value
        j = (evaluate or (lambda z: eval_psi(h, z)))(x)
        return list(p) + [fx, phi, j.value, j.gradient.norm()]
    except EngineError:
        return list(p) + [fx, None, None, None]


def emit_plot_data(h: ApproxHandle, path: Path, axes=(1, 2), resolution: int = 51, evaluate=None) -> int:
    """Grid slice of ``f, phi, psi, |grad psi|`` through the region center.

    Rows outside the region carry ``nan`` in the engine columns. Returns the row count.
    """
    d = h.ambient_dim
    axes = tuple(axes)
    if any(a < 1 or a > d for a in axes) or len(set(axes)) != len(axes):
        raise ConfigError(f"bad plot axes {axes} for ambient_dim={d}")
    if len(axes) == 2 and d < 2:
        raise ConfigError("two-axis slice needs ambient_dim >= 2")
    c = h.region.center.to_dense(range(1, d + 1))
    R = h.region.radius
    ticks = np.linspace(-R, R, resolution)
    rows = []
    grids = [ticks] * len(axes)
    for combo in np.array(np.meshgrid(*grids, indexing="ij")).reshape(len(axes), -1).T:
        p = c.copy()
        for a, v in zip(axes, combo):
            p[a - 1] += v
        if np.linalg.norm(p - c) < R:
            rows.append(_psi_row(h, p, evaluate))
        else:
            rows.append(list(p) + [h.f(SparseVec.from_dense(p)), None, None, None])
    header = [f"x{i}" for i in range(1, d + 1)] + ["f", "phi", "psi", "grad_norm"]
    _write_csv(path, header, rows)
    return len(rows)


def _gradient_probes(h: ApproxHandle, count: int, rng) -> float:
    """Worst relative gap between the analytic gradient of psi and central differences."""
    pts = sample_ball(Ball(h.region.center, 0.95 * h.region.radius), h.ambient_dim, count, rng)
    worst = 0.0
    for p in pts:
        x = SparseVec.from_dense(p)
        v = SparseVec.from_dense(rng.normal(size=h.ambient_dim))
        v = v / v.norm()
        g = eval_psi(h, x).gradient.dot(v)
        step = 1e-6 * h.region.radius
        try:
            fd = central_difference(lambda z: eval_psi(h, z).value, x, v, step=step)
        except EngineError:
            continue
        worst = max(worst, abs(fd - g) / max(1.0, abs(g)))
    return worst


# ---------------------------------------------------------------------------
# commands


def _run_approximate(cfg: RunConfig, timings: dict) -> tuple:
    fn = from_spec(cfg.raw["function"], cfg.ambient_dim)
    eps = eps_from_spec(cfg.raw["eps"])
    t0 = time.perf_counter()
    h = build_psi(fn, eps, cfg.region, cfg.ambient_dim, cover=_cover_config(cfg), roots=_root_config(cfg))
    timings["build"] = time.perf_counter() - t0
    timings.update({f"build.{k}": v for k, v in h.timings.items()})
    t0 = time.perf_counter()
    rep = verify(h, cfg.samples, cfg.seed, cfg.tolerances.get("slack", 1e-6))
    timings["verify"] = time.perf_counter() - t0
    out = rep.to_dict()
    ok = rep.all_pass
    if cfg.command == "verify":
        t0 = time.perf_counter()
        rng = np.random.default_rng(cfg.seed + 1)
        gap = _gradient_probes(h, min(100, cfg.samples), rng)
        out["gradient_fd_max"] = gap
        out["passes"]["gradient_fd"] = gap <= 1e-5
        ok = ok and gap <= 1e-5
        timings["gradient_probes"] = time.perf_counter() - t0
    rng = np.random.default_rng(cfg.seed)
    pts = sample_ball(cfg.region, cfg.ambient_dim, min(cfg.samples, 2000), rng)
    _write_csv(
        cfg.output("samples", "samples.csv"),
        [f"x{i}" for i in range(1, cfg.ambient_dim + 1)] + ["f", "phi", "psi", "grad_norm"],
        [_psi_row(h, p) for p in pts],
    )
    _plot(cfg, h)
    out["all_pass"] = ok
    return out, ok


def _plot(cfg: RunConfig, h: ApproxHandle, evaluate=None):
    spec = cfg.raw.get("plot", {})
    axes = spec.get("axes", [1, 2] if cfg.ambient_dim >= 2 else [1])
    emit_plot_data(h, cfg.output("plot", "plot.csv"), axes, spec.get("resolution", 51), evaluate)


def _run_remove_compact(cfg: RunConfig, timings: dict) -> tuple:
    pts = [cfg.vec(p) for p in cfg.raw["compact"]]
    ob = cfg.raw["open_ball"]
    U = BallRegion(cfg.vec(ob["center"]), float(ob["radius"]))
    t0 = time.perf_counter()
    ed = build_extraction(pts, U, IndexAllocator(cfg.ambient_dim + 1))
    timings["build"] = time.perf_counter() - t0
    rng = np.random.default_rng(cfg.seed)
    t0 = time.perf_counter()
    samples = sample_ball(cfg.region, cfg.ambient_dim, cfg.samples, rng)
    id_viol, id_n, clear, rt, rt_n = 0, 0, math.inf, 0.0, 0
    rows = []
    for p in samples:
        x = SparseVec.from_dense(p)
        hx = extract(ed, x)
        shift = (hx - x).norm()
        c = clearance(ed, hx)
        clear = min(clear, c)
        if not U.contains(x):
            id_n += 1
            id_viol += shift > 1e-9
        elif rt_n < 100:
            rt = max(rt, (extract_inverse(ed, hx) - x).norm())
            rt_n += 1
        rows.append(list(p) + [shift, c])
    for z in pts:
        hz = extract(ed, z)
        clear = min(clear, clearance(ed, hz))
        rt = max(rt, (extract_inverse(ed, hz) - z).norm())
        rt_n += 1
    timings["verify"] = time.perf_counter() - t0
    _write_csv(cfg.output("samples", "samples.csv"), [f"x{i}" for i in range(1, cfg.ambient_dim + 1)] + ["shift", "clearance"], rows)
    passes = {"identity_outside": id_viol == 0, "clearance": clear > 0, "roundtrip": rt <= 1e-8}
    out = {
        "identity_violations": int(id_viol),
        "identity_checked": id_n,
        "min_clearance": clear,
        "roundtrip_max": rt,
        "roundtrip_checked": rt_n,
        "push_radii": list(ed.push.radii),
        "passes": passes,
    }
    ok = all(passes.values())
    out["all_pass"] = ok
    return out, ok


def _run_separate(cfg: RunConfig, timings: dict) -> tuple:
    c1 = [cfg.vec(p) for p in cfg.raw["nets"]["c1"]]
    c2 = [cfg.vec(p) for p in cfg.raw["nets"]["c2"]]
    t0 = time.perf_counter()
    h, level = separate(c1, c2, cfg.region, cfg.ambient_dim, cover=_cover_config(cfg), roots=_root_config(cfg))
    timings["build"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    rows = []
    sign_ok = True
    for lab, net, want in (("c1", c1, -1), ("c2", c2, 1)):
        for z in net:
            j = eval_psi(h, z)
            good = (j.value - level) * want > 0
            sign_ok &= bool(good)
            rows.append([lab] + list(z.to_dense(range(1, cfg.ambient_dim + 1))) + [j.value, j.gradient.norm(), int(good)])
    # level crossings along segments between the nets
    level_grad = math.inf
    crossings = 0
    for a in c1:
        for b in c2:
            ts = np.linspace(0.0, 1.0, 201)
            vals = [eval_psi(h, a + (b - a) * float(t)).value - level for t in ts]
            for k in range(len(ts) - 1):
                if vals[k] * vals[k + 1] < 0:
                    lo, hi = ts[k], ts[k + 1]
                    for _ in range(50):
                        mid = 0.5 * (lo + hi)
                        if (eval_psi(h, a + (b - a) * mid).value - level) * vals[k] > 0:
                            lo = mid
                        else:
                            hi = mid
                    x = a + (b - a) * (0.5 * (lo + hi))
                    j = eval_psi(h, x)
                    level_grad = min(level_grad, j.gradient.norm())
                    crossings += 1
                    rows.append(["level"] + list(x.to_dense(range(1, cfg.ambient_dim + 1))) + [j.value, j.gradient.norm(), int(j.gradient.norm() > 0)])
    rep = verify(h, cfg.samples, cfg.seed)
    timings["verify"] = time.perf_counter() - t0
    _write_rows(cfg.output("samples", "samples.csv"), cfg.ambient_dim, rows)
    _plot(cfg, h)
    passes = dict(rep.passes)
    passes["sign_contract"] = sign_ok
    passes["level_gradient"] = crossings > 0 and level_grad > 0
    out = rep.to_dict()
    out.update({"level": level, "level_crossings": crossings, "min_level_gradient": level_grad, "passes": passes})
    ok = all(passes.values())
    out["all_pass"] = ok
    return out, ok


def _write_rows(path: Path, d: int, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["set"] + [f"x{i}" for i in range(1, d + 1)] + ["psi", "grad_norm", "ok"])
        for r in rows:
            w.writerow([r[0]] + [_fmt(v) for v in r[1:-1]] + [str(r[-1])])


def _open_set(cfg: RunConfig):
    spec = cfg.raw["open_set"]
    cs = [cfg.vec(c) for c in spec["centers"]]
    rs = [float(r) for r in spec["radii"]]
    if len(cs) != len(rs):
        raise ConfigError("open_set needs one radius per center")
    if spec["kind"] == "ball":
        if len(cs) != 1:
            raise ConfigError("kind 'ball' takes a single center")
        return BallRegion(cs[0], rs[0])
    if spec["kind"] == "outside_ball":
        if len(cs) != 1:
            raise ConfigError("kind 'outside_ball' takes a single center")
        return OutsideBall(cs[0], rs[0])
    try:
        return disjoint_balls(cs, rs)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _run_support(cfg: RunConfig, timings: dict) -> tuple:
    U = _open_set(cfg)
    floor = float(cfg.raw["floor"])
    t0 = time.perf_counter()
    sh = support_function(U, cfg.region, cfg.ambient_dim, floor, max_centers=cfg.tolerances.get("max_centers", 200), roots=_root_config(cfg))
    timings["build"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    pts = sample_ball(cfg.region, cfg.ambient_dim, cfg.samples, rng)
    lo_ratio, hi_ratio, min_g, zero_off, n_in, n_out = math.inf, 0.0, math.inf, 0, 0, 0
    rows = []
    for p in pts:
        x = SparseVec.from_dense(p)
        dep = U.depth(x)
        if dep < 0:
            j = sh.eval(x)
            n_out += 1
            zero_off += j.value != 0.0
            rows.append(list(p) + [dep, j.value, j.gradient.norm()])
        elif dep >= floor:
            j = sh.eval(x)
            n_in += 1
            lo_ratio = min(lo_ratio, j.value / dep)
            hi_ratio = max(hi_ratio, j.value / dep)
            min_g = min(min_g, j.gradient.norm())
            rows.append(list(p) + [dep, j.value, j.gradient.norm()])
    timings["verify"] = time.perf_counter() - t0
    _write_csv(cfg.output("samples", "samples.csv"), [f"x{i}" for i in range(1, cfg.ambient_dim + 1)] + ["depth", "psi", "grad_norm"], rows)
    _plot(cfg, sh.handle, evaluate=sh.eval)
    passes = {
        "lower_bound": n_in > 0 and lo_ratio >= 1.0 - 1e-9,
        "upper_bound": hi_ratio <= 3.0 + 1e-9,
        "zero_off_closure": zero_off == 0,
        "no_critical_points": min_g > 0,
    }
    out = {
        "inside_samples": n_in,
        "outside_samples": n_out,
        "min_psi_over_eps": lo_ratio,
        "max_psi_over_eps": hi_ratio,
        "min_gradient_norm": min_g,
        "nonzero_outside": int(zero_off),
        "floor": floor,
        "centers": len(sh.handle.partition.atlas),
        "passes": passes,
    }
    ok = all(passes.values())
    out["all_pass"] = ok
    return out, ok


_DISPATCH = {
    "approximate": _run_approximate,
    "verify": _run_approximate,
    "remove-compact": _run_remove_compact,
    "separate": _run_separate,
    "support": _run_support,
}


def run(cfg: RunConfig) -> dict:
    """Execute one command; writes the report and CSV files, returns the report."""
    timings: dict = {}
    verification, ok = _DISPATCH[cfg.command](cfg, timings)
    report = {
        "schema_version": SCHEMA_VERSION,
        "engine_version": __version__,
        "command": cfg.command,
        "config": cfg.raw,
        "verification": _jsonable(verification),
        "timings": timings,
        "pass": bool(ok),
    }
    jsonschema.validate(report, REPORT_SCHEMA)
    path = cfg.output("report", "report.json")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True))
    return report


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer, np.bool_)):
        return obj.item()
    return obj


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="nocrit", description="Smooth approximation without critical points.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", default=None, help="output directory (default: current)")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--samples", type=int, default=None)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        raw = json.loads(Path(args.config).read_text())
        cfg = load_config(raw, args.seed, args.samples, args.out, args.command)
    except (OSError, json.JSONDecodeError, ConfigError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    try:
        report = run(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except EngineError as e:
        print(f"engine failure in stage {e.stage!r}: {e}", file=sys.stderr)
        return 1
    status = "PASS" if report["pass"] else "FAIL"
    print(f"{cfg.command}: {status}")
    for k, v in report["verification"].get("passes", {}).items():
        print(f"  {k}: {'ok' if v else 'FAILED'}")
    return 0 if report["pass"] else 1


if __name__ == "__main__":
    sys.exit(main())
