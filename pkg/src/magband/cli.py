"""Batch front end: ``magband {fiber,dispersion,bands,verify,convergence}``."""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import export
from .convergence import convergence_study
from .discretize import GridError
from .dispersion import MomentumGrid, SweepError, band_edges, solve_fiber, sweep
from .eigensolve import EigensolverError
from .model import (
    DOUBLE_LAYER,
    KINDS,
    NEUMANN_WINDOW,
    ONE_SIDED,
    GeometryConfig,
    PhysicalConfig,
    Width,
    upper_catalog,
)
from .verify import SUITES, run_suite, suite_passed

logger = logging.getLogger("magband")

EXIT_OK, EXIT_COMPUTE, EXIT_CONFIG, EXIT_VERIFY = 0, 1, 2, 3

SCALES = {"pi": math.pi, "1": 1.0}

DEFAULTS = {
    NEUMANN_WINDOW: {"geometry": {"kind": NEUMANN_WINDOW, "d": {"num": 1, "den": 1, "scale": "pi"}, "a": 1.0},
                     "B": 1.0, "resolution": 48 / math.pi},
    DOUBLE_LAYER: {"geometry": {"kind": DOUBLE_LAYER, "d1": {"num": 2, "den": 1, "scale": 1},
                                "d2": {"num": 1, "den": 1, "scale": 1}, "a": 1.0},
                   "B": 1.0, "resolution": 32.0},
    ONE_SIDED: {"geometry": {"kind": ONE_SIDED, "d1": {"num": 3, "den": 5, "scale": "pi"},
                             "d2": {"num": 2, "den": 5, "scale": "pi"}},
                "B": 4.0, "resolution": 48 / math.pi},
}


class ConfigError(ValueError):
    def __init__(self, message, line=None, field_path=None):
        where = f"line {line}: " if line else ""
        super().__init__(f"{where}{field_path + ': ' if field_path else ''}{message}")
        self.line, self.field_path = line, field_path


@dataclass(frozen=True)
class RunConfig:
    geometry: GeometryConfig
    B: float
    levels: int = 6
    p: Optional[tuple] = None  # None: default grid for the geometry
    p_count: int = 41
    tol: float = 1e-10
    max_iter: Optional[int] = None
    resolution: float = 48 / math.pi
    padding: Optional[float] = None
    ladder: Optional[tuple] = None
    out: Optional[str] = None
    svg: Optional[str] = None

    @property
    def physics(self) -> PhysicalConfig:
        return PhysicalConfig(self.B)

    def momentum_grid(self) -> MomentumGrid:
        if self.p is None:
            return MomentumGrid.default(self.geometry, self.physics, self.levels, self.p_count)
        return MomentumGrid(np.array(self.p, dtype=float))

    def to_dict(self) -> dict:
        geo = {"kind": self.geometry.kind}
        for name in ("d", "d1", "d2"):
            w = getattr(self.geometry, name)
            if w is not None:
                geo[name] = width_to_json(w)
        if self.geometry.a is not None:
            geo["a"] = self.geometry.a
        sweep_block = {"levels": self.levels}
        sweep_block["p"] = list(self.p) if self.p is not None else {"default": True, "count": self.p_count}
        solver = {"tol": self.tol, "max_iter": self.max_iter, "resolution": self.resolution,
                  "padding": self.padding}
        if self.ladder is not None:
            solver["ladder"] = list(self.ladder)
        return {"geometry": geo, "physics": {"B": self.B}, "sweep": sweep_block, "solver": solver,
                "output": {"out": self.out, "svg": self.svg}}


def width_to_json(w: Width) -> dict:
    scale = "pi" if w.scale == math.pi else w.scale
    return {"num": int(w.num), "den": int(w.den), "scale": scale}


def _line_of(text: Optional[str], path: tuple) -> Optional[int]:
    """Best-effort source line of a JSON key path."""
    if not text:
        return None
    pos = 0
    for key in path:
        if isinstance(key, int):
            continue
        hit = text.find(f'"{key}"', pos)
        if hit < 0:
            break
        pos = hit
    return text.count("\n", 0, pos) + 1 if pos else None


def _require_number(value, path, text, positive=False, integer=False, allow_zero=True):
    ok = isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
    if ok and integer:
        ok = float(value).is_integer()
    if ok and positive:
        ok = value > 0 or (allow_zero and value == 0)
    if not ok:
        need = "a positive " if positive else "a "
        raise ConfigError(f"expected {need}{'integer' if integer else 'number'}, got {value!r}",
                          _line_of(text, path), ".".join(map(str, path)))
    return int(value) if integer else float(value)


def _parse_width(spec, path, text) -> Width:
    where = ".".join(path)
    line = _line_of(text, path)
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        if spec <= 0:
            raise ConfigError("width must be positive", line, where)
        return Width(int(spec), 1, 1.0) if float(spec).is_integer() else Width(1, 1, float(spec))
    if not isinstance(spec, dict):
        raise ConfigError("width must be a number or {num, den, scale}", line, where)
    unknown = set(spec) - {"num", "den", "scale"}
    if unknown:
        raise ConfigError(f"unknown width keys {sorted(unknown)}", line, where)
    num = spec.get("num")
    den = spec.get("den", 1)
    scale = spec.get("scale", 1.0)
    for key, val in (("num", num), ("den", den)):
        if not isinstance(val, int) or isinstance(val, bool):
            raise ConfigError(f"{key} must be an integer, got {val!r}", _line_of(text, path + (key,)),
                              f"{where}.{key}")
    if den == 0:
        raise ConfigError("den must be nonzero", _line_of(text, path + ("den",)), f"{where}.den")
    if isinstance(scale, str):
        if scale not in SCALES:
            raise ConfigError(f"unknown scale {scale!r} (use a number or 'pi')",
                              _line_of(text, path + ("scale",)), f"{where}.scale")
        scale = SCALES[scale]
    try:
        return Width(num, den, float(scale))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), line, where) from None


def parse_config(data: dict, text: Optional[str] = None, kind: Optional[str] = None) -> RunConfig:
    """Validate a JSON config dict; errors name the field and its line."""
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object", 1)
    allowed = {"geometry", "physics", "sweep", "solver", "output"}
    extra = set(data) - allowed
    if extra:
        key = sorted(extra)[0]
        raise ConfigError(f"unknown block {key!r}", _line_of(text, (key,)), key)
    geo = dict(data.get("geometry") or {})
    kind = geo.get("kind", kind or NEUMANN_WINDOW)
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {', '.join(KINDS)}", _line_of(text, ("geometry", "kind")),
                          "geometry.kind")
    base = DEFAULTS[kind]
    merged = dict(base["geometry"])
    merged.update(geo)
    allowed_geo = {"kind", "a", "d"} if kind == NEUMANN_WINDOW else {"kind", "a", "d1", "d2"}
    if kind == ONE_SIDED:
        allowed_geo.discard("a")
    extra = set(merged) - allowed_geo
    if extra:
        key = sorted(extra)[0]
        raise ConfigError(f"field not valid for kind {kind}", _line_of(text, ("geometry", key)),
                          f"geometry.{key}")
    widths = {name: _parse_width(merged[name], ("geometry", name), text)
              for name in ("d", "d1", "d2") if name in merged}
    try:
        if kind == NEUMANN_WINDOW:
            a = _require_number(merged["a"], ("geometry", "a"), text, positive=True)
            geometry = GeometryConfig.neumann_window(widths["d"], a)
        elif kind == DOUBLE_LAYER:
            a = _require_number(merged["a"], ("geometry", "a"), text, positive=True)
            geometry = GeometryConfig.double_layer(widths["d1"], widths["d2"], a)
        else:
            geometry = GeometryConfig.one_sided(widths["d1"], widths["d2"])
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), _line_of(text, ("geometry",)), "geometry") from None

    phys = data.get("physics") or {}
    B = _require_number(phys.get("B", base["B"]), ("physics", "B"), text, positive=True, allow_zero=False)

    sw = data.get("sweep") or {}
    levels = _require_number(sw.get("levels", 6), ("sweep", "levels"), text, positive=True,
                             integer=True, allow_zero=False)
    p, p_count = None, 41
    pspec = sw.get("p")
    if isinstance(pspec, list):
        p = tuple(_require_number(v, ("sweep", "p"), text) for v in pspec)
        if len(p) == 0 or any(b <= a for a, b in zip(p, p[1:])):
            raise ConfigError("p must be a non-empty strictly increasing list", _line_of(text, ("sweep", "p")),
                              "sweep.p")
    elif isinstance(pspec, dict):
        if pspec.get("default"):
            p_count = _require_number(pspec.get("count", 41), ("sweep", "p", "count"), text,
                                      positive=True, integer=True, allow_zero=False)
        else:
            lo = _require_number(pspec.get("start"), ("sweep", "p", "start"), text)
            hi = _require_number(pspec.get("stop"), ("sweep", "p", "stop"), text)
            n = _require_number(pspec.get("count"), ("sweep", "p", "count"), text, positive=True,
                                integer=True, allow_zero=False)
            if n > 1 and hi <= lo:
                raise ConfigError("stop must exceed start", _line_of(text, ("sweep", "p", "stop")),
                                  "sweep.p.stop")
            p = tuple(float(v) for v in np.linspace(lo, hi, n))
    elif pspec is not None:
        raise ConfigError("p must be a list or {start, stop, count}", _line_of(text, ("sweep", "p")), "sweep.p")

    sv = data.get("solver") or {}
    tol = _require_number(sv.get("tol", 1e-10), ("solver", "tol"), text, positive=True, allow_zero=False)
    if not 1e-14 <= tol <= 1e-6:
        raise ConfigError("tol must lie in [1e-14, 1e-6]", _line_of(text, ("solver", "tol")), "solver.tol")
    max_iter = sv.get("max_iter")
    if max_iter is not None:
        max_iter = _require_number(max_iter, ("solver", "max_iter"), text, positive=True, integer=True,
                                   allow_zero=False)
    res = sv.get("resolution", base["resolution"])
    if isinstance(res, dict):
        per = res.get("per", 1)
        value = _require_number(res.get("value"), ("solver", "resolution", "value"), text, positive=True,
                                allow_zero=False)
        if isinstance(per, str):
            if per not in SCALES:
                raise ConfigError(f"unknown length unit {per!r}", _line_of(text, ("solver", "resolution", "per")),
                                  "solver.resolution.per")
            per = SCALES[per]
        res = value / float(per)
    res = _require_number(res, ("solver", "resolution"), text, positive=True, allow_zero=False)
    padding = sv.get("padding")
    if padding is not None:
        padding = _require_number(padding, ("solver", "padding"), text, positive=True, allow_zero=False)
    ladder = sv.get("ladder")
    if ladder is not None:
        if not isinstance(ladder, list) or len(ladder) < 2:
            raise ConfigError("ladder must be a list of at least two resolutions",
                              _line_of(text, ("solver", "ladder")), "solver.ladder")
        ladder = tuple(_require_number(v, ("solver", "ladder"), text, positive=True, allow_zero=False)
                       for v in ladder)

    out = data.get("output") or {}
    return RunConfig(geometry, B, levels, p, p_count, tol, max_iter, res, padding, ladder,
                     out.get("out"), out.get("svg"))


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return parse_config({})
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, path) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    return parse_config(data, text)


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("MAGBAND_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"MAGBAND_THREADS must be an integer, got {env!r}") from None
    return 1


def _emit(text: str, path: Optional[str]) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(text)


def _write_effective(cfg: RunConfig, path: Optional[str]) -> None:
    if path is not None:
        export.write_json(cfg.to_dict(), f"{path}.config.json")


def _table_csv(table) -> str:
    lines = ["p,k,lambda,residual"]
    lines += [f"{export.fmt(p)},{k},{export.fmt(v)},{export.fmt(r)}" for p, k, v, r in table.rows()]
    return "\n".join(lines) + "\n"


def cmd_fiber(cfg: RunConfig, args) -> int:
    p = args.p if args.p is not None else 0.0
    out = cfg.out
    try:
        fib = solve_fiber(cfg.geometry, cfg.physics, p, cfg.levels, cfg.resolution, cfg.padding, cfg.tol,
                          max_iter=cfg.max_iter)
    except EigensolverError as exc:
        if exc.partial is not None and out:
            export.write_levels_csv(p, exc.partial.values, exc.partial.residuals, out, partial=True)
        logger.error("fiber solve failed: %s", exc)
        return EXIT_COMPUTE
    lines = ["p,k,lambda,residual"]
    lines += [f"{export.fmt(p)},{k},{export.fmt(v)},{export.fmt(r)}"
              for k, (v, r) in enumerate(zip(fib.values, fib.result.residuals), start=1)]
    _emit("\n".join(lines) + "\n", out)
    if args.dump_vectors:
        stem = os.path.splitext(out)[0] if out else "fiber"
        for k in range(1, len(fib.values) + 1):
            export.write_vector_csv(fib, k, f"{stem}_vec{k}.csv")
    _write_effective(cfg, out)
    return EXIT_OK


def _sweep(cfg: RunConfig, args, errors: bool):
    try:
        return sweep(cfg.geometry, cfg.physics, cfg.momentum_grid(), cfg.levels, cfg.resolution,
                     cfg.padding, cfg.tol, error_estimates=errors, n_jobs=_threads(args),
                     max_iter=cfg.max_iter)
    except SweepError as exc:
        if exc.partial is not None and cfg.out:
            _write_partial(exc.partial, cfg.out)
        raise


def _write_partial(partial, path):
    p, values, residuals = partial
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("# partial\n")
        fh.write("p,k,lambda,residual\n")
        for j, q in enumerate(p):
            if np.isnan(values[j]).any():
                continue
            for k, (v, r) in enumerate(zip(values[j], residuals[j]), start=1):
                fh.write(f"{export.fmt(q)},{k},{export.fmt(v)},{export.fmt(r)}\n")


def _catalog(table):
    return upper_catalog(table.geometry, table.physics.B, float(table.values.max()) * 1.2 + 1)


def cmd_dispersion(cfg: RunConfig, args) -> int:
    table = _sweep(cfg, args, errors=False)
    _emit(_table_csv(table), cfg.out)
    if cfg.svg:
        export.write_svg(table, cfg.svg, band_edges(table), _catalog(table))
    _write_effective(cfg, cfg.out)
    return EXIT_OK


def cmd_bands(cfg: RunConfig, args) -> int:
    table = _sweep(cfg, args, errors=True)
    summary = band_edges(table)
    doc = summary.to_dict()
    doc["p"] = table.p.tolist()
    doc["resolution"] = table.resolution
    _emit(export.dumps(doc), cfg.out)
    if cfg.svg:
        export.write_svg(table, cfg.svg, summary, _catalog(table))
    _write_effective(cfg, cfg.out)
    return EXIT_OK


def cmd_verify(cfg: RunConfig, args) -> int:
    records = run_suite(suite=args.suite, n_jobs=_threads(args), ladder=cfg.ladder)
    report = [r.to_dict() for r in records]
    _emit(export.dumps(report), cfg.out)
    for r in records:
        logger.info("%-34s %-12s margin=%.3e err=%.3e", r.check_id, r.verdict, r.margin, r.error)
    return EXIT_OK if suite_passed(records) else EXIT_VERIFY


def cmd_convergence(cfg: RunConfig, args) -> int:
    ladder = cfg.ladder or (cfg.resolution, 2 * cfg.resolution, 4 * cfg.resolution)
    p = args.p if args.p is not None else 0.0
    study = convergence_study(cfg.geometry, cfg.physics, p, cfg.levels, ladder, cfg.padding, cfg.tol)
    doc = study.to_dict()
    doc["p"] = p
    _emit(export.dumps(doc), cfg.out)
    _write_effective(cfg, cfg.out)
    return EXIT_OK


COMMANDS = {"fiber": cmd_fiber, "dispersion": cmd_dispersion, "bands": cmd_bands,
            "verify": cmd_verify, "convergence": cmd_convergence}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="magband", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", help="output file (default: stdout)")
        sp.add_argument("--threads", type=int, help="worker threads (env MAGBAND_THREADS)")
        sp.add_argument("--levels", type=int, help="number of eigenvalues K")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name in ("fiber", "convergence"):
            sp.add_argument("--p", type=float, help="momentum (default 0)")
        if name == "fiber":
            sp.add_argument("--dump-vectors", action="store_true", help="write eigenvector grids")
        if name in ("dispersion", "bands"):
            sp.add_argument("--svg", help="band diagram output")
        if name == "verify":
            sp.add_argument("--suite", default="all", choices=SUITES)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        changes = {}
        if args.levels is not None:
            if args.levels < 1:
                raise ConfigError("--levels must be >= 1", None, "levels")
            changes["levels"] = args.levels
        if args.out is not None:
            changes["out"] = args.out
        if getattr(args, "svg", None) is not None:
            changes["svg"] = args.svg
        cfg = replace(cfg, **changes)
        _threads(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg, args)
    except (GridError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EigensolverError, SweepError, RuntimeError) as exc:
        print(f"computation failed: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
