"""Command-line front end: config parsing, orchestration, CSV emission.

Config files are INI-style ``key = value`` text with one ``[system:NAME]``
section per system plus optional ``[run]`` and ``[estimator]`` sections; all
keys default sensibly and the resolved configuration is echoed into the
output directory. Every random draw derives from the single ``seed`` key, so
reruns (and any ``--jobs`` setting) reproduce byte-identical CSVs.

Exit codes: 0 success, 1 row failures, 2 configuration or usage errors.
Output is plain text (no color), so ``NO_COLOR`` is honored trivially.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .cocycle import hierarchy_indices, lyapunov_spectrum
from .domination import certify_domination
from .entropy import counting_entropy, partition_conditional_entropy, volume_entropy
from .errors import (
    ConfigError,
    ConfigParseError,
    ConfigValidationError,
    FoliationLabError,
    LevelOutOfRangeError,
)
from .leaf import affine_leaf_patch, grow_unstable_patch, patch_rows
from .seeding import spawn_rng
from .systems import TorusPoint, make_linear_system, make_perturbed_system
from .verify import run_catalog

METHODS = ("volume", "separated", "spanning", "partition")


@dataclass(frozen=True)
class SystemSpec:
    """Declarative description of one catalog system."""

    name: str
    matrix: tuple[tuple[int, ...], ...]
    kind: str = "linear"
    amplitude: float = 0.0


_CAT = ((2, 1), (1, 1))
_BLOCK4D = ((5, 3, 0, 0), (3, 2, 0, 0), (0, 0, 2, 1), (0, 0, 1, 1))

DEFAULT_SYSTEMS = (
    SystemSpec("cat", _CAT, "linear", 0.0),
    SystemSpec("block4d", _BLOCK4D, "linear", 0.0),
    SystemSpec("pcat05", _CAT, "perturbed", 0.05),
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment parameters; every field has a documented default."""

    systems: tuple[SystemSpec, ...] = DEFAULT_SYSTEMS
    levels: tuple[int, ...] | str = "all"
    epsilon_grid: tuple[float, ...] = (0.1, 0.05, 0.025)
    n_min: int = 2
    n_max: int = 12
    samples: int = 8
    radius: float = 0.3
    c_max: float = 1.0
    mesh: float = 0.05
    spectrum_steps: int = 20_000
    transient: int = 1_000
    iterations: int = 30
    seed: int = 2026
    out_dir: str = "out"
    jobs: int = 1
    methods: tuple[str, ...] = ("volume",)
    ruelle_margin: float = 0.05
    pesin_rtol: float = 0.10

    def resolved_text(self) -> str:
        lines = ["[run]"]
        lines.append(f"seed = {self.seed}")
        levels = self.levels if isinstance(self.levels, str) else " ".join(
            str(v) for v in self.levels
        )
        lines.append(f"levels = {levels}")
        lines.append(f"out = {self.out_dir}")
        lines.append(f"jobs = {self.jobs}")
        lines.append(f"methods = {' '.join(self.methods)}")
        lines.append("")
        lines.append("[estimator]")
        lines.append(f"epsilon_grid = {' '.join(f'{e:g}' for e in self.epsilon_grid)}")
        lines.append(f"n_min = {self.n_min}")
        lines.append(f"n_max = {self.n_max}")
        lines.append(f"samples = {self.samples}")
        lines.append(f"radius = {self.radius:g}")
        lines.append(f"c_max = {self.c_max:g}")
        lines.append(f"mesh = {self.mesh:g}")
        lines.append(f"steps = {self.spectrum_steps}")
        lines.append(f"transient = {self.transient}")
        lines.append(f"iterations = {self.iterations}")
        lines.append(f"ruelle_margin = {self.ruelle_margin:g}")
        lines.append(f"pesin_rtol = {self.pesin_rtol:g}")
        for spec in self.systems:
            lines.append("")
            lines.append(f"[system:{spec.name}]")
            rows = "; ".join(" ".join(str(v) for v in row) for row in spec.matrix)
            lines.append(f"matrix = {rows}")
            lines.append(f"kind = {spec.kind}")
            if spec.kind == "perturbed":
                lines.append(f"amplitude = {spec.amplitude:g}")
        return "\n".join(lines) + "\n"


def _parse_matrix(text: str, key: str) -> tuple[tuple[int, ...], ...]:
    rows = []
    for chunk in text.split(";"):
        entries = chunk.split()
        if not entries:
            raise ConfigValidationError(key, "empty matrix row")
        try:
            rows.append(tuple(int(v) for v in entries))
        except ValueError:
            raise ConfigValidationError(key, f"non-integer matrix entry in {chunk!r}")
    if any(len(r) != len(rows) for r in rows):
        raise ConfigValidationError(key, "matrix must be square")
    det = round(float(np.linalg.det(np.array(rows, dtype=float))))
    if abs(det) != 1:
        raise ConfigValidationError(key, "matrix not unimodular")
    return tuple(rows)


def _get(parser, section, key, cast, default, validate=None):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key)
    try:
        value = cast(raw)
    except ValueError:
        raise ConfigValidationError(f"{section}.{key}", f"cannot parse {raw!r}")
    if validate is not None:
        validate(value, f"{section}.{key}")
    return value


def _positive(value, key):
    if value <= 0:
        raise ConfigValidationError(key, "must be positive")


def parse_config(path) -> ExperimentConfig:
    """Parse and validate an experiment config file, filling defaults."""
    path = Path(path)
    if not path.exists():
        raise ConfigParseError(f"config file {path} does not exist")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read_string(path.read_text(), source=str(path))
    except configparser.ParsingError as err:
        raise ConfigParseError(str(err))
    except configparser.Error as err:
        line = getattr(err, "lineno", "?")
        raise ConfigParseError(f"{path}:{line}: {err}")

    cfg = ExperimentConfig()

    def floats(raw):
        return tuple(float(v) for v in raw.replace(",", " ").split())

    if parser.has_section("estimator"):
        grid = _get(parser, "estimator", "epsilon_grid", floats, cfg.epsilon_grid)
        if any(b >= a for a, b in zip(grid[:-1], grid[1:])):
            raise ConfigValidationError("estimator.epsilon_grid", "epsilon grid must descend")
        cfg = replace(
            cfg,
            epsilon_grid=grid,
            n_min=_get(parser, "estimator", "n_min", int, cfg.n_min, _positive),
            n_max=_get(parser, "estimator", "n_max", int, cfg.n_max, _positive),
            samples=_get(parser, "estimator", "samples", int, cfg.samples, _positive),
            radius=_get(parser, "estimator", "radius", float, cfg.radius, _positive),
            c_max=_get(parser, "estimator", "c_max", float, cfg.c_max, _positive),
            mesh=_get(parser, "estimator", "mesh", float, cfg.mesh, _positive),
            spectrum_steps=_get(parser, "estimator", "steps", int, cfg.spectrum_steps, _positive),
            transient=_get(parser, "estimator", "transient", int, cfg.transient),
            iterations=_get(parser, "estimator", "iterations", int, cfg.iterations, _positive),
            ruelle_margin=_get(parser, "estimator", "ruelle_margin", float, cfg.ruelle_margin),
            pesin_rtol=_get(parser, "estimator", "pesin_rtol", float, cfg.pesin_rtol),
        )
        if cfg.n_min >= cfg.n_max:
            raise ConfigValidationError("estimator.n_min", "n_min must be below n_max")
        if max(cfg.epsilon_grid) >= cfg.radius:
            raise ConfigValidationError(
                "estimator.epsilon_grid", "epsilons must stay below the patch radius"
            )

    if parser.has_section("run"):
        def levels_cast(raw):
            raw = raw.strip()
            if raw == "all":
                return "all"
            values = tuple(int(v) for v in raw.replace(",", " ").split())
            if any(v < 1 for v in values):
                raise ValueError("levels must be >= 1")
            return values

        methods_raw = _get(parser, "run", "methods", str, " ".join(cfg.methods))
        methods = tuple(methods_raw.replace(",", " ").split())
        for m in methods:
            if m not in METHODS:
                raise ConfigValidationError("run.methods", f"unknown method {m!r}")
        cfg = replace(
            cfg,
            seed=_get(parser, "run", "seed", int, cfg.seed),
            levels=_get(parser, "run", "levels", levels_cast, cfg.levels),
            out_dir=_get(parser, "run", "out", str, cfg.out_dir),
            jobs=_get(parser, "run", "jobs", int, cfg.jobs, _positive),
            methods=methods,
        )

    systems = []
    for section in parser.sections():
        if not section.startswith("system:"):
            if section in ("run", "estimator"):
                continue
            raise ConfigValidationError(section, "unknown section")
        name = section.split(":", 1)[1].strip()
        if not name:
            raise ConfigValidationError(section, "system name is empty")
        if not parser.has_option(section, "matrix"):
            raise ConfigValidationError(f"{section}.matrix", "matrix is required")
        matrix = _parse_matrix(parser.get(section, "matrix"), f"{section}.matrix")
        kind = _get(parser, section, "kind", str, "linear")
        if kind not in ("linear", "perturbed"):
            raise ConfigValidationError(f"{section}.kind", f"unknown kind {kind!r}")
        amplitude = _get(parser, section, "amplitude", float, 0.0)
        if kind == "linear" and amplitude != 0.0:
            raise ConfigValidationError(
                f"{section}.amplitude", "linear systems must have amplitude 0"
            )
        systems.append(SystemSpec(name, matrix, kind, amplitude))
    if systems:
        cfg = replace(cfg, systems=tuple(systems))
    return cfg


def build_system(spec: SystemSpec):
    if spec.kind == "linear":
        return make_linear_system(np.array(spec.matrix))
    return make_perturbed_system(np.array(spec.matrix), spec.amplitude)


def resolve_levels(levels, spectrum) -> tuple[int, ...]:
    if levels == "all":
        if spectrum.positive_count == 0:
            raise LevelOutOfRangeError("system has no unstable directions")
        return tuple(range(1, spectrum.positive_count + 1))
    for level in levels:
        hierarchy_indices(spectrum, level)
    return tuple(levels)


def quick_hierarchy_depth(system) -> int:
    """Cheap hierarchy depth used to validate levels before heavy work."""
    if system.is_linear:
        moduli = np.sort(np.abs(np.linalg.eigvals(system.matrix.astype(float))))[::-1]
        exps = np.log(moduli)
        count = 0
        last = None
        for e in exps:
            if e <= 0:
                break
            if last is None or last - e > 1e-9:
                count += 1
            last = e
        return count
    return lyapunov_spectrum(
        system, steps=2_000, transient=200, seed=0
    ).positive_count


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def _write_csv(path: Path, header: str, rows) -> None:
    lines = [header]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _prepare_out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved.cfg").write_text(cfg.resolved_text())
    return out


def _select_systems(cfg: ExperimentConfig, name: str | None):
    if name is None:
        return cfg.systems
    for spec in cfg.systems:
        if spec.name == name:
            return (spec,)
    raise ConfigValidationError("system", f"unknown system {name!r}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _load_config(args) -> ExperimentConfig:
    cfg = parse_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "out", None) is not None:
        cfg = replace(cfg, out_dir=args.out)
    if getattr(args, "jobs", None) is not None:
        cfg = replace(cfg, jobs=args.jobs)
    return cfg


def cmd_spectrum(args) -> int:
    cfg = _load_config(args)
    out = _prepare_out(cfg)
    for spec in _select_systems(cfg, args.system):
        system = build_system(spec)
        steps = args.steps if args.steps else cfg.spectrum_steps
        spectrum = lyapunov_spectrum(
            system,
            steps=steps,
            transient=cfg.transient,
            seed=int(spawn_rng(cfg.seed, "system", spec.name).integers(2**32)),
        )
        rows = [(v, m) for v, m in spectrum.exponents]
        _write_csv(out / f"spectrum_{spec.name}.csv", "lambda,multiplicity", rows)
        print(f"{spec.name}: " + ", ".join(f"{v:+.7f} (x{m})" for v, m in rows))
    return 0


def cmd_dominate(args) -> int:
    cfg = _load_config(args)
    out = _prepare_out(cfg)
    failed = False
    for spec in _select_systems(cfg, args.system):
        system = build_system(spec)
        depth = quick_hierarchy_depth(system)
        levels = (args.level,) if args.level else range(1, depth + 1)
        rows = []
        for level in levels:
            if not 1 <= level <= depth:
                raise LevelOutOfRangeError(f"level {level} outside [1, {depth}]")
            try:
                cert = certify_domination(system, level, seed=cfg.seed)
                rows.append((level, cert.power, cert.worst_ratio, cert.sample_count))
                print(
                    f"{spec.name} level {level}: N={cert.power} "
                    f"worst_ratio={cert.worst_ratio:.7f}"
                )
            except FoliationLabError as err:
                failed = True
                print(f"{spec.name} level {level}: FAILED ({err})")
        _write_csv(
            out / f"domination_{spec.name}.csv", "level,N,worst_ratio,samples", rows
        )
    return 1 if failed else 0


def _run_estimator(method, system, level, cfg: ExperimentConfig, seed: int):
    common = dict(seed=seed, jobs=cfg.jobs, radius=cfg.radius, c_max=cfg.c_max,
                  iterations=cfg.iterations)
    if method == "volume":
        return volume_entropy(
            system,
            level,
            x_samples=cfg.samples,
            epsilon_grid=cfg.epsilon_grid,
            n_range=range(cfg.n_min, cfg.n_max + 1),
            **common,
        )
    if method in ("separated", "spanning"):
        return counting_entropy(
            system,
            level,
            x_samples=min(4, cfg.samples),
            epsilon_grid=cfg.epsilon_grid[:2],
            n_range=range(1, 6),
            kind=method,
            **common,
        )
    return partition_conditional_entropy(
        system,
        level,
        mesh=cfg.mesh,
        n_range=range(1, 9),
        x_samples=cfg.samples,
        **common,
    )


def cmd_entropy(args) -> int:
    cfg = _load_config(args)
    out = _prepare_out(cfg)
    method = args.method or "volume"
    curve_rows = []
    fit_rows = []
    for spec in _select_systems(cfg, args.system):
        system = build_system(spec)
        depth = quick_hierarchy_depth(system)
        levels = (args.level,) if args.level else range(1, depth + 1)
        for level in levels:
            if not 1 <= level <= depth:
                raise LevelOutOfRangeError(
                    f"level {level} outside [1, {depth}] for system {spec.name}"
                )
            seed = int(spawn_rng(cfg.seed, "system", spec.name).integers(2**32))
            estimate = _run_estimator(method, system, level, cfg, seed + level)
            for eps, n, value in estimate.diagnostics.get("curves", ()):
                curve_rows.append((spec.name, level, method, eps, n, value))
            fit_rows.append(
                (spec.name, level, method, estimate.h_estimate, estimate.stderr)
            )
            print(
                f"{spec.name} level {level} [{method}]: "
                f"h = {estimate.h_estimate:.6f} +/- {estimate.stderr:.6f}"
            )
    _write_csv(
        out / "entropy_curves.csv", "system,level,method,epsilon,n,value", curve_rows
    )
    _write_csv(
        out / "entropy_fits.csv", "system,level,method,h_estimate,stderr", fit_rows
    )
    return 0


def cmd_verify(args) -> int:
    cfg = _load_config(args)
    out = _prepare_out(cfg)
    report = run_catalog(cfg)
    (out / "report.csv").write_text(report.to_csv())
    print(report.summary())
    return 1 if report.any_failed else 0


def cmd_leaf_dump(args) -> int:
    cfg = _load_config(args)
    out = _prepare_out(cfg)
    specs = _select_systems(cfg, args.system)
    spec = specs[0]
    system = build_system(spec)
    depth = quick_hierarchy_depth(system)
    level = args.level or 1
    if not 1 <= level <= depth:
        raise LevelOutOfRangeError(f"level {level} outside [1, {depth}]")
    rng = spawn_rng(cfg.seed, "leaf-dump", spec.name)
    x = TorusPoint(rng.random(system.dimension))
    if system.is_linear:
        patch = affine_leaf_patch(system, x, level, cfg.radius, seed=cfg.seed)
    else:
        patch = grow_unstable_patch(
            system, x, level, cfg.radius, cfg.c_max, cfg.iterations, seed=cfg.seed
        )
    rows = []
    for w, psi, point in patch_rows(patch):
        rows.append(tuple(w) + tuple(psi) + tuple(point))
    f_dim = patch.f_dim
    header = ",".join(
        [f"w{i}" for i in range(f_dim)]
        + [f"psi{i}" for i in range(patch.e_dim)]
        + [f"x{i}" for i in range(patch.dimension)]
    )
    _write_csv(out / f"leaf_{spec.name}_level{level}.csv", header, rows)
    print(f"wrote {len(rows)} leaf nodes for {spec.name} level {level}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="experiment config file (INI-style)")
    sub.add_argument("--system", help="restrict to one named system")
    sub.add_argument("--level", type=int, help="foliation level (1 = whole unstable)")
    sub.add_argument("--seed", type=int, help="master seed override")
    sub.add_argument("--out", help="output directory override")
    sub.add_argument("--jobs", type=int, help="worker count (results are identical)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="foliation-lab",
        description="entropy along unstable foliations of torus diffeomorphisms",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("spectrum", help="Lyapunov spectrum per system")
    _add_common(p)
    p.add_argument("--steps", type=int, help="QR iteration count override")
    p.set_defaults(func=cmd_spectrum)

    p = subs.add_parser("dominate", help="domination certificates per level")
    _add_common(p)
    p.set_defaults(func=cmd_dominate)

    p = subs.add_parser("entropy", help="entropy estimates per level")
    _add_common(p)
    p.add_argument("--method", choices=METHODS, help="estimator (default volume)")
    p.set_defaults(func=cmd_entropy)

    p = subs.add_parser("verify", help="Ruelle/Pesin checks across the catalog")
    _add_common(p)
    p.set_defaults(func=cmd_verify)

    p = subs.add_parser("leaf-dump", help="dump a grown leaf patch as CSV")
    _add_common(p)
    p.set_defaults(func=cmd_leaf_dump)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except LevelOutOfRangeError as err:
        print(f"level error: {err}", file=sys.stderr)
        return 2
    except FoliationLabError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def console_entry() -> None:  # pragma: no cover
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    console_entry()
