"""Theorem-level checks across the system catalog.

For each (system, level) the pipeline computes the Lyapunov spectrum, a
domination certificate, and entropy estimates, then checks

* the Ruelle-type inequality: the estimate must not exceed the sum of
  ``multiplicity * exponent`` over the fast groups, up to a systematic margin
  plus the statistical error;
* the Pesin-type formula: for volume-preserving systems the estimate must
  match that sum within a relative tolerance.

The right-hand side is always recomputed from the measured spectrum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cocycle import LyapunovSpectrum, lyapunov_spectrum
from .domination import DominationCertificate, certify_domination
from .entropy import counting_entropy, partition_conditional_entropy, volume_entropy
from .errors import FoliationLabError, NotVolumePreservingError
from .seeding import spawn_rng

#: Systematic slack added on top of the statistical error in the inequality check.
RUELLE_MARGIN = 0.05

#: Relative tolerance on the entropy formula gap.
PESIN_RTOL = 0.10


@dataclass(frozen=True, eq=False)
class VerificationRow:
    """One (system, level) outcome of the theorem checks."""

    system: str
    level: int
    method: str
    h_estimate: float | None
    stderr: float | None
    rhs: float | None
    ruelle_ok: bool | None
    pesin_gap: float | None
    pesin_ok: bool | None
    agreement_spread: float | None
    domination_power: int | None
    domination_ratio: float | None
    note: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.note) or self.ruelle_ok is False or self.pesin_ok is False


def check_volume_preserving(system, *, samples: int = 64, seed: int = 0, tol: float = 1e-9):
    """Assert |det Df| = 1 at sampled points (hypothesis of the entropy formula)."""
    rng = spawn_rng(seed, "volume-preserving")
    pts = rng.random((samples, system.dimension))
    dets = np.abs(np.linalg.det(system.jacobian(pts)))
    worst = float(np.max(np.abs(dets - 1.0)))
    if worst > tol:
        raise NotVolumePreservingError(
            f"|det Df| deviates from 1 by {worst:.3g} at sampled points"
        )


def _estimator_params(params: dict) -> dict:
    defaults = dict(
        x_samples=8,
        epsilon_grid=(0.1, 0.05, 0.025),
        n_range=range(2, 13),
        radius=0.3,
        c_max=1.0,
        iterations=30,
        steps=1_000,
        seed=0,
        jobs=1,
    )
    defaults.update(params)
    return defaults


def _evaluate(
    system,
    level: int,
    *,
    system_name: str,
    spectrum: LyapunovSpectrum | None,
    certificate: DominationCertificate | None,
    margin: float,
    pesin_rtol: float,
    methods=("volume",),
    require_volume_preserving: bool,
    **params,
) -> VerificationRow:
    params = _estimator_params(params)
    mesh = params.pop("mesh", 0.05)
    seed = params["seed"]
    if spectrum is None:
        spectrum = lyapunov_spectrum(system, seed=seed)
    rhs = spectrum.unstable_sum(level)

    note_parts = []
    if certificate is None:
        try:
            certificate = certify_domination(
                system, level, spectrum=spectrum, seed=seed
            )
        except FoliationLabError as err:
            note_parts.append(f"assumption-unverified: {err}")
    if require_volume_preserving:
        check_volume_preserving(system, seed=seed)

    estimates = {}
    estimates["volume"] = volume_entropy(
        system, level, spectrum=spectrum, **params
    )
    if "separated" in methods or "spanning" in methods:
        kind = "separated" if "separated" in methods else "spanning"
        estimates[kind] = counting_entropy(
            system,
            level,
            x_samples=min(4, params["x_samples"]),
            epsilon_grid=tuple(params["epsilon_grid"])[:2],
            n_range=range(1, 6),
            radius=params["radius"],
            c_max=params["c_max"],
            kind=kind,
            iterations=params["iterations"],
            steps=params["steps"],
            seed=seed,
            jobs=params["jobs"],
            spectrum=spectrum,
        )
    if "partition" in methods:
        estimates["partition"] = partition_conditional_entropy(
            system,
            level,
            mesh=mesh,
            n_range=range(2, 13),
            x_samples=params["x_samples"],
            radius=params["radius"],
            c_max=params["c_max"],
            iterations=params["iterations"],
            steps=params["steps"],
            seed=seed,
            jobs=params["jobs"],
            spectrum=spectrum,
        )

    primary = estimates["volume"]
    values = [e.h_estimate for e in estimates.values()]
    spread = float(max(values) - min(values)) if len(values) > 1 else None
    h, se = primary.h_estimate, primary.stderr
    return VerificationRow(
        system=system_name,
        level=level,
        method="volume",
        h_estimate=h,
        stderr=se,
        rhs=rhs,
        ruelle_ok=bool(h <= rhs + margin + se),
        pesin_gap=abs(h - rhs),
        pesin_ok=bool(abs(h - rhs) <= pesin_rtol * rhs),
        agreement_spread=spread,
        domination_power=certificate.power if certificate else None,
        domination_ratio=certificate.worst_ratio if certificate else None,
        note="; ".join(note_parts),
    )


def ruelle_check(
    system,
    level: int,
    *,
    system_name: str = "system",
    spectrum: LyapunovSpectrum | None = None,
    certificate: DominationCertificate | None = None,
    margin: float = RUELLE_MARGIN,
    pesin_rtol: float = PESIN_RTOL,
    **params,
) -> VerificationRow:
    """Check the inequality ``h <= rhs + margin + stderr`` at one level."""
    return _evaluate(
        system,
        level,
        system_name=system_name,
        spectrum=spectrum,
        certificate=certificate,
        margin=margin,
        pesin_rtol=pesin_rtol,
        require_volume_preserving=False,
        **params,
    )


def pesin_check(
    system,
    level: int,
    *,
    system_name: str = "system",
    spectrum: LyapunovSpectrum | None = None,
    certificate: DominationCertificate | None = None,
    margin: float = RUELLE_MARGIN,
    pesin_rtol: float = PESIN_RTOL,
    **params,
) -> VerificationRow:
    """Check the entropy formula gap; requires a volume-preserving system."""
    return _evaluate(
        system,
        level,
        system_name=system_name,
        spectrum=spectrum,
        certificate=certificate,
        margin=margin,
        pesin_rtol=pesin_rtol,
        require_volume_preserving=True,
        **params,
    )


@dataclass(frozen=True, eq=False)
class CatalogReport:
    rows: tuple[VerificationRow, ...]

    CSV_COLUMNS = (
        "system,level,method,h_estimate,stderr,rhs,ruelle_ok,pesin_gap,"
        "pesin_ok,agreement_spread,domination_power,domination_ratio,note"
    )

    def to_csv(self) -> str:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, bool):
                return "true" if v else "false"
            if isinstance(v, float):
                return f"{v:.10g}"
            return str(v)

        lines = [self.CSV_COLUMNS]
        for r in self.rows:
            lines.append(
                ",".join(
                    fmt(v)
                    for v in (
                        r.system,
                        r.level,
                        r.method,
                        r.h_estimate,
                        r.stderr,
                        r.rhs,
                        r.ruelle_ok,
                        r.pesin_gap,
                        r.pesin_ok,
                        r.agreement_spread,
                        r.domination_power,
                        r.domination_ratio,
                        r.note.replace(",", ";"),
                    )
                )
            )
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        total = len(self.rows)
        failures = sum(1 for r in self.rows if r.note)
        ruelle = sum(1 for r in self.rows if r.ruelle_ok)
        pesin = sum(1 for r in self.rows if r.pesin_ok)
        lines = [
            f"{total} rows: {ruelle} ruelle ok, {pesin} pesin ok, {failures} failed"
        ]
        for r in self.rows:
            status = r.note if r.note else (
                f"h={r.h_estimate:.6f} rhs={r.rhs:.6f} "
                f"ruelle={'ok' if r.ruelle_ok else 'VIOLATED'} "
                f"pesin_gap={r.pesin_gap:.4f} ({'ok' if r.pesin_ok else 'OFF'})"
            )
            lines.append(f"  {r.system} level {r.level}: {status}")
        return "\n".join(lines)

    @property
    def any_failed(self) -> bool:
        return any(r.failed for r in self.rows)


def run_catalog(config) -> CatalogReport:
    """Run spectrum, domination, estimators and both checks for every row.

    ``config`` follows the shape of :class:`foliation_lab.cli.ExperimentConfig`.
    Per-row failures are recorded in the note field and the run continues.
    """
    from .cli import build_system, resolve_levels  # config plumbing lives with the CLI

    rows: list[VerificationRow] = []
    for spec in config.systems:
        try:
            system = build_system(spec)
        except FoliationLabError as err:
            wanted = config.levels if config.levels != "all" else (1,)
            for level in wanted:
                rows.append(_failure_row(spec.name, level, f"{type(err).__name__}: {err}"))
            continue
        seed = spawn_rng(config.seed, "system", spec.name).integers(2**32)
        try:
            spectrum = lyapunov_spectrum(
                system,
                steps=config.spectrum_steps,
                transient=config.transient,
                seed=int(seed),
            )
            levels = resolve_levels(config.levels, spectrum)
        except FoliationLabError as err:
            wanted = config.levels if config.levels != "all" else (1,)
            for level in wanted:
                rows.append(_failure_row(spec.name, level, f"{type(err).__name__}: {err}"))
            continue
        for level in levels:
            try:
                rows.append(
                    _evaluate(
                        system,
                        level,
                        system_name=spec.name,
                        spectrum=spectrum,
                        certificate=None,
                        margin=config.ruelle_margin,
                        pesin_rtol=config.pesin_rtol,
                        methods=config.methods,
                        require_volume_preserving=True,
                        x_samples=config.samples,
                        epsilon_grid=config.epsilon_grid,
                        n_range=range(config.n_min, config.n_max + 1),
                        radius=config.radius,
                        c_max=config.c_max,
                        iterations=config.iterations,
                        mesh=config.mesh,
                        seed=int(seed) + level,
                        jobs=config.jobs,
                    )
                )
            except FoliationLabError as err:
                rows.append(_failure_row(spec.name, level, f"{type(err).__name__}: {err}"))
    return CatalogReport(rows=tuple(rows))


def _failure_row(name: str, level: int, note: str) -> VerificationRow:
    return VerificationRow(
        system=name,
        level=level,
        method="volume",
        h_estimate=None,
        stderr=None,
        rhs=None,
        ruelle_ok=None,
        pesin_gap=None,
        pesin_ok=None,
        agreement_spread=None,
        domination_power=None,
        domination_ratio=None,
        note=note,
    )
