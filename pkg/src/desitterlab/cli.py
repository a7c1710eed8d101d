"""Command-line front end: ``desitterlab <command> [--config PATH] [--out DIR] ...``.

Configuration is layered: schema defaults, then the config file (YAML or JSON,
or a previous run's ``manifest.json``), then ``DSLAB_*`` environment variables,
then ``--set key=value`` and the dedicated flags. Every run writes
``manifest.json`` into its output directory. Failures print one line
``error[<category>]: <detail>`` on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import reporting
from .errors import ConfigError, LabError

ENV_PREFIX = "DSLAB_"

# ---------------------------------------------------------------------------
# schemas


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class GridCfg(_Strict):
    n_r: int = Field(200, ge=8)
    t_end: float = Field(20.0, gt=0)
    cfl: float = 0.5
    out_dt: Optional[float] = None
    dissipation: float = 0.2
    constraint_damping: float = 4.0


class FamilyCfg(_Strict):
    kind: Literal["desitter", "conformal", "perturbed", "polynomial"] = "desitter"
    coefficients: dict[str, float] = Field(default_factory=dict)


class ForcingCfg(_Strict):
    amplitude: float = 1.0
    t_window: tuple[float, float] = (0.5, 2.5)
    r_window: tuple[float, float] = (0.8, 1.04)


class ModeCfg(_Strict):
    l: int = Field(0, ge=0)
    weight: float = 1.0


class LowerOrderCfg(_Strict):
    b_tau: float = 0.0
    b_r: float = 0.0
    b_0: float = 0.0


class RunCfg(_Strict):
    out: str = "out"
    seed: int = 0
    workers: int = Field(1, ge=1)


class FlowCfg(RunCfg):
    n: int = Field(4, ge=2)
    delta: float = 0.1
    tau0: float = 1.0
    samples_per_component: int = Field(500, ge=0)
    tau_min: float = 1e-3
    boundary_fraction: float = Field(0.0, ge=0, le=1)
    perturbation_eps: float = 0.0
    neighborhood_radius: float = 1e-6
    max_time: float = 200.0
    trajectories: int = Field(6, ge=0)


class ResonancesCfg(RunCfg):
    n: int = Field(4, ge=2)
    lam: float = Field(0.0, alias="lambda")
    N_max: int = Field(6, ge=0)
    numeric: bool = False
    l_values: list[int] = Field(default_factory=lambda: [0, 1])
    box: tuple[float, float, float, float] = (-0.5, 0.5, -2.5, 0.5)
    per_side: int = 48


class SolveCfg(RunCfg):
    n: int = Field(4, ge=2)
    lam: float = Field(0.0, alias="lambda")
    delta: float = 0.1
    tau0: float = 1.0
    family: FamilyCfg = Field(default_factory=FamilyCfg)
    grid: GridCfg = Field(default_factory=GridCfg)
    forcing: ForcingCfg = Field(default_factory=ForcingCfg)
    modes: list[ModeCfg] = Field(default_factory=lambda: [ModeCfg(l=0, weight=1.0), ModeCfg(l=1, weight=0.5)])
    lower_order: Optional[LowerOrderCfg] = None
    probe_r: float = 0.5
    fit_window: Optional[tuple[float, float]] = (10.0, 20.0)
    energy_weight: float = 0.0


class TermCfg(_Strict):
    coefficient: float = 1.0
    exponent: int = 1
    factors: list[str] = Field(default_factory=lambda: ["tau_dtau"])


class NonlinearityCfg(_Strict):
    terms: list[TermCfg] = Field(default_factory=lambda: [TermCfg()])
    box_coefficient: float = 0.0


class PicardCfg(_Strict):
    tol: float = 1e-10
    max_iter: int = 40
    smallness_gate: float = 1.0
    residual_constant: float = 5.0
    weight: float = 0.0


class ExpansionCfg(_Strict):
    alpha: float = 0.9
    probe_r: float = 0.5
    window: Optional[tuple[float, float]] = (10.0, 20.0)


class IterateCfg(RunCfg):
    n: int = Field(4, ge=2)
    lam: float = Field(0.0, alias="lambda")
    delta: float = 0.1
    tau0: float = 1.0
    family: FamilyCfg = Field(default_factory=lambda: FamilyCfg(kind="conformal", coefficients={"power": 2,
                                                                                                 "scale": 1.0}))
    nonlinearity: NonlinearityCfg = Field(default_factory=NonlinearityCfg)
    forcing: ForcingCfg = Field(default_factory=lambda: ForcingCfg(amplitude=0.3))
    grid: GridCfg = Field(default_factory=lambda: GridCfg(n_r=100))
    picard: PicardCfg = Field(default_factory=PicardCfg)
    lower_order: Optional[LowerOrderCfg] = None
    expansion: ExpansionCfg = Field(default_factory=ExpansionCfg)


class BackwardCfg(RunCfg):
    n: int = Field(4, ge=2)
    lam: float = Field(0.0, alias="lambda")
    delta: float = 0.1
    tau0: float = 1.0
    rate: float = 3.0
    radius: float = 0.8
    threshold: Optional[float] = None
    grid: GridCfg = Field(default_factory=lambda: GridCfg(n_r=100))
    lower_order: Optional[LowerOrderCfg] = None


class ReciprocalCfg(_Strict):
    s: float = 2.0
    samples: int = 100
    safety: float = 1.5


class NormsCfg(RunCfg):
    beta: float = 0.5
    offset: float = 0.2
    T_values: list[float] = Field(default_factory=lambda: [150.0, 175.0, 200.0])
    dt: float = 0.05
    s: float = 0.0
    reciprocal: ReciprocalCfg = Field(default_factory=ReciprocalCfg)


class RegcheckCfg(RunCfg):
    queries: list[str] = Field(default_factory=list)


class SweepCfg(RunCfg):
    command: Literal["solve", "iterate"] = "solve"
    axis: str = "lambda"
    values: list[Any] = Field(default_factory=list)
    base: dict = Field(default_factory=dict)


SCHEMAS: dict[str, type[RunCfg]] = {
    "flow": FlowCfg, "resonances": ResonancesCfg, "solve": SolveCfg, "iterate": IterateCfg,
    "backward": BackwardCfg, "norms": NormsCfg, "regcheck": RegcheckCfg, "sweep": SweepCfg,
}

# ---------------------------------------------------------------------------
# config layering


def _read_config(path: str | None, command: str) -> dict:
    if not path:
        return {}
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    if {"command", "config", "config_hash"} <= set(data):
        if data["command"] != command:
            raise ConfigError(f"manifest is for {data['command']!r}, not {command!r}")
        return dict(data["config"])
    return data


def _set_path(cfg: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    cur = cfg
    for k in keys[:-1]:
        nxt = cur.get(k)
        if not isinstance(nxt, dict):
            nxt = {}
            cur[k] = nxt
        cur = nxt
    cur[keys[-1]] = value


def _parse_value(text: str) -> Any:
    try:
        return float(Fraction(text)) if "/" in text else yaml.safe_load(text)
    except (ValueError, ZeroDivisionError, yaml.YAMLError):
        return text


def _field_names(schema: type[BaseModel]) -> set[str]:
    names = set()
    for name, f in schema.model_fields.items():
        names.add(name)
        if f.alias:
            names.add(f.alias)
    return names


def _env_overrides(schema: type[BaseModel], environ: dict) -> dict:
    """``DSLAB_GRID__N_R=400`` sets ``grid.n_r``; only keys the schema knows are used."""
    out: dict = {}
    # environment names are upper case; match top-level fields case-insensitively
    known = {name.lower(): name for name in _field_names(schema)}
    for key, val in sorted(environ.items()):
        if not key.startswith(ENV_PREFIX):
            continue
        head, *rest = key[len(ENV_PREFIX):].lower().split("__")
        if head in known:
            _set_path(out, ".".join([known[head], *rest]), _parse_value(val))
    return out


def _merge(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def build_config(command: str, args: argparse.Namespace, environ: dict | None = None) -> RunCfg:
    schema = SCHEMAS[command]
    layered = _read_config(args.config, command)
    layered = _merge(layered, _env_overrides(schema, dict(os.environ if environ is None else environ)))
    flags: dict = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        _set_path(flags, k.strip(), _parse_value(v.strip()))
    for name in ("out", "seed", "workers"):
        val = getattr(args, name, None)
        if val is not None:
            flags[name] = val
    for name, key in (("n", "n"), ("lam", "lambda"), ("numeric", "numeric")):
        val = getattr(args, name, None)
        if val is not None:
            flags[key] = val
    if command == "regcheck" and args.queries:
        flags["queries"] = list(args.queries)
    try:
        return schema.model_validate(_merge(layered, flags))
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = ".".join(str(p) for p in first["loc"])
        raise ConfigError(f"{loc}: {first['msg']} ({exc.error_count()} error(s))") from exc


def _dump_config(cfg: RunCfg) -> dict:
    return cfg.model_dump(mode="json", by_alias=True)


# ---------------------------------------------------------------------------
# runners; each returns (summary, artifact paths, stdout lines)


Runner = Callable[[Any, Path], tuple[dict, list[Path], list[str]]]


def _lower_order(cfg):
    from .wavesolver import LowerOrder

    return None if cfg is None else LowerOrder(cfg.b_tau, cfg.b_r, cfg.b_0)


def _family(cfg, n: int, delta: float, tau0: float):
    from .geometry import family_from_config

    if cfg.kind == "desitter":
        return None
    return family_from_config({"dimension": n, "delta": delta, "tau0": tau0,
                               "family": {"kind": cfg.kind, "coefficients": dict(cfg.coefficients)}})


def _grid(cfg: GridCfg):
    from .wavesolver import Grid

    return Grid(cfg.n_r, cfg.t_end, cfg.cfl, cfg.out_dt, cfg.dissipation, cfg.constraint_damping)


def run_flow(cfg: FlowCfg, out: Path):
    from .geometry import Domain
    from .phaseflow import Direction, Perturbation, ScanConfig, integrate, nontrapping_scan, sample_seeds
    from .plotting import scatter_plot

    scan_cfg = ScanConfig(cfg.n, cfg.delta, cfg.tau0, cfg.samples_per_component, cfg.seed, cfg.tau_min,
                          cfg.boundary_fraction, cfg.perturbation_eps, cfg.neighborhood_radius, cfg.max_time,
                          cfg.workers)
    scan = nontrapping_scan(scan_cfg)
    arts = [reporting.write_json(out / "scan.json", scan)]
    rng = np.random.default_rng(cfg.seed + 1)
    rows, paths = [], []
    few = dataclasses.replace(scan_cfg, samples_per_component=cfg.trajectories)
    m = cfg.n - 1
    for comp in (1, -1):
        for i, seed in enumerate(sample_seeds(few, comp, rng)):
            tr = integrate(seed, Direction.FORWARD, Domain(cfg.delta, cfg.tau0), cfg.neighborhood_radius,
                           cfg.max_time, Perturbation(cfg.perturbation_eps))
            idx = len(paths)
            paths.append(tr.samples_x)
            for s, x in zip(tr.samples_s, tr.samples_x):
                rows.append([idx, comp, tr.termination.value, float(s)] + [float(v) for v in x])
    header = ["trajectory", "component", "termination", "s"] + [f"Y{i}" for i in range(m)] + ["tau"] + \
        [f"zeta{i}" for i in range(m)] + ["sigma"]
    arts.append(reporting.write_csv(out / "trajectories.csv", header, rows))
    with (out / "trajectories.dat").open("w", encoding="utf-8") as fh:
        fh.write("# Y0 Y1 tau (one block per trajectory)\n")
        for xs in paths:
            for x in xs:
                fh.write(f"{x[0]:.12e} {x[1] if m > 1 else 0.0:.12e} {x[m]:.12e}\n")
            fh.write("\n\n")
    arts.append(out / "trajectories.dat")
    if paths and m > 1:
        arts.append(scatter_plot(out / "trajectories.png", [p[:, 0] for p in paths], [p[:, 1] for p in paths],
                                 [str(i) for i in range(len(paths))], "Y0", "Y1", "projected bicharacteristics"))
    summary = {"total": scan["total"], "failures": scan["failures"]}
    return summary, arts, [f"flow: {scan['total']} seeds, {scan['failures']} failures"]


def run_resonances(cfg: ResonancesCfg, out: Path):
    from .plotting import pole_plot
    from .resonance import Box, analytic_lattice, mode_lattice, numeric_poles

    lat = analytic_lattice(cfg.n, cfg.lam, cfg.N_max)
    data = lat.to_dict()
    data["leading"] = [{"re": s.real, "im": s.imag, "multiplicity": mlt} for s, mlt in lat.entries[:2]]
    found = []
    if cfg.numeric:
        box = Box(*cfg.box)
        data["numeric"] = {}
        for l in cfg.l_values:
            poles = numeric_poles(cfg.n, cfg.lam, l, box, cfg.per_side)
            ml = mode_lattice(cfg.n, cfg.lam, l, cfg.N_max + 2)
            data["numeric"][str(l)] = [{"re": z.real, "im": z.imag, "lattice_distance": ml.distance(z)}
                                       for z in poles]
            found.extend(poles)
    arts = [reporting.write_json(out / "lattice.json", data)]
    rows = [[s.real, s.imag, mlt] for s, mlt in lat.entries]
    arts.append(reporting.write_csv(out / "lattice.csv", ["re", "im", "multiplicity"], rows))
    arts.append(reporting.write_dat(out / "lattice.dat", ["re", "im", "multiplicity"], list(zip(*rows))))
    arts.append(pole_plot(out / "lattice.png", lat.sigmas(), found))
    lead = ", ".join(_fmt_sigma(s) for s, _ in lat.entries[:2])
    return {"leading": lead}, arts, [f"leading resonances: {lead}"]


def _fmt_sigma(s: complex) -> str:
    re = 0.0 if abs(s.real) < 1e-12 else s.real
    im = 0.0 if abs(s.imag) < 1e-12 else s.imag
    unit = {1.0: "i", -1.0: "-i"}
    if re == 0.0:
        return "0" if im == 0.0 else unit.get(im, f"{im:g}i")
    return f"{re:g}" + {1.0: "+i", -1.0: "-i"}.get(im, f"{im:+g}i")


def _solve_modes(cfg: SolveCfg):
    from .geometry import Domain
    from .wavesolver import LinearProblem, bump_forcing, solve_forward

    forcing = bump_forcing(cfg.forcing.amplitude, tuple(cfg.forcing.t_window), tuple(cfg.forcing.r_window))
    fam = _family(cfg.family, cfg.n, cfg.delta, cfg.tau0)
    fields = []
    for mode in cfg.modes:
        prob = LinearProblem(n=cfg.n, lam=cfg.lam, l=mode.l, forcing=forcing, forcing_onset=cfg.forcing.t_window[0],
                             family=fam, lower_order=_lower_order(cfg.lower_order),
                             domain=Domain(cfg.delta, cfg.tau0), grid=_grid(cfg.grid))
        fields.append(solve_forward(prob))
    return fields, forcing


def run_solve(cfg: SolveCfg, out: Path):
    from .plotting import line_plot
    from .resonance import analytic_lattice, select_decay_model
    from .wavesolver import energy_constant, energy_report, superposed_probe

    fields, forcing = _solve_modes(cfg)
    weights = [m.weight for m in cfg.modes]
    t, v = superposed_probe(fields, weights, cfg.probe_r)
    arts = []
    for fld in fields:
        stem = out / f"field_l{fld.l}"
        fld.save(stem)
        arts += [stem.with_suffix(".npz"), stem.with_suffix(".json")]
    arts.append(reporting.write_csv(out / "probe.csv", ["t", "u"], zip(t, v)))
    arts.append(reporting.write_dat(out / "probe.dat", ["t", "u"], [t, v]))
    arts.append(line_plot(out / "probe.png", t, [v], ["u"], "t = -log tau", "|u|", logy=True,
                          title=f"probe r = {cfg.probe_r}"))
    energies = [energy_report(f, cfg.energy_weight) for f in fields]
    arts.append(reporting.write_dat(out / "energy.dat", ["t"] + [f"E_l{f.l}" for f in fields],
                                    [fields[0].t] + energies))
    arts.append(line_plot(out / "energy.png", fields[0].t, energies, [f"l={f.l}" for f in fields],
                          "t = -log tau", "E(t)", logy=True))
    summary: dict = {"energy_constant": [energy_constant(f, forcing, cfg.energy_weight) for f in fields]}
    lat = analytic_lattice(cfg.n, cfg.lam, 6)
    summary["lattice_rate"] = lat.leading_decay_rate()
    if cfg.fit_window is not None:
        fit = select_decay_model(t, v, tuple(cfg.fit_window))
        summary["fit"] = fit.to_dict()
        summary["decay_exponent"] = fit.exponent
        summary["model"] = fit.model.value
    arts.append(reporting.write_json(out / "solve.json", summary))
    line = f"solve: lambda={cfg.lam:g}"
    if "fit" in summary:
        line += f" decay exponent {summary['decay_exponent']:.4f} ({summary['model']})" \
                f", lattice gap {summary['lattice_rate']:.4f}"
    return summary, arts, [line]


def run_iterate(cfg: IterateCfg, out: Path):
    from .geometry import Domain
    from .plotting import line_plot
    from .quasilinear import Nonlinearity, PicardConfig, extract_expansion, picard_solve
    from .resonance import analytic_lattice
    from .wavesolver import LinearProblem, bump_forcing

    q = Nonlinearity.from_config(cfg.nonlinearity.model_dump())
    fam = _family(cfg.family, cfg.n, cfg.delta, cfg.tau0)
    forcing = bump_forcing(cfg.forcing.amplitude, tuple(cfg.forcing.t_window), tuple(cfg.forcing.r_window))
    base = LinearProblem(n=cfg.n, lam=cfg.lam, forcing_onset=cfg.forcing.t_window[0],
                         lower_order=_lower_order(cfg.lower_order), domain=Domain(cfg.delta, cfg.tau0),
                         grid=_grid(cfg.grid))
    p = cfg.picard
    u, rep = picard_solve(fam, q, forcing, base, PicardConfig(p.tol, p.max_iter, p.smallness_gate,
                                                               5, p.residual_constant, p.weight))
    e = cfg.expansion
    exp = extract_expansion(u, analytic_lattice(cfg.n, cfg.lam, 6), e.alpha, e.probe_r,
                            None if e.window is None else tuple(e.window))
    rep.expansion = {"coefficients": exp.coefficients, "remainder_exponent": exp.remainder_exponent,
                     "remainder_norm": exp.remainder_norm, "alpha": exp.alpha, "window": exp.window}
    u.save(out / "solution")
    arts = [out / "solution.npz", out / "solution.json"]
    arts.append(reporting.write_json(out / "iteration.json", rep.to_dict()))
    k = np.arange(1, len(rep.deltas) + 1)
    arts.append(reporting.write_dat(out / "deltas.dat", ["iterate", "delta"], [k, rep.deltas]))
    arts.append(line_plot(out / "deltas.png", k, [rep.deltas], ["delta"], "iterate", "||u_k - u_{k-1}||",
                          logy=True))
    t, v = u.probe(e.probe_r)
    arts.append(reporting.write_dat(out / "probe.dat", ["t", "u"], [t, v]))
    ratio = max(rep.contraction_ratios) if rep.contraction_ratios else 0.0
    summary = {"iterates": rep.iterates, "contraction_ratio": ratio, "residual": rep.final_residual,
               "remainder_exponent": exp.remainder_exponent, "forcing_norm": rep.forcing_norm}
    return summary, arts, [f"iterate: {rep.iterates} iterates, max ratio {ratio:.3e}, residual "
                           f"{rep.final_residual:.3e}, remainder exponent {exp.remainder_exponent:.3f}"]


def run_backward(cfg: BackwardCfg, out: Path):
    from .geometry import Domain
    from .plotting import line_plot
    from .wavesolver import (LinearProblem, homogeneous_backward_growth, independent_residual, manufactured,
                             solution_error, solve_backward)

    L = _lower_order(cfg.lower_order)
    exact, forcing = manufactured(cfg.n, cfg.lam, "backward", cfg.radius, L, rate=cfg.rate)
    prob = LinearProblem(n=cfg.n, lam=cfg.lam, forcing=forcing, lower_order=L,
                         domain=Domain(cfg.delta, cfg.tau0), grid=_grid(cfg.grid))
    threshold = cfg.threshold
    if threshold is None:
        threshold = max(homogeneous_backward_growth(prob, seed=cfg.seed), 0.0)
    u = solve_backward(prob, cfg.rate, threshold)
    err = solution_error(u, exact)
    res = independent_residual(u, prob)
    u.save(out / "solution")
    t, v = u.probe(0.5)
    ex = exact(t, np.full_like(t, 0.5))
    arts = [out / "solution.npz", out / "solution.json",
            reporting.write_dat(out / "probe.dat", ["t", "u", "exact"], [t, v, ex]),
            line_plot(out / "probe.png", t, [v, ex], ["numerical", "exact"], "t = -log tau", "|u|", logy=True)]
    summary = {"threshold": threshold, "rate": cfg.rate, "max_error": err, "residual": res}
    arts.append(reporting.write_json(out / "backward.json", summary))
    return summary, arts, [f"backward: threshold {threshold:.4f}, error {err:.3e}, residual {res:.3e}"]


def run_norms(cfg: NormsCfg, out: Path):
    from .bsobolev import (HalfSpaceField, calibrate_reciprocal_constant, hb_norm, l2_quadrature,
                           power_threshold_study, reciprocal_corpus, reciprocal_norm)

    gauss = HalfSpaceField.from_function(lambda t, y: np.exp(-t * t) * (1 + 0.3 * np.cos(y)), 10.0, (256, 32))
    planch = abs(hb_norm(gauss) / l2_quadrature(gauss) - 1.0)
    study = power_threshold_study(cfg.beta, cfg.offset, cfg.T_values, cfg.dt, cfg.s)
    rc = cfg.reciprocal
    C = calibrate_reciprocal_constant(rc.s, seed=cfg.seed, size=rc.samples, safety=rc.safety)
    holds = sum(reciprocal_norm(w, u, 1.0, rc.s, constant=C).holds
                for w, u in reciprocal_corpus(cfg.seed + 1, rc.samples))
    summary = {"plancherel_rel_error": planch, "power_threshold": study, "reciprocal_constant": C,
               "reciprocal_holds": holds, "reciprocal_samples": rc.samples}
    arts = [reporting.write_json(out / "norms.json", summary),
            reporting.write_dat(out / "power_threshold.dat", ["T", "below", "above"],
                                [study["T"], study["below"], study["above"]])]
    return summary, arts, [f"norms: Plancherel {planch:.1e}, reciprocal bound holds on {holds}/{rc.samples}"]


def run_regcheck(cfg: RegcheckCfg, out: Path):
    from .regcalc import run_query

    if not cfg.queries:
        raise ConfigError("regcheck needs at least one query")
    results = [run_query(q) for q in cfg.queries]
    arts = [reporting.write_json(out / "regcheck.json", results)]
    return {"results": [r["result"] for r in results]}, arts, [r["result"] for r in results]


def _sweep_cell(args):
    command, cfg_dict, out_dir = args
    schema = SCHEMAS[command]
    cell = Path(out_dir)
    cell.mkdir(parents=True, exist_ok=True)
    try:
        cfg = schema.model_validate(cfg_dict)
        summary, _, _ = RUNNERS[command](cfg, cell)
        return {"status": "ok", **summary}
    except LabError as exc:
        return {"status": f"failed:{exc.category}", "detail": str(exc).splitlines()[0] if str(exc) else ""}
    except (ValidationError, ValueError, ArithmeticError) as exc:
        return {"status": f"failed:{type(exc).__name__}", "detail": str(exc).splitlines()[0]}


SWEEP_COLUMNS = ["value", "status", "decay_exponent", "model", "lattice_rate", "contraction_ratio", "residual",
                 "smallness_radius"]


def run_sweep(cfg: SweepCfg, out: Path):
    schema = SCHEMAS[cfg.command]
    root = cfg.axis.split(".")[0]
    if root not in _field_names(schema):
        raise ConfigError(f"sweep axis {cfg.axis!r} is not a {cfg.command} key")
    jobs = []
    for i, value in enumerate(cfg.values):
        val = _parse_value(value) if isinstance(value, str) else value
        cell = _merge(cfg.base, {"out": str(out / f"cell_{i:03d}"), "seed": cfg.seed, "workers": 1})
        _set_path(cell, cfg.axis, val)
        jobs.append((cfg.command, cell, str(out / f"cell_{i:03d}")))
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            results = list(ex.map(_sweep_cell, jobs))
    else:
        results = [_sweep_cell(j) for j in jobs]
    rows, radius = [], None
    for value, res in zip(cfg.values, results):
        if cfg.command == "iterate" and res["status"] == "ok":
            v = float(_parse_value(value)) if isinstance(value, str) else float(value)
            radius = v if radius is None else max(radius, v)
        rows.append([value, res["status"], res.get("decay_exponent"), res.get("model"), res.get("lattice_rate"),
                     res.get("contraction_ratio"), res.get("residual"),
                     radius if cfg.command == "iterate" else None])
    arts = [reporting.write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows),
            reporting.write_json(out / "sweep.json", {"axis": cfg.axis, "command": cfg.command,
                                                      "cells": [dict(zip(SWEEP_COLUMNS, r)) for r in rows]})]
    failed = sum(1 for r in results if r["status"] != "ok")
    return {"cells": len(rows), "failed": failed}, arts, [f"sweep: {len(rows)} cells, {failed} failed"]


RUNNERS: dict[str, Runner] = {
    "flow": run_flow, "resonances": run_resonances, "solve": run_solve, "iterate": run_iterate,
    "backward": run_backward, "norms": run_norms, "regcheck": run_regcheck, "sweep": run_sweep,
}

# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON config or a previous manifest.json")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, help="worker processes")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (dotted)")
    parser = argparse.ArgumentParser(prog="desitterlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SCHEMAS:
        p = sub.add_parser(name, parents=[common])
        if name in ("resonances", "solve", "iterate", "backward"):
            p.add_argument("--lambda", dest="lam", type=_parse_value, help="mass parameter")
            p.add_argument("--n", type=int, help="spacetime dimension")
        if name == "resonances":
            p.add_argument("--numeric", action="store_true", default=None, help="also run the shooting finder")
        if name == "regcheck":
            p.add_argument("queries", nargs="*", help="queries such as 'threshold_real_principal(stilde=2)'")
    return parser


def main(argv: list[str] | None = None, environ: dict | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    start = time.perf_counter()
    try:
        cfg = build_config(args.command, args, environ)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        summary, arts, lines = RUNNERS[args.command](cfg, out)
        reporting.write_manifest(out, args.command, _dump_config(cfg), time.perf_counter() - start, arts)
    except LabError as exc:
        print(f"error[{exc.category}]: {_one_line(exc)}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    except (ValueError, ArithmeticError, OSError) as exc:
        print(f"error[{type(exc).__name__}]: {_one_line(exc)}", file=sys.stderr)
        return 1
    for line in lines:
        print(line)
    return 0


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split()) or type(exc).__name__


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
