"""Batch front door: one config file per experiment, artifacts on disk.

Usage:  kwlab <command> --config <file> [--out <dir>] [--threads n] [--seed u64]

Configs are flat key=value files ('#' comments).  Unknown keys are
rejected before anything is written.  Every run lands in its own
directory named by a digest of the effective configuration, holding the
config echo (sufficient for byte-identical replay), CSV/JSON reports,
rendered figures, and a manifest with wall time and versions.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 resource cap.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import figures
from .bourgain import NormSpec, load_spacetime, norm as spacetime_norm, spacetime_transform
from .errors import (
    BlowUpError,
    ConfigError,
    InfeasibleScheduleError,
    KwlabError,
    NearResonance,
    ResourceLimitError,
)
from .imethod import (
    IMultiplier,
    derivative_identity_residual,
    drift_experiment,
    energy_series,
    EnergyEvaluator,
    gwp_schedule,
)
from .reports import (
    RunWriter,
    parse_bool,
    parse_config_text,
    parse_fraction,
    parse_list,
)
from .samplers import (
    INTERACTION_CASES,
    bilinear_ratio_test,
    hh_low_ratios,
    improved_bilinear_check,
    smoothing_check,
)
from .solver import (
    SolverConfig,
    conserved_l2,
    conserved_trace,
    save_trajectory,
    simulate,
    stable_dt,
    traveling_wave,
)
from .spectral import (
    GridSpec,
    RealField,
    SpectralField,
    forward_transform,
    grid_points,
    inverse_transform,
    load_snapshot,
    mode_numbers,
    project_state,
    sobolev_norm,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_RESOURCE = 0, 2, 3, 4


def _grid_cap() -> int:
    return int(os.environ.get("KWLAB_MAX_MODES", str(1 << 20)))


def parse_length(text: str) -> float:
    """Lengths as numbers, fractions, or pi multiples like 16pi."""
    low = text.strip().lower()
    if low.endswith("pi"):
        head = low[:-2]
        return (parse_fraction(head) if head else 1.0) * np.pi
    return parse_fraction(text)


def _parse_str(options):
    def parse(text):
        if text not in options:
            raise ConfigError(f"expected one of {options}, got {text!r}")
        return text

    return parse


def _parse_int(text):
    try:
        return int(text)
    except ValueError as exc:
        raise ConfigError(f"expected an integer, got {text!r}") from exc


def parallel_map(fn, items, threads):
    """Order-preserving map; identical results for any thread count."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Config schemas

_SOLVER_KEYS = {
    "m": (_parse_int, 256),
    "l": (parse_length, 2.0 * np.pi),
    "beta": (_parse_int, 1),
    "lam": (parse_fraction, 1.0),
    "dt": (parse_fraction, None),
    "c_stab": (parse_fraction, 1.0),
    "t_end": (parse_fraction, 1.0),
    "dealias": (_parse_str(("galerkin_consistent", "two_thirds", "none")), "galerkin_consistent"),
    "nonlinearity": (parse_bool, True),
    "stride": (_parse_int, 1),
    "data": (str, "smooth_random"),
    "amplitude": (parse_fraction, 0.25),
    "sigma": (parse_fraction, None),
    "envelope": (_parse_str(("gaussian", "rough")), "gaussian"),
    "speed": (parse_fraction, 0.25),
}

_SCHEMAS = {
    "simulate": dict(_SOLVER_KEYS),
    "energy-track": {
        **_SOLVER_KEYS,
        "n_threshold": (parse_fraction, 4.0),
        "s": (parse_fraction, -38.0 / 21.0),
        "eps_den": (parse_fraction, 1e-9),
        "orders": (lambda t: parse_list(t, _parse_int), [2, 3, 4]),
    },
    "acl-scaling": {
        **_SOLVER_KEYS,
        "n_values": (parse_list, [4.0, 8.0, 16.0, 32.0]),
        "s": (parse_fraction, -38.0 / 21.0),
        "eps_den": (parse_fraction, 1e-9),
    },
    "norm": {
        "input": (str, None),
        "kind": (_parse_str(("x", "x21", "y", "z", "w", "sobolev")), "w"),
        "s": (parse_fraction, 0.0),
        "b": (parse_fraction, 0.5),
        "taper": (_parse_str(("none", "hann")), "hann"),
    },
    "bilinear-test": {
        "family": (_parse_str(("hh_low", "cases", "improved")), "hh_low"),
        "s": (parse_fraction, -38.0 / 21.0),
        "b": (parse_fraction, 19.0 / 42.0),
        "scales": (parse_list, [8.0, 16.0, 32.0, 64.0, 128.0]),
        "count": (_parse_int, 8),
        "n2": (parse_fraction, 2.0),
        "beta": (_parse_int, 1),
    },
    "smoothing-test": {
        "which": (_parse_str(("smooth_0", "smooth_4", "smooth_2", "l4")), "smooth_0"),
        "n_values": (parse_list, [8.0, 16.0, 32.0, 64.0, 128.0]),
        "count": (_parse_int, 8),
        "beta": (_parse_int, 1),
    },
    "gwp-schedule": {
        "s": (parse_fraction, -38.0 / 21.0),
        "t": (parse_fraction, 1.0),
        "eps0": (parse_fraction, 0.1),
        "c1": (parse_fraction, 1.0),
        "c2": (parse_fraction, 1.0),
    },
}

for schema in _SCHEMAS.values():
    schema["seed"] = (_parse_int, 0)


def validate_config(command: str, raw: dict) -> dict:
    schema = _SCHEMAS[command]
    unknown = set(raw) - set(schema)
    if unknown:
        raise ConfigError(f"unknown keys for {command}: {sorted(unknown)}")
    out = {}
    for key, (parser, default) in schema.items():
        if key in raw:
            try:
                out[key] = parser(raw[key])
            except ConfigError:
                raise
            except Exception as exc:
                raise ConfigError(f"bad value for {key!r}: {raw[key]!r} ({exc})") from exc
        else:
            out[key] = default
    return out


def canonical_config_text(cfg: dict) -> str:
    lines = []
    for key in sorted(cfg):
        value = cfg[key]
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        elif isinstance(value, list):
            value = ",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in value)
        lines.append(f"{key}={value}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Shared builders


def build_grid(cfg) -> GridSpec:
    if cfg["m"] > _grid_cap():
        raise ResourceLimitError(
            f"m={cfg['m']} exceeds KWLAB_MAX_MODES={_grid_cap()}"
        )
    return GridSpec(num_modes=cfg["m"], length=cfg["l"], lam=cfg["lam"], beta=cfg["beta"])


def build_initial_data(grid: GridSpec, cfg, seed: int) -> SpectralField:
    kind = cfg["data"]
    if kind == "cos":
        x = grid_points(grid)
        wave = cfg["amplitude"] * np.cos(2.0 * np.pi * x / grid.length)
        return project_state(forward_transform(RealField(wave), grid))
    if kind == "smooth_random":
        rng = np.random.Generator(np.random.PCG64(seed))
        m = grid.num_modes
        k = np.abs(mode_numbers(grid)).astype(np.float64)
        sigma = cfg["sigma"] if cfg["sigma"] is not None else m / 16.0
        if cfg["envelope"] == "gaussian":
            env = np.exp(-((k / sigma) ** 2))
        else:
            env = (1.0 + k**2) ** (-0.5) * np.exp(-((k / (0.45 * m)) ** 8))
        c = env * (rng.standard_normal(m) + 1j * rng.standard_normal(m))
        c = c + np.conj(c[(-np.arange(m)) % m])
        u = project_state(SpectralField(c, grid))
        size = sobolev_norm(u, 0.0)
        if size == 0.0:
            raise ConfigError("random data degenerated to zero")
        return SpectralField(cfg["amplitude"] * u.coeffs / size, grid)
    if kind == "traveling_wave":
        return traveling_wave(cfg["speed"], grid)
    if kind.startswith("file:"):
        return project_state(load_snapshot(kind[5:]))
    raise ConfigError(f"unknown data recipe {kind!r}")


def build_solver_config(grid: GridSpec, cfg) -> SolverConfig:
    dt = cfg["dt"] if cfg["dt"] is not None else stable_dt(grid, cfg["c_stab"])
    return SolverConfig(
        dt=dt,
        t_end=cfg["t_end"],
        dealias_mode=cfg["dealias"],
        nonlinearity_enabled=cfg["nonlinearity"],
    )


# ---------------------------------------------------------------------------
# Command implementations


def run_simulate(cfg, writer: RunWriter, threads: int) -> None:
    grid = build_grid(cfg)
    u0 = build_initial_data(grid, cfg, writer.seed)
    solver_cfg = build_solver_config(grid, cfg)
    traj = simulate(u0, solver_cfg, cfg["stride"])
    save_trajectory(traj, writer.path("trajectory.kwtr"))
    rows = conserved_trace(traj)
    writer.csv("conserved.csv", ["t", "l2", "h2"], rows)
    l2 = np.array([r[1] for r in rows])
    report = {
        "grid": {"m": grid.num_modes, "l": grid.length, "lam": grid.lam, "beta": grid.beta},
        "dt": solver_cfg.dt,
        "t_end": solver_cfg.t_end,
        "snapshots": len(traj),
        "l2_initial": float(l2[0]),
        "l2_relative_drift": float((l2.max() - l2.min()) / l2[0]) if l2[0] > 0 else 0.0,
    }
    writer.json("report.json", report)
    samples = np.stack([inverse_transform(s).samples for s in traj.snapshots])
    figures.trajectory_figure(writer.path("solution.png"), traj.times, samples, grid.length)
    figures.conserved_figure(writer.path("conserved.png"), traj.times, l2)


def run_energy_track(cfg, writer: RunWriter, threads: int) -> None:
    grid = build_grid(cfg)
    u0 = build_initial_data(grid, cfg, writer.seed)
    solver_cfg = build_solver_config(grid, cfg)
    traj = simulate(u0, solver_cfg, cfg["stride"])
    im = IMultiplier(cfg["n_threshold"], cfg["s"])
    report = energy_series(traj, im, cfg["eps_den"])
    orders = cfg["orders"]
    max_order = max(orders)
    evaluator = EnergyEvaluator(grid, im, cfg["eps_den"], max_order=max_order)
    residuals = {
        order: derivative_identity_residual(traj, im, order, cfg["eps_den"], evaluator)
        for order in orders
    }
    res_cols = {order: np.full(len(traj.times), np.nan) for order in orders}
    for order, series in residuals.items():
        res_cols[order][1:-1] = series.residuals
    rows = []
    for i, t in enumerate(traj.times):
        row = [float(t), report.e2_series[i], report.e3_series[i], report.e4_series[i]]
        for order in (2, 3, 4):
            row.append(res_cols[order][i] if order in res_cols else np.nan)
        rows.append(row)
    writer.csv("energy.csv", ["t", "E2", "E3", "E4", "res2", "res3", "res4"], rows)
    writer.json(
        "report.json",
        {
            "n_threshold": im.n_threshold,
            "s": im.s,
            "drift2": report.drift2,
            "drift4": report.drift4,
            "resonance_exclusions": report.excluded,
            "max_residuals": {str(o): residuals[o].max_residual for o in orders},
            "dt": solver_cfg.dt,
        },
    )
    figures.energy_figure(
        writer.path("energies.png"),
        traj.times,
        {"E2": report.e2_series, "E3": report.e3_series, "E4": report.e4_series},
    )
    figures.residual_figure(writer.path("residuals.png"), residuals)


def run_acl_scaling(cfg, writer: RunWriter, threads: int) -> None:
    grid = build_grid(cfg)
    u0 = build_initial_data(grid, cfg, writer.seed)
    solver_cfg = build_solver_config(grid, cfg)
    traj = simulate(u0, solver_cfg, cfg["stride"])
    result = drift_experiment(traj, cfg["n_values"], cfg["s"], cfg["eps_den"])
    rows = []
    for rep in result.reports:
        for i, t in enumerate(rep.times):
            rows.append([float(t), rep.n_threshold, rep.e2_series[i], rep.e3_series[i], rep.e4_series[i]])
    writer.csv("energies.csv", ["t", "n", "e2", "e3", "e4"], rows)
    writer.json(
        "report.json",
        {
            "s": cfg["s"],
            "n_values": [r.n_threshold for r in result.reports],
            "drift2": [r.drift2 for r in result.reports],
            "drift4": [r.drift4 for r in result.reports],
            "slope_e2": result.slope_e2,
            "slope_e4": result.slope_e4,
            "slope_gap_ok": bool(result.slope_e4 <= result.slope_e2 - 1.0),
            "resonance_exclusions": [r.excluded for r in result.reports],
        },
    )
    figures.drift_scaling_figure(
        writer.path("drift_scaling.png"),
        [r.n_threshold for r in result.reports],
        [r.drift2 for r in result.reports],
        [r.drift4 for r in result.reports],
        result.slope_e2,
        result.slope_e4,
    )


def run_norm(cfg, writer: RunWriter, threads: int) -> None:
    path = cfg["input"]
    if path is None:
        raise ConfigError("norm command needs input=<file>")
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == b"KWSF":
        u = load_snapshot(path)
        if cfg["kind"] != "sobolev":
            raise ConfigError("snapshot inputs support kind=sobolev")
        value = sobolev_norm(u, cfg["s"])
    elif magic == b"KWST":
        f = load_spacetime(path)
        value = spacetime_norm(f, NormSpec(kind=cfg["kind"], s=cfg["s"], b=cfg["b"]))
    elif magic == b"KWTR":
        from .solver import load_trajectory

        traj = load_trajectory(path)
        f = spacetime_transform(traj, taper=cfg["taper"])
        value = spacetime_norm(f, NormSpec(kind=cfg["kind"], s=cfg["s"], b=cfg["b"]))
    else:
        raise ConfigError(f"unrecognised input magic {magic!r}")
    writer.json("report.json", {"input": os.path.basename(path), "kind": cfg["kind"],
                                "s": cfg["s"], "b": cfg["b"], "value": value})


def run_bilinear_test(cfg, writer: RunWriter, threads: int) -> None:
    family = cfg["family"]
    if family == "hh_low":
        reports = [hh_low_ratios(cfg["s"], cfg["scales"], count=cfg["count"],
                                 seed=writer.seed, beta=cfg["beta"])]
    elif family == "cases":
        def one(case):
            return bilinear_ratio_test(
                cfg["s"], cfg["scales"], cfg["count"], writer.seed, cfg["beta"], cases=(case,)
            )[case]

        reports = parallel_map(one, INTERACTION_CASES, threads)
    else:
        reports = [improved_bilinear_check(cfg["b"], cfg["scales"], cfg["n2"],
                                           cfg["count"], writer.seed, cfg["beta"])]
    rows = []
    for rep in reports:
        for scale, mx, mean, count in zip(rep.scales, rep.max_ratios, rep.mean_ratios, rep.counts):
            rows.append([rep.label, scale, mx, mean, count])
    writer.csv("ratios.csv", ["label", "scale", "max_ratio", "mean_ratio", "count"], rows)
    writer.json("report.json", {"family": family, "s": cfg["s"], "b": cfg["b"],
                                "reports": [rep.to_dict() for rep in reports]})
    figures.ratio_figure(writer.path("ratios.png"), reports)


def run_smoothing_test(cfg, writer: RunWriter, threads: int) -> None:
    rep = smoothing_check(cfg["n_values"], cfg["which"], cfg["count"], writer.seed, cfg["beta"])
    rows = [[rep.label, s, mx, mean, c]
            for s, mx, mean, c in zip(rep.scales, rep.max_ratios, rep.mean_ratios, rep.counts)]
    writer.csv("ratios.csv", ["label", "scale", "max_ratio", "mean_ratio", "count"], rows)
    writer.json("report.json", {"which": cfg["which"], "report": rep.to_dict()})
    figures.ratio_figure(writer.path("ratios.png"), [rep])


def run_gwp_schedule(cfg, writer: RunWriter, threads: int) -> None:
    sched = gwp_schedule(cfg["s"], cfg["t"], cfg["eps0"], cfg["c1"], cfg["c2"])
    writer.json(
        "report.json",
        {
            "s": sched.s,
            "horizon": sched.horizon,
            "eps0": sched.eps0,
            "lambda": sched.lam,
            "n_threshold": sched.n_threshold,
            "iteration_count": sched.iteration_count,
            "sup_norm_bound": sched.sup_norm_bound,
            "growth_exponent": {
                "nested_reading": sched.growth_exponent_nested,
                "product_reading": sched.growth_exponent_product,
                "note": "nested reading 7/(5(2s+5)) is the one consistent with the schedule algebra",
            },
            "growth_bound": {
                "nested_reading": sched.growth_bound_nested,
                "product_reading": sched.growth_bound_product,
            },
        },
    )


_RUNNERS = {
    "simulate": run_simulate,
    "energy-track": run_energy_track,
    "acl-scaling": run_acl_scaling,
    "norm": run_norm,
    "bilinear-test": run_bilinear_test,
    "smoothing-test": run_smoothing_test,
    "gwp-schedule": run_gwp_schedule,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="kwlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _RUNNERS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default="runs")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--seed", type=int, default=None)
    args = parser.parse_args(argv)
    try:
        with open(args.config) as fh:
            raw = parse_config_text(fh.read())
        cfg = validate_config(args.command, raw)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
    except (ConfigError, OSError, ValueError) as exc:
        print(f"kwlab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    config_text = canonical_config_text(cfg)
    writer = RunWriter(
        out_root=args.out,
        command=args.command,
        config_text=config_text,
        seed=cfg["seed"],
        threads=args.threads,
    )
    try:
        _RUNNERS[args.command](cfg, writer, args.threads)
    except ResourceLimitError as exc:
        print(f"kwlab: resource cap: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (BlowUpError, NearResonance, InfeasibleScheduleError) as exc:
        print(f"kwlab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ConfigError as exc:
        print(f"kwlab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KwlabError as exc:
        print(f"kwlab: failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    writer.manifest()
    print(writer.run_dir)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
