"""Command-line workbench tying the modules into reproducible experiment pipelines.

Every subcommand resolves a config (defaults < --config file < --set
overrides), runs its pipeline under a run folder, and writes CSV artifacts, a
resolved config, and a manifest.  For fixed seeds and worker counts the CSV
artifacts are bitwise reproducible; worker count only changes dispatch, never
values.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from .. import spectral, sde, hormander, feynman_kac as fk, eigen as eig, ldp
from ..spectral import SpectralField
from ..sde import NoisePath, TimeSymbol
from . import checkpoint, config as cfgmod, manifest as mani
from .manifest import RunFolder, write_csv
from . import plots


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fkns", description=__doc__)
    p.add_argument("subcommand", choices=[
        "simulate", "bracket-check", "eigen", "pressure", "ldp", "diagnose", "selftest",
    ])
    p.add_argument("--config", default=None, help="config file of dotted key = value lines")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--seed", type=int, default=None, help="override run.seed")
    p.add_argument("--workers", type=int, default=None, help="override run.workers")
    p.add_argument("--out", default=None, help="output folder (env FKNS_OUT overrides the root)")
    return p


def _resolve(args) -> dict:
    overrides: dict[str, object] = {}
    for item in args.overrides:
        if "=" not in item:
            raise cfgmod.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, _, v = item.partition("=")
        overrides[k.strip()] = cfgmod._parse_value(v)
    cfg = cfgmod.load_config(args.config, overrides)
    if args.seed is not None:
        cfg["run.seed"] = int(args.seed)
    if args.workers is not None:
        cfg["run.workers"] = int(args.workers)
    return cfg


def _out_dir(args) -> Path:
    root = os.environ.get("FKNS_OUT")
    if args.out is not None:
        base = Path(args.out)
        return Path(root) / base if (root and not base.is_absolute()) else base
    return Path(root or "runs") / args.subcommand


def _system(cfg):
    params = cfgmod.make_params(cfg)
    return params, cfgmod.make_forcing(cfg), cfgmod.make_noise(cfg)


def _probe_thetas(n_terms: int) -> list[tuple[str, np.ndarray, float]]:
    """Fixed dictionary probe potentials (id, theta, offset) used by pressure pipelines."""
    base = [
        ("V1", [0.4, 0.0, 0.0, 0.0], 0.0),
        ("V2", [0.0, 0.35, 0.0, 0.0], 0.0),
        ("V3", [0.0, 0.0, 0.45, 0.0], 0.0),
        ("V4", [0.2, -0.2, 0.0, 0.15], 0.0),
        ("V5", [-0.25, 0.1, 0.2, -0.1], 0.1),
    ]
    return [(i, np.asarray(th[:n_terms]), off) for i, th, off in base]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_simulate(run: RunFolder, cfg) -> int:
    params, forcing, noise = _system(cfg)
    seed = cfg["run.seed"]
    run.note_seed("simulate.path", seed)
    w0 = SpectralField.zero(params.torus)
    T = 10.0
    traj = sde.solve(
        w0, 0.0, T, TimeSymbol(0.0), NoisePath(seed, 0), params, forcing, noise,
        save_every=max(1, params.n_steps(T) // 64),
        observables={
            "energy": lambda W, s: spectral.sobolev_norm_batch(W, s) ** 2,
            "enstrophy": lambda W, s: spectral.sobolev_norm_batch(W, s, 1.0) ** 2,
        },
    )
    checkpoint.save_trajectory(
        run.path("trajectory.fkns"), params.torus, traj.coeffs,
        d=noise.d, nu=params.viscosity, dt=params.dt, h=0.0, t=T,
    )
    rows = [[float(t), float(e), float(z)] for t, e, z in zip(
        traj.observable_times, traj.observables["energy"], traj.observables["enstrophy"])]
    write_csv(run.path("series.csv"), ["t", "energy", "enstrophy"], rows)
    plots.plot_lines(
        run.path("series.svg"), traj.observable_times,
        {"energy": traj.observables["energy"], "enstrophy": traj.observables["enstrophy"]},
        "t", "value", "vorticity norms along one path",
    )
    return 0


def _cmd_bracket_check(run: RunFolder, cfg) -> int:
    params, _, noise = _system(cfg)
    closure = hormander.bracket_closure(
        noise, params.torus, cfg["bracket.max_levels"], cfg["bracket.rank_tol"]
    )
    write_csv(run.path("bracket.csv"), ["level", "dimension", "new_modes_added"],
              [list(r) for r in closure.csv_rows()])
    print(closure.verdict())
    return 0


def _cmd_eigen(run: RunFolder, cfg) -> int:
    params, forcing, noise = _system(cfg)
    seed = cfg["run.seed"]
    run.note_seed("eigen.triple", seed)
    dictionary = cfgmod.make_dictionary(cfg)
    _, theta, off = _probe_thetas(dictionary.n_terms)[3]
    potential = dictionary.make(theta, off)
    grid = cfgmod.make_grid(cfg)
    triple = eig.build_eigen_triple(
        potential, grid, params=params, forcing=forcing, noise=noise, seed=seed,
        n_particles=cfg["eigen.n_particles"], n_iters=cfg["eigen.n_iters"],
        kb_terms=cfg["eigen.kb_terms"], kb_paths=cfg["eigen.kb_paths"],
    )
    coc = eig.eigenvalue_cocycle_residual(triple, 1, 1, n_paths=max(16, cfg["eigen.n_particles"] // 2))
    rows = []
    for j, hj in enumerate(grid.nodes):
        rows.append([
            float(hj), float(triple.lam[j]), float(triple.lam_se[j]),
            float(triple.gammas[j].ess()),
            float(coc["nodes"][j]["relative_residual"]),
        ])
    write_csv(run.path("eigen.csv"), ["h", "lambda", "lambda_se", "ess", "cocycle_residual"], rows)
    checkpoint.save_eigen(
        run.path("eigen.fkns"), params.torus, triple.gammas, triple.lam,
        d=noise.d, nu=params.viscosity, dt=params.dt,
    )
    plots.plot_lines(run.path("lambda.svg"), grid.nodes, {"lambda": triple.lam},
                     "h", "lambda(h)", "eigenvalue density over the symbol circle")
    return 0


def _cmd_pressure(run: RunFolder, cfg) -> int:
    params, forcing, noise = _system(cfg)
    seed, workers = cfg["run.seed"], cfg["run.workers"]
    run.note_seed("pressure.table", seed)
    dictionary = cfgmod.make_dictionary(cfg)
    t, n_paths = cfg["pressure.t"], cfg["pressure.n_paths"]
    table = ldp.simulate_term_table(
        dictionary, t, 0.0, n_paths, SpectralField.zero(params.torus),
        params=params, forcing=forcing, noise=noise, seed=seed,
        workers=workers, chunk_size=cfg["run.chunk_size"],
    )
    grid = cfgmod.make_grid(cfg)
    rows = []
    for vid, theta, off in _probe_thetas(dictionary.n_terms):
        v = dictionary.make(theta, off)
        est = ldp.pressure_from_table(v, table)
        triple = eig.build_eigen_triple(
            v, grid, params=params, forcing=forcing, noise=noise, seed=seed,
            n_particles=cfg["eigen.n_particles"], n_iters=cfg["eigen.n_iters"],
            kb_terms=cfg["eigen.kb_terms"], kb_paths=cfg["eigen.kb_paths"],
        )
        qs, qs_se = ldp.pressure_spectral(v, triple)
        rows.append([vid, float(t), est.value, est.std_error, qs, qs_se])
    write_csv(run.path("pressure.csv"),
              ["V_id", "t", "Q_direct", "se_direct", "Q_spectral", "se_spectral"], rows)
    plots.plot_lines(
        run.path("pressure.svg"), np.arange(len(rows)),
        {"Q_direct": np.array([r[2] for r in rows]), "Q_spectral": np.array([r[4] for r in rows])},
        "potential index", "Q", "pressure by two routes",
    )
    return 0


def _cmd_ldp(run: RunFolder, cfg) -> int:
    params, forcing, noise = _system(cfg)
    seed, workers = cfg["run.seed"], cfg["run.workers"]
    run.note_seed("ldp.paths", seed)
    dictionary = cfgmod.make_dictionary(cfg)
    grid = cfgmod.make_grid(cfg)
    kw = dict(params=params, forcing=forcing, noise=noise, seed=seed,
              workers=workers, chunk_size=cfg["run.chunk_size"])

    triple0 = eig.build_eigen_triple(
        dictionary.make([0.0] * dictionary.n_terms), grid,
        params=params, forcing=forcing, noise=noise, seed=seed,
        n_particles=cfg["eigen.n_particles"], n_iters=cfg["eigen.n_iters"],
        kb_terms=cfg["eigen.kb_terms"], kb_paths=cfg["eigen.kb_paths"],
    )
    term = dictionary.terms[0]
    phi = term.squashed
    phi_g = ldp.centered_observable(phi, ldp.gamma_mean_curve(triple0, phi))

    T = cfg["ldp.clt_T"]
    lln = ldp.lln_decay(phi_g, [T / 8, T / 4, T / 2, T], cfg["ldp.clt_paths"], 0.0,
                        SpectralField.zero(params.torus), **kw)
    write_csv(run.path("lln.csv"), ["T", "rms", "rms_sqrt_T"],
              [[r["T"], r["rms"], r["rms_sqrt_T"]] for r in lln])
    clt = ldp.clt_diagnostic(phi_g, T, cfg["ldp.clt_paths"], 0.0,
                             SpectralField.zero(params.torus), **kw)
    write_csv(run.path("clt.csv"), ["quantile_correlation", "var_T4", "var_T2", "var_T"],
              [[clt["quantile_correlation"], *clt["variances"]]])

    sd = max(lln[-1]["rms"], 1e-9)
    dev = ldp.deviation_probability(
        phi_g, (2.0 * sd, math.inf), [T / 4, T / 2, T], cfg["ldp.clt_paths"], 0.0,
        SpectralField.zero(params.torus), **kw,
    )
    write_csv(run.path("deviation.csv"), ["T", "hits", "n", "p", "log_rate"],
              [[r["T"], r["hits"], r["n"], r["p"], r["log_rate"]] for r in dev["rows"]])

    oracle = ldp.SpectralPressureOracle(
        dictionary, grid, params=params, forcing=forcing, noise=noise, seed=seed,
        n_particles=max(16, cfg["eigen.n_particles"] // 2), n_iters=max(6, cfg["eigen.n_iters"] // 3),
    )
    target = ldp.EnsembleFamilyTarget(grid, triple0.gammas)
    rate = ldp.legendre(target, dictionary, oracle, cap=cfg["ldp.rate_cap"], max_iters=8)
    write_csv(run.path("rate.csv"), ["mu_id", "I", "gap", "iterations", "diverged"],
              [["gamma0", rate.value, rate.gap, rate.iterations, int(rate.diverged)]])
    plots.plot_lines(run.path("lln.svg"), [r["T"] for r in lln],
                     {"rms*sqrt(T)": np.array([r["rms_sqrt_T"] for r in lln])},
                     "T", "compensated deviation", "law-of-large-numbers decay")
    return 0


def _cmd_diagnose(run: RunFolder, cfg) -> int:
    params, forcing, noise = _system(cfg)
    seed = cfg["run.seed"]
    run.note_seed("diagnose", seed)
    dictionary = cfgmod.make_dictionary(cfg)
    v = dictionary.make([0.3, 0.0, 0.0, 0.1][: dictionary.n_terms])
    rng = sde.derived_rng(seed, (9, 0))
    probes = [SpectralField.random(params.torus, rng, scale=s) for s in (0.3, 0.8)]
    balls = [SpectralField.zero(params.torus), SpectralField.random(params.torus, rng, scale=0.2)]
    rows = fk.growth_condition_probe(
        v, 1.0, 2.0, [1.0, 2.0], probes, balls,
        params=params, forcing=forcing, noise=noise, seed=seed, n_paths=64,
    )
    write_csv(run.path("growth.csv"), ["t", "q", "radius", "ratio"],
              [[r["t"], r["q"], r["radius"], r["ratio"]] for r in rows])
    pairs = [(probes[0], probes[1])]
    frows = fk.feller_probe(v, fk.one, pairs, 1.0,
                            params=params, forcing=forcing, noise=noise, seed=seed, n_paths=64)
    write_csv(run.path("feller.csv"), ["distance", "quotient", "se"],
              [[r["distance"], r["quotient"], r["se"]] for r in frows])
    budget = sde.energy_budget_residual(
        SpectralField.from_modes(params.torus, {(1, 0): 0.3, (1, 1): 0.2j}),
        0.0, 2.0, params, forcing,
    )
    write_csv(run.path("budget.csv"), ["energy_budget_residual"], [[budget]])
    return 0


def _cmd_selftest(run: RunFolder, cfg) -> int:
    """Exact identities at desk scale; any failure exits nonzero."""
    params, forcing, noise = _system(cfg)
    seed, workers = cfg["run.seed"], cfg["run.workers"]
    run.note_seed("selftest", seed)
    spec_ = params.torus
    checks: list[tuple[str, float, float]] = []  # (name, value, tolerance)

    slow = sde.SimulationParams(1.0, params.dt, spec_, include_nonlinearity=True)
    w = SpectralField.from_modes(spec_, {(1, 0): 0.5})
    traj = sde.solve(w, 0.0, 2.0, 0.0, None, slow, sde.ForcingSpec.zero(spec_), None,
                     save_every=slow.n_steps(2.0))
    checks.append(("heat_decay", abs(traj.terminal.norm() / w.norm() - math.exp(-2.0)), 1e-10))

    u = spectral.biot_savart(w)
    checks.append(("biot_savart_mode", abs(u.component(2).coeff((1, 0)) - (-0.5j)), 1e-14))
    checks.append(("nonlinear_shear_zero", spectral.nonlinear_term(w).norm(), 1e-14))
    w2 = SpectralField.from_modes(spec_, {(2, 0): 0.5})
    checks.append(("sobolev_scaling", abs(w2.norm(2.0) - 4.0 * w2.norm()), 1e-12))

    path = NoisePath(seed, 7)
    s_, t_ = 0.5, 0.75
    a = sde.solve(w, s_, s_ + t_, 1.2, path, params, forcing, noise).terminal
    b = sde.solve(w, 0.0, t_, sde.beta(1.2, s_), path, params, forcing, noise).terminal
    checks.append(("translation_bitwise", 0.0 if np.array_equal(a.data, b.data) else 1.0, 0.0))
    checks.append(("symbol_period", abs(sde.beta(1.2, 2.0 * math.pi) - 1.2), 1e-12))

    kwfk = dict(params=params, forcing=forcing, noise=noise, seed=seed)
    est0 = fk.fk_apply(fk.one, 0.0, 1.0, 0.0, w, 32, potential=fk.PotentialSpec.constant(0.0), **kwfk)
    checks.append(("fk_unit", abs(est0.value - 1.0), 0.0))
    estc = fk.fk_apply(fk.one, 0.0, 1.0, 0.0, w, 32, potential=fk.PotentialSpec.constant(0.7), **kwfk)
    checks.append(("fk_constant", abs(estc.value / math.exp(0.7) - 1.0), 1e-12))
    dictionary = cfgmod.make_dictionary(cfg)
    v = dictionary.make([0.3, 0.2, 0.0, 0.1][: dictionary.n_terms])
    _, s1 = fk.fk_apply(fk.one, 0.0, 0.5, 0.0, w, 16, potential=v, return_samples=True, **kwfk)
    _, s2 = fk.fk_apply(fk.one, 0.0, 0.5, 0.0, w, 16, potential=v.shifted(0.4), return_samples=True, **kwfk)
    checks.append(("fk_shift_covariance",
                   float(np.max(np.abs(s2 / (s1 * math.exp(0.4 * 0.5)) - 1.0))), 1e-12))

    closure = hormander.bracket_closure([], spec_, 3)
    checks.append(("bracket_empty", float(closure.final_dimension), 0.0))
    closure1 = hormander.bracket_closure([w], spec_, 5)
    checks.append(("bracket_single_mode", float(closure1.final_dimension - 1), 0.0))

    ens = fk.WeightedEnsemble.from_point(w, 8)
    cp = run.path("selftest_ensemble.fkns")
    checkpoint.save_ensemble(cp, ens, d=noise.d, nu=params.viscosity, dt=params.dt, h=0.0, t=0.0)
    back = checkpoint.load_checkpoint(cp)["ensemble"]
    ok = np.array_equal(back.coeffs, ens.coeffs) and np.array_equal(back.weights, ens.weights)
    checks.append(("checkpoint_roundtrip", 0.0 if ok else 1.0, 0.0))

    table = ldp.simulate_term_table(
        dictionary, 1.0, 0.0, 64, SpectralField.zero(spec_),
        params=params, forcing=forcing, noise=noise, seed=seed,
        workers=workers, chunk_size=cfg["run.chunk_size"],
    )
    qc = ldp.pressure_from_table(dictionary.make([0.0] * dictionary.n_terms, 0.6), table)
    checks.append(("pressure_constant", abs(qc.value - 0.6), 1e-12))
    q1 = ldp.pressure_from_table(v, table)
    q2 = ldp.pressure_from_table(v.shifted(0.25), table)
    checks.append(("pressure_shift", abs(q2.value - q1.value - 0.25), 1e-12))

    mu = fk.fk_measure_apply(ens, 0.5, 0.0, potential=fk.PotentialSpec.constant(0.0), **kwfk)
    checks.append(("duality_mass_preserved", abs(mu.total_mass - 1.0), 1e-12))

    rows = []
    failures = 0
    for name, value, tol in checks:
        ok = value <= tol + 1e-300
        failures += 0 if ok else 1
        rows.append([name, float(value), float(tol), "PASS" if ok else "FAIL"])
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {value:.3e} (tol {tol:.1e})")
    write_csv(run.path("selftest.csv"), ["check", "value", "tolerance", "status"], rows)
    return 0 if failures == 0 else 1


_COMMANDS = {
    "simulate": _cmd_simulate,
    "bracket-check": _cmd_bracket_check,
    "eigen": _cmd_eigen,
    "pressure": _cmd_pressure,
    "ldp": _cmd_ldp,
    "diagnose": _cmd_diagnose,
    "selftest": _cmd_selftest,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _resolve(args)
    except cfgmod.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    run = RunFolder(_out_dir(args), args.subcommand, cfg)
    try:
        status = _COMMANDS[args.subcommand](run, cfg)
    finally:
        run.finish()
    return status


if __name__ == "__main__":
    sys.exit(main())
