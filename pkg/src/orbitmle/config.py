"""Run configuration: TOML ingestion with fail-fast validation.

One file drives every command; commands read only the sections they
need. Unknown keys are rejected with the full dotted key path in the
message.
"""

from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ParameterBounds, RadarSite, Scenario, StateVector, derive_stream
from .consistency import AssumptionCheckConfig, default_far_probes
from .measurement import generate_sites
from .solver import SolverOptions

_TAG_SITES = 11


class ConfigError(ValueError):
    """Invalid run configuration; message names the offending key."""


@dataclass(frozen=True)
class SweepConfig:
    radar_counts: tuple = (4, 16, 64, 256)
    trials: int = 100


@dataclass(frozen=True)
class RunConfig:
    scenario: Scenario
    solver: SolverOptions
    assumptions: AssumptionCheckConfig
    sweep: SweepConfig
    seed: int


def _take(table: dict, section: str, known: dict) -> dict:
    """Pop known keys (with defaults); reject anything left over."""
    out = {}
    for key, default in known.items():
        out[key] = table.pop(key, default)
    if table:
        bad = next(iter(table))
        raise ConfigError(f"unknown key '{section}.{bad}'" if section
                          else f"unknown key '{bad}'")
    return out


def _vec3(value, key: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
        if arr.shape != (3,):
            raise ValueError
        return arr
    except (TypeError, ValueError):
        raise ConfigError(f"'{key}' must be a list of 3 numbers") from None


def _build(cls, kwargs, section: str):
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"in [{section}]: {exc}") from exc


def load_config(path: str, seed_override: int | None = None) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error: {exc}") from exc

    top = _take(raw, "", {"seed": 0, "scenario": None, "solver": {},
                          "assumptions": {}, "sweep": {}})
    seed = int(top["seed"]) if seed_override is None else int(seed_override)
    if top["scenario"] is None:
        raise ConfigError("missing required [scenario] section")

    scn_tbl = dict(top["scenario"])
    scn = _take(scn_tbl, "scenario", {
        "truth_r": None, "truth_v": None, "bounds": {}, "generator": None,
        "sites": None})
    if scn["truth_r"] is None or scn["truth_v"] is None:
        raise ConfigError("scenario.truth_r and scenario.truth_v are required")
    truth = StateVector(r=_vec3(scn["truth_r"], "scenario.truth_r"),
                        v=_vec3(scn["truth_v"], "scenario.truth_v"))
    bounds_kw = _take(dict(scn["bounds"]), "scenario.bounds",
                      {"r_min": 6.471e6, "r_max": 5.0e7, "v_max": 1.5e4})
    bounds = _build(ParameterBounds, bounds_kw, "scenario.bounds")

    if (scn["generator"] is None) == (scn["sites"] is None):
        raise ConfigError("exactly one of scenario.generator or scenario.sites "
                          "must be given")
    if scn["generator"] is not None:
        gen = _take(dict(scn["generator"]), "scenario.generator", {
            "num_sites": 8, "sigma_d": None, "kappa": None, "sigma_f": None,
            "f_c": None})
        for k in ("sigma_d", "kappa", "sigma_f", "f_c"):
            if gen[k] is None:
                raise ConfigError(f"scenario.generator.{k} is required")
            if not (float(gen[k]) > 0):
                raise ConfigError(f"scenario.generator.{k} must be strictly "
                                  f"positive, got {gen[k]}")
        if int(gen["num_sites"]) < 1:
            raise ConfigError("scenario.generator.num_sites must be >= 1")
        sites = generate_sites(truth.r, int(gen["num_sites"]),
                               derive_stream(seed, _TAG_SITES),
                               sigma_d=float(gen["sigma_d"]),
                               kappa=float(gen["kappa"]),
                               sigma_f=float(gen["sigma_f"]),
                               f_c=float(gen["f_c"]))
    else:
        sites = []
        for i, tbl in enumerate(scn["sites"]):
            kw = _take(dict(tbl), f"scenario.sites[{i}]", {
                "s": None, "sigma_d": None, "kappa": None, "sigma_f": None,
                "f_c": None})
            for k, v in kw.items():
                if v is None:
                    raise ConfigError(f"scenario.sites[{i}].{k} is required")
            try:
                sites.append(RadarSite(s=_vec3(kw["s"], f"scenario.sites[{i}].s"),
                                       sigma_d=float(kw["sigma_d"]),
                                       kappa=float(kw["kappa"]),
                                       sigma_f=float(kw["sigma_f"]),
                                       f_c=float(kw["f_c"])))
            except ValueError as exc:
                raise ConfigError(f"in scenario.sites[{i}]: {exc}") from exc

    try:
        scenario = Scenario(truth=truth, sites=sites, bounds=bounds, seed=seed)
    except ValueError as exc:
        raise ConfigError(f"in [scenario]: {exc}") from exc

    solver_kw = _take(dict(top["solver"]), "solver", {
        "max_iterations": 500, "gradient_tolerance": 1e-8,
        "step_tolerance": 1e-12, "num_starts": 8, "armijo_c": 1e-4,
        "backtrack_factor": 0.5})
    solver_kw["max_iterations"] = int(solver_kw["max_iterations"])
    solver_kw["num_starts"] = int(solver_kw["num_starts"])
    solver = _build(SolverOptions, solver_kw, "solver")

    as_tbl = dict(top["assumptions"])
    as_kw = _take(as_tbl, "assumptions", {
        "rho": 1e-3, "delta": None, "num_mc_samples": 20000,
        "num_probes_ball": 64, "num_probes": 20, "probes": None})
    if as_kw["probes"] is not None:
        probes = []
        for i, tbl in enumerate(as_kw["probes"]):
            kw = _take(dict(tbl), f"assumptions.probes[{i}]", {"r": None, "v": None})
            if kw["r"] is None or kw["v"] is None:
                raise ConfigError(f"assumptions.probes[{i}] needs r and v")
            probes.append(StateVector(r=_vec3(kw["r"], "r"), v=_vec3(kw["v"], "v")))
    else:
        probes = default_far_probes(scenario, int(as_kw["num_probes"]),
                                    float(as_kw["rho"]))
    assumptions = _build(AssumptionCheckConfig, {
        "rho": float(as_kw["rho"]),
        "delta": None if as_kw["delta"] is None else float(as_kw["delta"]),
        "num_mc_samples": int(as_kw["num_mc_samples"]),
        "probe_states": tuple(probes),
        "num_probes_ball": int(as_kw["num_probes_ball"])}, "assumptions")
    # probe invariant: feasible and clear of the rho-ball around the truth
    x0 = scenario.truth.scaled()
    for i, probe in enumerate(assumptions.probe_states):
        if not bounds.contains(probe):
            raise ConfigError(f"assumptions.probes[{i}] is infeasible")
        if float(np.linalg.norm(probe.scaled() - x0)) < 2.0 * assumptions.rho:
            raise ConfigError(f"assumptions.probes[{i}] is within 2*rho of the "
                              "true state")

    sweep_kw = _take(dict(top["sweep"]), "sweep",
                     {"radar_counts": [4, 16, 64, 256], "trials": 100})
    counts = tuple(int(n) for n in sweep_kw["radar_counts"])
    if any(b <= a for a, b in zip(counts, counts[1:])):
        raise ConfigError("sweep.radar_counts must be strictly increasing")
    if int(sweep_kw["trials"]) < 1:
        raise ConfigError("sweep.trials must be >= 1")
    sweep = SweepConfig(radar_counts=counts, trials=int(sweep_kw["trials"]))

    return RunConfig(scenario=scenario, solver=solver, assumptions=assumptions,
                     sweep=sweep, seed=seed)
