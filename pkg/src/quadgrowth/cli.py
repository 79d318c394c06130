"""Command-line entry point.

Usage::

    quadgrowth <command> [operation] --config run.toml --out results/ [--workers N] [--seed S]

Every flag has an environment override with the ``QUADGROWTH_`` prefix
(``QUADGROWTH_CONFIG``, ``QUADGROWTH_OUT``, ``QUADGROWTH_WORKERS``,
``QUADGROWTH_SEED``); an explicit flag wins over the environment.

A run validates the whole config before computing anything.  Output files
are written only after the computation succeeded, together with a
``manifest.json`` that lists each file with its SHA-256 digest.  Exit codes:
0 success, 2 config error, 3 precondition violation, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .classical import PhasePoint, action_batch, focal_time, flow, straight_line_action
from .config import check_keys, field_from, get, grid_from, load_config, potential_from, section
from .errors import ConfigError, QuadGrowthError
from .experiments import (
    approx_solution_sweep,
    scaling_limit_experiment,
    strong_convergence_experiment,
    threshold_sweep,
)
from .grid import GridSpec, boundary_fraction, l2_norm
from .linprop import dispersive_ratio, propagate
from .nls import NLSProblem, ObservableSeries, detect_blowup, ground_state_W, split_step_evolve, strichartz_S
from .output import csv_bytes, dumps, sha256
from .potential import Harmonic, ZeroPotential, verify_hypotheses

ENV_PREFIX = "QUADGROWTH_"
METHODS = ("free", "mehler", "fujiwara", "spectral")


class Context:
    def __init__(self, workers: int, seed: int):
        self.workers = workers
        self.seed = seed


def _tables(cfg: dict, allowed) -> None:
    extra = sorted(set(cfg) - set(allowed) - {"meta"})
    if extra:
        raise ConfigError(f"unknown top-level tables {extra}; this command reads {sorted(allowed)}")


def _times(s: dict, key: str, where: str) -> list[float]:
    v = s.get(key)
    if isinstance(v, list):
        return get(s, key, "floats", where=where)
    return [get(s, key, "float", where=where)]


def _slope(t, err) -> float | None:
    t = np.asarray(t, dtype=float)
    e = np.asarray(err, dtype=float)
    ok = (t > 0) & (e > 0)
    if ok.sum() < 2:
        return None
    return float(np.polyfit(np.log(t[ok]), np.log(e[ok]), 1)[0])


def _json(obj) -> bytes:
    return dumps(obj).encode("utf-8")


# ---------------------------------------------------------------- verify-potential


def cmd_verify(cfg, ctx, op):
    _tables(cfg, ("potential", "verify"))
    p = potential_from(cfg)
    s = section(cfg, "verify", required=False)
    check_keys(s, ("box", "samples", "dim", "delta", "seed", "rtol"), "verify")
    box = get(s, "box", "any", [-5.0, 5.0], "verify")
    if not (isinstance(box, list) and len(box) == 2):
        raise ConfigError("verify.box must be [lo, hi] (numbers or per-axis lists)")
    kw = dict(
        samples=get(s, "samples", "int", 512, "verify"),
        dim=get(s, "dim", "int", None, "verify"),
        delta=get(s, "delta", "float", None, "verify"),
        seed=get(s, "seed", "int", ctx.seed, "verify"),
        rtol=get(s, "rtol", "float", 1e-12, "verify"),
    )
    rep = verify_hypotheses(p, box, **kw)
    out = rep.to_dict()
    out["potential"] = {"name": p.name, "params": p.params}
    return {"hypotheses.json": _json(out)}, {"passed": rep.passed}


# ---------------------------------------------------------------- classical


def _bvp_kw(s, where):
    return dict(
        dt=get(s, "dt", "float", 1e-3, where),
        scheme=get(s, "scheme", "str", "yoshida4", where),
        tol=get(s, "tol", "float", 1e-10, where),
        max_iter=get(s, "max_iter", "int", 25, where),
        check_focal=get(s, "check_focal", "bool", True, where),
    )


_BVP_KEYS = ("dt", "scheme", "tol", "max_iter", "check_focal")


def classical_flow(cfg, ctx):
    _tables(cfg, ("potential", "flow"))
    p = potential_from(cfg)
    s = section(cfg, "flow")
    check_keys(s, ("y", "eta", "T", "dt", "scheme"), "flow")
    start = PhasePoint(get(s, "y", "vec", where="flow"), get(s, "eta", "vec", where="flow"))
    T = get(s, "T", "float", where="flow")
    dt = get(s, "dt", "float", 1e-3, "flow")
    scheme = get(s, "scheme", "str", "yoshida4", "flow")
    tr = flow(p, start, T, dt, scheme=scheme)
    summary = {
        "T": T,
        "dt": dt,
        "scheme": scheme,
        "steps": len(tr.times) - 1,
        "final_x": tr.x[-1],
        "final_xi": tr.xi[-1],
        "energy_drift": tr.energy_drift,
    }
    return {"trajectory.csv": tr.to_csv_bytes(), "flow.json": _json(summary)}, summary


def classical_bvp(cfg, ctx):
    _tables(cfg, ("potential", "bvp"))
    p = potential_from(cfg)
    s = section(cfg, "bvp")
    check_keys(s, ("x", "y", "t") + _BVP_KEYS, "bvp")
    x = get(s, "x", "vec", where="bvp")
    y = get(s, "y", "vec", where="bvp")
    t = get(s, "t", "float", where="bvp")
    if x.size != y.size:
        raise ConfigError("bvp.x and bvp.y must have the same length")
    S, eta, res, its = action_batch(p, t, x[None, :], y[None, :], **_bvp_kw(s, "bvp"))
    summary = {
        "t": t,
        "x": x,
        "y": y,
        "eta_star": eta[0],
        "S": float(S[0]),
        "newton_residual": float(res[0]),
        "iterations": int(its[0]),
    }
    return {"bvp.json": _json(summary)}, summary


def classical_action(cfg, ctx):
    """Action table.

    Either explicit endpoints (``x``, ``y`` and one or more ``t``) or a random
    batch (``count`` points with ``t`` uniform in ``(t_min, t_max]`` and
    endpoints uniform in ``[-box, box]^dim``).
    """
    _tables(cfg, ("potential", "action"))
    p = potential_from(cfg)
    s = section(cfg, "action")
    check_keys(
        s, ("x", "y", "t", "count", "t_min", "t_max", "box", "dim", "seed", "straight_line") + _BVP_KEYS, "action"
    )
    kw = _bvp_kw(s, "action")
    with_line = get(s, "straight_line", "bool", True, "action")
    if "count" in s:
        for k in ("x", "y", "t"):
            if k in s:
                raise ConfigError(f"action.{k} cannot be combined with action.count")
        count = get(s, "count", "int", where="action")
        if count < 1:
            raise ConfigError("action.count must be positive")
        t_min = get(s, "t_min", "float", 0.0, "action")
        t_max = get(s, "t_max", "float", 1.0, "action")
        box = get(s, "box", "float", 5.0, "action")
        dim = get(s, "dim", "int", p.dim or 1, "action")
        if not 0 <= t_min < t_max:
            raise ConfigError("action requires 0 <= t_min < t_max")
        rng = np.random.default_rng(get(s, "seed", "int", ctx.seed, "action"))
        # 1 - U[0,1) lies in (0, 1], so t never reaches t_min
        t = t_min + (t_max - t_min) * (1.0 - rng.random(count))
        x = rng.uniform(-box, box, (count, dim))
        y = rng.uniform(-box, box, (count, dim))
        mode = "random"
    else:
        xv = get(s, "x", "vec", where="action")
        yv = get(s, "y", "vec", where="action")
        if xv.size != yv.size:
            raise ConfigError("action.x and action.y must have the same length")
        t = np.asarray(_times(s, "t", "action"))
        x = np.broadcast_to(xv, (t.size, xv.size)).copy()
        y = np.broadcast_to(yv, (t.size, yv.size)).copy()
        mode = "points"
    if np.any(t <= 0):
        raise ConfigError("action times must be positive")

    S, eta, res, its = action_batch(p, t, x, y, **kw)
    d = x.shape[1]
    free = np.sum((x - y) ** 2, axis=1) / (2 * t)
    omega = (S - free) / t
    header = ["t"] + [f"x{i + 1}" for i in range(d)] + [f"y{i + 1}" for i in range(d)]
    header += ["S", "omega"] + [f"eta{i + 1}" for i in range(d)] + ["newton_residual", "iterations"]
    cols = [t[:, None], x, y, S[:, None], omega[:, None], eta, res[:, None]]
    line = None
    if with_line:
        line = np.asarray(straight_line_action(p, t, x, y), dtype=float).reshape(-1)
        header += ["S_line", "defect"]
    rows = []
    for i in range(t.size):
        r = [float(v) for c in cols for v in c[i]] + [int(its[i])]
        if line is not None:
            r += [float(line[i]), float(abs(S[i] - line[i]))]
        rows.append(r)
    summary = {
        "mode": mode,
        "count": int(t.size),
        "max_newton_residual": float(np.max(res)),
        "max_iterations": int(np.max(its)),
        "scheme": kw["scheme"],
        "dt": kw["dt"],
    }
    if t.size == 1:
        summary.update(S=float(S[0]), omega=float(omega[0]), eta_star=eta[0], t=float(t[0]), x=x[0], y=y[0])
    if line is not None and mode == "points" and t.size >= 2:
        summary["defect_slope"] = _slope(t, np.abs(S - line))
    return {"action.csv": csv_bytes(header, rows), "action.json": _json(summary)}, summary


def classical_focal(cfg, ctx):
    _tables(cfg, ("potential", "focal"))
    p = potential_from(cfg)
    s = section(cfg, "focal", required=False)
    check_keys(s, ("region", "t_max", "samples", "dt", "threshold", "dim", "seed"), "focal")
    region = get(s, "region", "floats", [-5.0, 5.0], "focal")
    if len(region) != 2:
        raise ConfigError("focal.region must be [lo, hi]")
    rep = focal_time(
        p,
        tuple(region),
        get(s, "t_max", "float", 2.0, "focal"),
        dim=get(s, "dim", "int", None, "focal"),
        samples=get(s, "samples", "int", 64, "focal"),
        dt=get(s, "dt", "float", 1e-3, "focal"),
        threshold=get(s, "threshold", "float", 0.5, "focal"),
        seed=get(s, "seed", "int", ctx.seed, "focal"),
    )
    summary = rep.to_dict()
    return {"focal.json": _json(summary)}, summary


# ---------------------------------------------------------------- propagate


def _potential_for(cfg, method):
    if "potential" in cfg:
        return potential_from(cfg)
    if method == "free":
        return ZeroPotential()
    if method == "mehler":
        return Harmonic()
    raise ConfigError(f"method {method!r} needs a [potential] table")


def cmd_propagate(cfg, ctx, method):
    _tables(cfg, ("potential", "grid", "field", "propagate"))
    grid = grid_from(cfg)
    f = field_from(cfg, grid)
    s = section(cfg, "propagate")
    check_keys(s, ("t", "compare", "order", "dt", "check_focal", "save_fields", "field_csv"), "propagate")
    times = _times(s, "t", "propagate")
    compare = get(s, "compare", "str", None, "propagate")
    if compare is not None and compare not in METHODS:
        raise ConfigError(f"propagate.compare must be one of {METHODS}")
    order = get(s, "order", "int", 4, "propagate")
    if order not in (2, 4):
        raise ConfigError("propagate.order must be 2 or 4")
    kdt = get(s, "dt", "float", None, "propagate")
    check_focal = get(s, "check_focal", "bool", True, "propagate")
    save = get(s, "save_fields", "bool", True, "propagate")
    as_csv = get(s, "field_csv", "bool", False, "propagate")
    if as_csv and grid.d != 1:
        raise ConfigError("propagate.field_csv is only available in one dimension")
    p = _potential_for(cfg, method)
    ref_p = _potential_for(cfg, compare) if compare else None

    def run(m, pot, t):
        kw = {}
        if m == "fujiwara":
            kw = {"dt": kdt, "workers": ctx.workers, "check_focal": check_focal}
        elif m == "spectral":
            kw = {"order": order}
        return propagate(m, pot, f, t, **kw)

    outputs = {}
    n0 = f.norm()
    rows = []
    rel = []
    for i, t in enumerate(times):
        u = run(method, p, t)
        row = {"t": t, "norm_ratio": u.norm() / n0 if n0 else float("nan"), "sup": u.sup()}
        if compare:
            ref = run(compare, ref_p, t)
            e = l2_norm(grid, u.values - ref.values) / ref.norm()
            row["rel_l2"] = e
            rel.append(e)
        rows.append(row)
        if save:
            outputs[f"field_{i:03d}.bin"] = u.to_bytes()
            if as_csv:
                outputs[f"field_{i:03d}.csv"] = u.to_csv_bytes()
    summary = {"method": method, "order": order if "spectral" in (method, compare) else None, "runs": rows}
    if compare:
        summary["compare"] = compare
        summary["rel_l2_slope"] = _slope(times, rel) if len(times) >= 2 else None
    header = ["t", "norm_ratio", "sup"] + (["rel_l2"] if compare else [])
    outputs["propagate.csv"] = csv_bytes(header, [[r[k] for k in header] for r in rows])
    outputs["propagate.json"] = _json(summary)
    return outputs, summary


# ---------------------------------------------------------------- nls


def _problem(cfg):
    grid = grid_from(cfg)
    s = section(cfg, "nls")
    mu = get(s, "mu", "int", 1, "nls")
    if mu not in (-1, 0, 1):
        raise ConfigError("nls.mu must be -1 (focusing), 0 (linear) or 1 (defocusing)")
    pw = get(s, "p", "float", None, "nls")
    prob = NLSProblem(potential_from(cfg), grid, mu=mu, p=pw)
    return prob, field_from(cfg, grid), s


def nls_evolve(cfg, ctx):
    _tables(cfg, ("potential", "grid", "field", "nls"))
    prob, u0, s = _problem(cfg)
    check_keys(s, ("mu", "p", "T", "dt", "obs_every", "cap_factor", "check_boundary", "boundary_tol"), "nls")
    T = get(s, "T", "float", where="nls")
    dts = _times(s, "dt", "nls")
    kw = dict(
        obs_every=get(s, "obs_every", "int", 10, "nls"),
        cap_factor=get(s, "cap_factor", "float", 1e3, "nls"),
        check_boundary=get(s, "check_boundary", "bool", True, "nls"),
        boundary_tol=get(s, "boundary_tol", "float", 1e-8, "nls"),
    )
    if kw["obs_every"] < 1:
        raise ConfigError("nls.obs_every must be positive")
    outputs = {}
    runs = []
    for i, dt in enumerate(dts):
        res = split_step_evolve(prob, u0, T, dt, **kw)
        tag = "" if len(dts) == 1 else f"_{i:03d}"
        outputs[f"observables{tag}.csv"] = res.series.to_csv_bytes()
        outputs[f"final{tag}.bin"] = res.final.to_bytes()
        ser = res.series
        summ = res.summary()
        summ["dt"] = dt
        summ["detected_blowup_time"] = detect_blowup(ser)
        summ["strichartz_S"] = strichartz_S(ser, (ser.times[0], ser.times[-1])) if len(ser.times) > 1 else 0.0
        runs.append(summ)
    summary = {"T": T, "mu": prob.mu, "p": prob.p, "runs": runs}
    if len(runs) > 1:
        summary["energy_drift_ratios"] = [
            a["energy_drift"] / b["energy_drift"] if b["energy_drift"] > 0 else None for a, b in zip(runs, runs[1:])
        ]
    outputs["evolve.json"] = _json(summary)
    return outputs, summary


def nls_observables(cfg, ctx):
    _tables(cfg, ("potential", "grid", "field", "nls"))
    prob, u0, s = _problem(cfg)
    check_keys(s, ("mu", "p"), "nls")
    ser = ObservableSeries(mu=prob.mu)
    ser.record(prob, 0.0, u0.values)
    summary = {k: getattr(ser, k)[0] for k in ("mass", "energy", "kinetic", "qh", "sup_norm", "strichartz_density")}
    summary.update(mu=prob.mu, p=prob.p, boundary_fraction=boundary_fraction(prob.grid, u0.values))
    return {"observables.json": _json(summary)}, summary


def nls_ground_state(cfg, ctx):
    _tables(cfg, ("ground_state",))
    s = section(cfg, "ground_state", required=False)
    check_keys(s, ("L", "n", "radius", "slab"), "ground_state")
    grid = GridSpec(3, get(s, "L", "float", 6.4, "ground_state"), get(s, "n", "int", 256, "ground_state"))
    gs = ground_state_W(grid, get(s, "radius", "float", 5.0, "ground_state"), get(s, "slab", "int", 16, "ground_state"))
    c = grid.n // 2
    ax = grid.axis
    line = gs.values[:, c, c]
    exact = (1.0 + 2.0 * ax**2 / 3.0) ** -0.5
    summary = gs.summary()
    summary["h"] = grid.h
    prof = csv_bytes(["x", "W", "W_closed_form"], zip(ax, line, exact))
    return {"ground_state.json": _json(summary), "profile.csv": prof}, summary


# ---------------------------------------------------------------- experiments


def _profile(cfg):
    pg = grid_from(cfg, "profile_grid")
    return pg, field_from(cfg, pg)


def _series_out(name, res, extra):
    summary = dict(res.meta)
    summary.update(extra)
    return {f"{name}.csv": res.to_csv_bytes(), f"{name}.json": _json(summary)}, summary


def _decreasing(v) -> bool:
    v = np.asarray(v, dtype=float)
    return bool(np.all(np.diff(v) < 0))


def exp_strong(cfg, ctx):
    _tables(cfg, ("potential", "profile_grid", "physical_grid", "field", "experiment"))
    p = potential_from(cfg)
    _, phi = _profile(cfg)
    phys = grid_from(cfg, "physical_grid")
    s = section(cfg, "experiment")
    check_keys(s, ("Ns", "t_inf", "c", "steps", "final_threshold"), "experiment")
    threshold = get(s, "final_threshold", "float", None, "experiment")
    res = strong_convergence_experiment(
        p,
        phi,
        get(s, "Ns", "ints", [4, 8, 16, 32, 64], "experiment"),
        get(s, "t_inf", "float", 0.5, "experiment"),
        c=get(s, "c", "float", 1.0, "experiment"),
        phys=phys,
        steps=get(s, "steps", "int", 200, "experiment"),
        workers=ctx.workers,
    )
    em, eu, fl = res.column("err_mod"), res.column("err_unmod"), res.meta["floor"]
    extra = {
        "err_mod_decreasing": _decreasing(em),
        "final_err_mod": float(em[-1]),
        "unmod_above_floor": bool(np.all(eu >= fl)),
        "mod_below_floor": bool(em[-1] < fl),
        "final_threshold": threshold,
    }
    if threshold is not None:
        extra["passed"] = bool(
            extra["err_mod_decreasing"] and extra["unmod_above_floor"] and extra["mod_below_floor"]
            and em[-1] < threshold
        )
    return _series_out("strong_convergence", res, extra)


def exp_scaling(cfg, ctx):
    _tables(cfg, ("potential", "profile_grid", "physical_grid", "field", "experiment"))
    p = potential_from(cfg)
    _, phi = _profile(cfg)
    phys = grid_from(cfg, "physical_grid")
    s = section(cfg, "experiment")
    check_keys(s, ("lambdas", "mu", "power", "x0", "c", "steps", "max_last_ratio"), "experiment")
    max_ratio = get(s, "max_last_ratio", "float", None, "experiment")
    lambdas = get(s, "lambdas", "floats", [0.25, 0.125, 0.0625], "experiment")
    mus = s.get("mu", 0)
    mus = get(s, "mu", "ints", where="experiment") if isinstance(mus, list) else [get(s, "mu", "int", 0, "experiment")]
    if any(m not in (-1, 0, 1) for m in mus):
        raise ConfigError("experiment.mu entries must be -1, 0 or 1")
    kw = dict(
        power=get(s, "power", "float", 4.0, "experiment"),
        x0=get(s, "x0", "float", 0.0, "experiment"),
        c=get(s, "c", "float", 1.0, "experiment"),
        steps=get(s, "steps", "int", 400, "experiment"),
    )
    rows, per_mu, meta = [], [], {}
    for mu in mus:
        res = scaling_limit_experiment(p, phi, lambdas, mu=mu, phys=phys, workers=ctx.workers, **kw)
        meta = res.meta
        cols = res.columns
        rows += [[mu] + list(r) for r in res.rows]
        err = res.column("err")
        per_mu.append(
            {
                "mu": mu,
                "err": err,
                "decreasing": _decreasing(err),
                "last_over_previous": float(err[-1] / err[-2]) if err.size >= 2 and err[-2] > 0 else None,
            }
        )
        if max_ratio is not None:
            r = per_mu[-1]["last_over_previous"]
            per_mu[-1]["passed"] = bool(per_mu[-1]["decreasing"] and r is not None and r < max_ratio)
    summary = {k: v for k, v in meta.items() if k != "mu"}
    summary.update(kw)
    summary["max_last_ratio"] = max_ratio
    summary["runs"] = per_mu
    out = {"scaling_limit.csv": csv_bytes(["mu"] + cols, rows), "scaling_limit.json": _json(summary)}
    return out, summary


def exp_approx(cfg, ctx):
    _tables(cfg, ("potential", "profile_grid", "field", "experiment"))
    p = potential_from(cfg)
    _, phi = _profile(cfg)
    s = section(cfg, "experiment")
    check_keys(s, ("cells", "x_n", "mu", "power", "horizon", "dtau", "cutoffs"), "experiment")
    raw = get(s, "cells", "any", where="experiment")
    if not isinstance(raw, list) or not raw:
        raise ConfigError("experiment.cells must be a non-empty array of tables {N, T, N_prime}")
    cells = []
    for j, c in enumerate(raw):
        if not isinstance(c, dict):
            raise ConfigError("experiment.cells entries must be tables")
        where = f"experiment.cells[{j}]"
        check_keys(c, ("N", "T", "N_prime"), where)
        cell = {"N": get(c, "N", "int", where=where), "T": get(c, "T", "float", where=where)}
        if "N_prime" in c:
            cell["N_prime"] = get(c, "N_prime", "float", where=where)
        cells.append(cell)
    res = approx_solution_sweep(
        p,
        phi,
        cells,
        x_n=get(s, "x_n", "float", 0.0, "experiment"),
        mu=get(s, "mu", "int", 1, "experiment"),
        power=get(s, "power", "float", 4.0, "experiment"),
        horizon=get(s, "horizon", "float", 4.0, "experiment"),
        dtau=get(s, "dtau", "float", 0.01, "experiment"),
        cutoffs=get(s, "cutoffs", "bool", True, "experiment"),
        workers=ctx.workers,
    )
    r = res.column("residual")
    return _series_out("approx_solution", res, {"residual_decreasing": _decreasing(r)})


def exp_dispersive(cfg, ctx):
    _tables(cfg, ("potential", "grid", "field", "experiment"))
    p = potential_from(cfg)
    grid = grid_from(cfg)
    f = field_from(cfg, grid)
    s = section(cfg, "experiment")
    check_keys(s, ("times", "t_min", "t_max", "count", "method", "order", "bound"), "experiment")
    if "times" in s:
        times = get(s, "times", "floats", where="experiment")
    else:
        count = get(s, "count", "int", 46, "experiment")
        if count < 1:
            raise ConfigError("experiment.count must be positive")
        times = np.linspace(
            get(s, "t_min", "float", 0.05, "experiment"), get(s, "t_max", "float", 0.5, "experiment"), count
        ).tolist()
    method = get(s, "method", "str", "spectral", "experiment")
    if method not in METHODS:
        raise ConfigError(f"experiment.method must be one of {METHODS}")
    bound = get(s, "bound", "float", None, "experiment")
    r = dispersive_ratio(
        p, f, times, method=method, order=get(s, "order", "int", 4, "experiment"), workers=ctx.workers
    )
    k = int(np.argmax(r))
    summary = {"method": method, "max_ratio": float(r[k]), "argmax_t": times[k], "bound": bound}
    if bound is not None:
        summary["within_bound"] = bool(r[k] <= 1.1 * bound)
    out = {"dispersive.csv": csv_bytes(["t", "ratio"], zip(times, r)), "dispersive.json": _json(summary)}
    return out, summary


def exp_threshold(cfg, ctx):
    _tables(cfg, ("potential", "grid", "experiment"))
    p = potential_from(cfg)
    grid = grid_from(cfg)
    s = section(cfg, "experiment")
    check_keys(s, ("alphas", "cutoff_radius", "T", "dt", "cap_factor"), "experiment")
    res = threshold_sweep(
        p,
        grid,
        get(s, "alphas", "floats", where="experiment"),
        cutoff_radius=get(s, "cutoff_radius", "float", 3.0, "experiment"),
        T=get(s, "T", "float", 0.5, "experiment"),
        dt=get(s, "dt", "float", 1e-3, "experiment"),
        cap_factor=get(s, "cap_factor", "float", 10.0, "experiment"),
        workers=ctx.workers,
    )
    return _series_out("threshold_sweep", res, {})


COMMANDS = {
    "verify-potential": {None: lambda cfg, ctx: cmd_verify(cfg, ctx, None)},
    "classical": {"flow": classical_flow, "bvp": classical_bvp, "action": classical_action, "focal": classical_focal},
    "propagate": {m: (lambda m: lambda cfg, ctx: cmd_propagate(cfg, ctx, m))(m) for m in METHODS},
    "nls": {"evolve": nls_evolve, "observables": nls_observables, "ground-state": nls_ground_state},
    "experiment": {
        "strong-convergence": exp_strong,
        "scaling-limit": exp_scaling,
        "approx-solution": exp_approx,
        "dispersive": exp_dispersive,
        "threshold-sweep": exp_threshold,
    },
}


# ---------------------------------------------------------------- driver


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"TOML run config (env {ENV_PREFIX}CONFIG)")
    common.add_argument("--out", help=f"output directory (env {ENV_PREFIX}OUT; default ./out)")
    common.add_argument("--workers", type=int, help=f"worker threads (env {ENV_PREFIX}WORKERS; default: CPU count)")
    common.add_argument("--seed", type=int, help=f"seed for sampled inputs (env {ENV_PREFIX}SEED; default 0)")

    ap = argparse.ArgumentParser(prog="quadgrowth", description="Quadratic-potential Schrodinger toolkit.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, ops in COMMANDS.items():
        sp = sub.add_parser(name, parents=[common])
        if None not in ops:
            sp.add_argument("op", choices=list(ops))
    return ap


def _resolve(args) -> tuple[Path, Path, int, int]:
    env = os.environ

    def pick(flag, key, default):
        if flag is not None:
            return flag
        return env.get(ENV_PREFIX + key, default)

    cfg = pick(args.config, "CONFIG", None)
    if cfg is None:
        raise ConfigError(f"no config given; pass --config or set {ENV_PREFIX}CONFIG")
    out = pick(args.out, "OUT", "out")
    try:
        workers = int(pick(args.workers, "WORKERS", os.cpu_count() or 1))
        seed = int(pick(args.seed, "SEED", 0))
    except ValueError:
        raise ConfigError(f"{ENV_PREFIX}WORKERS and {ENV_PREFIX}SEED must be integers") from None
    if workers < 1:
        raise ConfigError("workers must be at least 1")
    return Path(cfg), Path(out), workers, seed


def _write(out: Path, files: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, data in files.items():
        tmp = out / (name + ".tmp")
        tmp.write_bytes(data)
        os.replace(tmp, out / name)


def run(command: str, op: str | None, config_path, out_dir, workers: int = 1, seed: int = 0) -> dict:
    """Execute one command and write its outputs plus ``manifest.json``; returns the manifest."""
    cfg = load_config(config_path)
    handler = COMMANDS[command][op]
    ctx = Context(workers, seed)
    t0 = time.perf_counter()
    outputs, _ = handler(cfg, ctx)
    wall = time.perf_counter() - t0
    files = [{"file": k, "sha256": sha256(v), "bytes": len(v)} for k, v in sorted(outputs.items())]
    manifest = {
        "command": command,
        "operation": op,
        "config_hash": sha256(dumps({"config": cfg, "seed": seed}).encode("utf-8")),
        "params": cfg,
        "seed": seed,
        "version": __version__,
        "wall_time_s": wall,
        "outputs": files,
    }
    outputs = dict(outputs)
    outputs["manifest.json"] = _json(manifest)
    _write(Path(out_dir), outputs)
    return manifest


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    op = getattr(args, "op", None)
    try:
        cfg, out, workers, seed = _resolve(args)
        manifest = run(args.command, op, cfg, out, workers, seed)
    except QuadGrowthError as exc:
        label = type(exc).__name__
        print(f"quadgrowth: {label}: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        return 130
    n = len(manifest["outputs"])
    print(f"{args.command}{' ' + op if op else ''}: wrote {n} file(s) and manifest.json to {out} "
          f"in {manifest['wall_time_s']:.2f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
