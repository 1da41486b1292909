"""Command-line scenario runner.

Every subcommand writes deterministic report payloads into ``--out`` and a
separate ``metadata.json`` holding the timestamp and invocation.  The exit
code is 0 iff every selected battery passes, 1 if one fails and 2 for
configuration errors (with a JSON error document on stdout).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import __version__, _jit
from . import io as pio
from . import market, mcstats, numeraire, openmarket, portfolio, tree
from .scenario import Scenario, load_json, load_scenario, portfolio_weights, resolve_path


class ConfigError(ValueError):
    def __init__(self, msg, field=None):
        super().__init__(msg)
        self.field = field


# ---------------------------------------------------------------- helpers


def _apply_overrides(sc: Scenario, args) -> Scenario:
    data = sc.model_dump()
    if args.seed is not None:
        data["seed"] = args.seed
    if args.paths is not None:
        data["n_paths"] = args.paths
    if args.dt is not None:
        steps = data["grid"]["horizon"] / args.dt
        if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
            raise ConfigError("--dt must divide the horizon", "dt")
        data["grid"]["steps"] = int(round(steps))
    if args.top_m is not None:
        data["top_m"] = args.top_m
    if args.battery:
        data["battery"] = [b.strip() for b in args.battery.split(",") if b.strip()]
    return Scenario.model_validate(data)


class Run:
    """Simulated ensemble with its returns, rates and numéraire."""

    def __init__(self, sc: Scenario):
        self.sc = sc
        self.model = sc.build_model()
        self.grid = sc.build_grid()
        self.ens = market.simulate_paths(self.model, self.grid, sc.n_paths, sc.seed)
        self.dR = self.ens.returns()
        self.dec = market.decompose_returns(self.model, self.ens, "model", self.dR)
        self.rho, self.rates = numeraire.ensemble_numeraire(self.model, self.ens, sc.clock_mode,
                                                            self.dec)
        self.X_rho = portfolio.wealth_of_portfolio(self.rho, self.dR).wealth
        self.checkpoints = sc.checkpoint_indices(self.grid)

    def weights(self, spec, ranks=None):
        return portfolio_weights(spec, self.ens, self.rho, ranks)

    def candidates(self, ranks=None):
        return {p.name: self.weights(p, ranks) for p in self.sc.portfolios if p.type != "numeraire"}

    def wealth(self, w):
        return portfolio.wealth_of_portfolio(w, self.dR).wealth


def _battery_rows(rep):
    return [(rep.name, r.candidate, r.checkpoint, r.estimate, r.se,
             "PASS" if r.verdict else "FAIL") for r in rep.rows]


def _verdict(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


# ---------------------------------------------------------------- batteries


def _open_market(run: Run, m: int):
    ens = run.ens
    u = openmarket.rank_process(ens.step_left(), ens.step_dims())
    cr = openmarket.censored_rates(run.rates.alpha, run.rates.c, u, m)
    top = openmarket.top_m_numeraire(cr)
    live = ens.step_live()
    ind = (u <= m) & live
    a_ok = bool(np.array_equal(cr.alpha, np.where(ind, run.rates.alpha, 0.0)))
    c_ok = bool(np.array_equal(cr.c, np.where(ind[..., :, None] & ind[..., None, :], run.rates.c, 0.0)))
    rho_m = np.where(live, top.rho, 0.0)
    support_ok, first = openmarket.is_top_m_portfolio(rho_m, u, m)
    X_rho = run.wealth(rho_m)
    cands = {name: openmarket.restrict_to_top_m(w, u, m) for name, w in run.candidates(u).items()}
    rep = numeraire.supermartingale_battery(X_rho, {k: run.wealth(w) for k, w in cands.items()},
                                            run.checkpoints, run.grid.times)
    rep.name = "open_market_supermartingale"
    summary = {
        "top_m": m,
        "censored_alpha_identity": a_ok,
        "censored_c_identity": c_ok,
        "support_within_top_m": bool(support_ok),
        "first_support_violation": first,
        "viable": bool(np.all(top.in_range)),
        "mean_growth": float(np.mean(np.where(live.any(-1), top.growth, 0.0))),
        "battery": rep.as_dict(),
    }
    ok = a_ok and c_ok and support_ok and rep.passed and summary["viable"]
    return ok, summary, rep, u


def run_batteries(run: Run, names):
    sc = run.sc
    results = {}
    rows = []
    ok_all = True
    cands = None
    if any(n in names for n in ("numeraire", "log_optimality", "deflator", "supermartingale")):
        cands = {k: run.wealth(w) for k, w in run.candidates().items()}
    for name in names:
        if name == "numeraire":
            rep = numeraire.supermartingale_battery(run.X_rho, cands, run.checkpoints, run.grid.times)
            ok, payload = rep.passed, rep.as_dict()
            rows += _battery_rows(rep)
        elif name == "log_optimality":
            rep = numeraire.log_optimality_battery(run.X_rho, cands, run.checkpoints, run.grid.times)
            ok, payload = rep.passed, rep.as_dict()
            rows += _battery_rows(rep)
        elif name == "deflator":
            dL = numeraire.orthogonal_increments(sc.deflator.kind, run.dR.shape[:2],
                                                 run.grid.dt[None, :], sc.deflator.scale, sc.seed)
            Y = numeraire.deflator(run.X_rho, dL)
            allc = dict(cands)
            allc["numeraire"] = run.X_rho
            rep = numeraire.deflator_battery(Y, allc, run.checkpoints, run.grid.times)
            ok, payload = rep.passed, rep.as_dict()
            rows += _battery_rows(rep)
        elif name == "supermartingale":
            payload = {}
            ok = True
            cps = sorted({0, *run.checkpoints})
            for cname, X in cands.items():
                r = mcstats.supermartingale_test(X / run.X_rho, cps, run.grid.times)
                payload[cname] = r.as_dict()
                ok = ok and r.passed
                for pr in r.pairs:
                    rows.append(("supermartingale", f"{cname}[{pr.bucket}]", pr.t, pr.diff, pr.se,
                                 _verdict(pr.verdict)))
        elif name == "clock_invariance":
            other = "paper" if sc.clock_mode == "calendar" else "calendar"
            rho2, _ = numeraire.ensemble_numeraire(run.model, run.ens, other, run.dec)
            diff = float(np.abs(rho2 - run.rho).max(initial=0.0))
            ok = diff <= 1e-10
            payload = {"max_abs_difference": diff, "verdict": _verdict(ok)}
            rows.append(("clock_invariance", "rho", np.nan, diff, 0.0, _verdict(ok)))
        elif name == "structural":
            rep = numeraire.structural_residual(run.rates, run.rho, run.ens.epoch_index())
            payload = rep.summary()
            ok = rep.is_numeraire_candidate and rep.viable
            rows.append(("structural", "rho", np.nan, rep.max_step_residual, 0.0, _verdict(ok)))
        elif name == "open_market":
            if sc.top_m is None:
                raise ConfigError("the open_market battery needs top_m", "top_m")
            ok, payload, rep, _ = _open_market(run, sc.top_m)
            rows += _battery_rows(rep)
        elif name == "refine":
            spec = sc.refine
            if spec is None:
                raise ConfigError("the refine battery needs a refine section", "refine")
            rep = mcstats.refinement_study(run.model, sc.grid.horizon, spec.steps, spec.n_paths,
                                           sc.seed)
            ok, payload = rep.passed, rep.as_dict()
            for r in rep.rows:
                rows.append(("refine", r.diagnostic, np.nan, r.order, 0.0,
                             "N/A" if not r.applicable else _verdict(r.verdict)))
        else:
            raise ConfigError(f"unknown battery {name!r}", "battery")
        payload = dict(payload)
        payload.setdefault("verdict", _verdict(ok))
        results[name] = payload
        ok_all = ok_all and ok
    return ok_all, results, rows


# ---------------------------------------------------------------- subcommands


def cmd_simulate(args, out: Path) -> int:
    sc = _apply_overrides(load_scenario(args.scenario), args)
    run = Run(sc)
    pio.write_ensemble(run.ens, out, max_paths=args.max_csv_paths)
    series = []
    for spec in sc.portfolios:
        X = run.wealth(run.weights(spec)) if spec.type != "numeraire" else run.X_rho
        q = np.quantile(X, [0.05, 0.5, 0.95], axis=0)
        for j, t in enumerate(run.grid.times):
            series.append((spec.name, t, float(X[:, j].mean()), q[0, j], q[1, j], q[2, j]))
    pio.write_table(out / "wealth_series.csv", ("portfolio", "time", "mean", "q05", "q50", "q95"),
                    series)
    dims_T = np.bincount(run.ens.dims[:, -1])
    pio.write_json(out / "simulate.json", {
        "scenario": sc.name, "seed": sc.seed, "n_paths": sc.n_paths, "steps": sc.grid.steps,
        "model_id": run.ens.model_id,
        "terminal_dimension_counts": {str(n): int(c) for n, c in enumerate(dims_T) if c},
        "mean_resets_per_path": float(run.ens.reset[:, 1:].sum(axis=1).mean()),
    })
    return 0


def cmd_numeraire(args, out: Path) -> int:
    sc = _apply_overrides(load_scenario(args.scenario), args)
    try:
        run = Run(sc)
    except numeraire.NonViableError as exc:
        pio.write_json(out / "structural_report.json", {
            "viable": False, "witness": exc.witness, "phi": exc.phi})
        return 1
    rep = numeraire.structural_residual(run.rates, run.rho, run.ens.epoch_index())
    payload = rep.summary()
    payload["clock"] = sc.clock_mode
    payload["mean_terminal_cumulative_growth"] = float(np.mean(rep.cumulative_growth[:, -1]))
    pio.write_json(out / "structural_report.json", payload)
    P = min(run.ens.n_paths, args.max_csv_paths)
    rows = []
    for p in range(P):
        for j in range(run.grid.n_steps):
            for i in range(run.ens.step_dims()[p, j]):
                rows.append((p, run.grid.times[j], i, run.rho[p, j, i]))
    pio.write_table(out / "numeraire_weights.csv", ("path_id", "time", "component", "weight"), rows)
    G = rep.cumulative_growth
    pio.write_table(out / "growth_series.csv", ("time", "mean_g", "mean_G"),
                    [(t, float(np.mean(rep.growth[:, j])) if j < run.grid.n_steps else np.nan,
                      float(np.mean(G[:, j]))) for j, t in enumerate(run.grid.times)])
    return 0 if rep.is_numeraire_candidate else 1


def cmd_verify(args, out: Path) -> int:
    sc = _apply_overrides(load_scenario(args.scenario), args)
    run = Run(sc)
    ok, results, rows = run_batteries(run, sc.battery)
    pio.write_json(out / "battery.json", {"scenario": sc.name, "seed": sc.seed,
                                          "verdict": _verdict(ok), "batteries": results})
    pio.write_table(out / "battery.csv",
                    ("diagnostic", "candidate", "checkpoint", "estimate", "se", "verdict"), rows)
    print(json.dumps({"verdict": _verdict(ok),
                      "batteries": {k: v["verdict"] for k, v in results.items()}}))
    return 0 if ok else 1


def cmd_open_market(args, out: Path) -> int:
    sc = _apply_overrides(load_scenario(args.scenario), args)
    if sc.top_m is None:
        raise ConfigError("open-market needs --top-m or top_m in the scenario", "top_m")
    run = Run(sc)
    ok, summary, rep, u = _open_market(run, sc.top_m)
    pio.write_json(out / "open_market.json", summary)
    pio.write_json(out / "turnover.json", openmarket.turnover_stats(u, sc.top_m, run.ens.reset))
    P = min(run.ens.n_paths, args.max_csv_paths)
    rows = [(p, run.grid.times[j], i, int(u[p, j, i]))
            for p in range(P) for j in range(run.grid.n_steps)
            for i in range(run.ens.step_dims()[p, j])]
    pio.write_table(out / "ranks.csv", ("path_id", "time", "component", "rank"), rows)
    pio.write_table(out / "battery.csv",
                    ("diagnostic", "candidate", "checkpoint", "estimate", "se", "verdict"),
                    _battery_rows(rep))
    return 0 if ok else 1


def _tree_file(args):
    ref = args.tree or args.scenario
    if ref is None:
        raise ConfigError("tree commands need --tree or --scenario", "tree")
    data = load_json(ref)
    if "nodes" not in data:
        raise ConfigError("tree file has no 'nodes' list", "nodes")
    return data


def _stream(t: tree.EventTree, data, field="stream"):
    if data.get(field) is not None:
        return t.as_values(data[field], default=0.0)
    if data.get("claim") is not None:
        return tree.claim_stream(t, t.as_values(data["claim"], default=0.0))
    raise ConfigError("tree file needs a 'stream' or 'claim' map", field)


def cmd_tree(args, out: Path) -> int:
    data = _tree_file(args)
    try:
        t = tree.EventTree.from_json(data)
    except tree.TreeError as exc:
        raise ConfigError(str(exc), "nodes") from exc
    sub = args.tree_command
    if sub == "viability":
        rep = tree.na1_probe(t)
        payload = rep.as_dict()
        payload["nodes"] = [t.one_step(k).as_dict() for k in t.internal()]
        ok = rep.viable
    elif sub == "superhedge":
        dK = _stream(t, data)
        sh = tree.superhedge(t, dK)
        dv = tree.dual_value(t, dK)
        payload = sh.as_dict(t)
        payload.update({"dual_value": dv.value, "attained": dv.attained,
                        "not_attained_at": dv.not_attained_at,
                        "duality_gap": abs(sh.x - dv.value)})
        ok = abs(sh.x - dv.value) <= 1e-8
    elif sub == "decompose":
        if data.get("process") is None:
            raise ConfigError("tree decompose needs a 'process' map", "process")
        X = t.as_values(data["process"])
        res = tree.optional_decompose(t, X)
        if isinstance(res, tree.Rejection):
            payload = {"accepted": False, "node": res.node, "y": res.y.tolist(),
                       "excess": res.excess, "verified": tree.verify_rejection(t, X, res)}
            ok = False
        else:
            payload = {"accepted": True,
                       "theta": {t.nodes[k].id: v.tolist() for k, v in res.theta.items()},
                       "dK": t.to_mapping(res.dK), "K": t.to_mapping(res.K),
                       "node_slack": t.to_mapping(res.node_slack),
                       "reconstruction_error": res.reconstruction_error}
            ok = res.reconstruction_error <= 1e-10
    elif sub == "complete":
        comp = tree.is_complete(t)
        payload = {"complete": comp,
                   "one_step_status": {t.nodes[k].id: t.one_step(k).status for k in t.internal()}}
        ok = True
        if len(t) <= 30:
            ind = tree.indicator_claims_replicable(t)
            payload["indicator_claims_replicable"] = ind
            ok = ind == comp
    elif sub == "numeraire":
        ns = tree.supermartingale_numeraire_tree(t)
        Ys = tree.sample_deflators(t, args.deflators, args.seed or 0)
        mart = [tree.is_martingale(t, Y * ns.X) for Y in Ys]
        payload = {"X_star": t.to_mapping(ns.X),
                   "h": {t.nodes[k].id: v.tolist() for k, v in ns.h.items()},
                   "weights": {t.nodes[k].id: v.tolist() for k, v in ns.weights.items()},
                   "epoch": {nd.id: int(e) for nd, e in zip(t.nodes, ns.epoch)},
                   "deflator_martingale_worst": max((m.residual for m in mart), default=0.0)}
        ok = all(m.ok for m in mart)
    else:  # pragma: no cover
        raise ConfigError(f"unknown tree command {sub!r}", "tree_command")
    payload["verdict"] = _verdict(ok)
    pio.write_json(out / f"tree_{sub}.json", payload)
    print(json.dumps({"verdict": payload["verdict"]}))
    return 0 if ok else 1


def cmd_refine(args, out: Path) -> int:
    sc = _apply_overrides(load_scenario(args.scenario), args)
    spec = sc.refine
    if spec is None:
        raise ConfigError("scenario has no refine section", "refine")
    rep = mcstats.refinement_study(sc.build_model(), sc.grid.horizon, spec.steps, spec.n_paths,
                                   sc.seed)
    pio.write_json(out / "refine.json", rep.as_dict())
    rows = [(r.diagnostic, dt, e) for r in rep.rows for dt, e in zip(r.dts, r.errors)]
    pio.write_table(out / "refine.csv", ("diagnostic", "dt", "error"), rows)
    print(json.dumps({r.diagnostic: {"order": r.order, "verdict": r.as_dict()["verdict"]}
                      for r in rep.rows}))
    return 0 if rep.passed else 1


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario/tree JSON file or bundled fixture name")
    common.add_argument("--seed", type=int, help="override the scenario seed")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--paths", type=int, help="override the number of paths")
    common.add_argument("--dt", type=float, help="override the step size")
    common.add_argument("--top-m", type=int, dest="top_m", help="size of the open market")
    common.add_argument("--battery", help="comma-separated battery names")
    common.add_argument("--max-csv-paths", type=int, default=50,
                        help="paths written to per-path CSV files")

    ap = argparse.ArgumentParser(prog="piecewise-market", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in [("simulate", "simulate an ensemble"),
                           ("numeraire", "numéraire weights and structural report"),
                           ("verify", "run Monte Carlo batteries"),
                           ("open-market", "top-m open market diagnostics"),
                           ("refine", "step-size refinement study")]:
        sub.add_parser(name, parents=[common], help=helptext)
    tp = sub.add_parser("tree", parents=[common], help="exact event-tree computations")
    tp.add_argument("tree_command",
                    choices=["viability", "decompose", "superhedge", "complete", "numeraire"])
    tp.add_argument("--tree", help="tree JSON file (alias for --scenario)")
    tp.add_argument("--deflators", type=int, default=20, help="deflators sampled for checks")
    return ap


COMMANDS = {"simulate": cmd_simulate, "numeraire": cmd_numeraire, "verify": cmd_verify,
            "open-market": cmd_open_market, "tree": cmd_tree, "refine": cmd_refine}


def _error(out: Path | None, kind: str, message: str, field=None) -> int:
    doc = {"error": kind, "field": field, "message": message}
    print(json.dumps(doc))
    if out is not None:
        try:
            pio.write_json(out / "error.json", doc)
        except OSError:
            pass
    return 2


def _configure_threads():
    cap = _jit.thread_cap()
    if cap is not None and _jit.HAVE_NUMBA:
        import numba

        numba.set_num_threads(min(cap, numba.config.NUMBA_NUM_THREADS))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    started = time.time()
    try:
        _configure_threads()
        if args.command != "tree" and args.scenario is None:
            raise ConfigError("--scenario is required", "scenario")
        if args.scenario is not None:
            resolve_path(args.scenario)
        code = COMMANDS[args.command](args, out)
    except ValidationError as exc:
        err = exc.errors()[0]
        field = ".".join(str(x) for x in err["loc"])
        return _error(out, "config", err["msg"], field)
    except ConfigError as exc:
        return _error(out, "config", str(exc), exc.field)
    except FileNotFoundError as exc:
        return _error(out, "missing_fixture", str(exc), "scenario")
    except (json.JSONDecodeError, market.ModelError) as exc:
        return _error(out, "config", str(exc), None)
    except (numeraire.NonViableError, tree.NA1Error) as exc:
        return _error(out, "non_viable", str(exc), None)
    except ValueError as exc:
        return _error(out, "config", str(exc), None)
    pio.write_json(out / "metadata.json", {
        "version": __version__, "command": args.command,
        "argv": sys.argv[1:] if argv is None else list(argv),
        "started": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
        "elapsed_seconds": round(time.time() - started, 3),
        "numba": _jit.USE_NUMBA,
    })
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
