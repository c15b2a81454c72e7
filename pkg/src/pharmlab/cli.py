"""Command-line runner: ``pharmlab run <config>`` and ``pharmlab list-tasks``.

Exit codes: 0 when every certification in the task passes (or fails where
the config expects failure), 2 on a certification FAIL, 1 on any
configuration or execution error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dcalc, divergence, minimize, potential
from .config import TASKS, ConfigError, ExperimentConfig, build_domain, evaluate, field_from_expr, load_config
from .output import versions, write_csv, write_plot_script, write_provenance
from .spaces import GridDomain, strict_interior

OUTPUT_ROOT_ENV = "PHARMLAB_OUTPUT_ROOT"
EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


@dataclass
class TaskResult:
    passed: bool
    tables: dict
    summary: list
    plots: list = field(default_factory=list)  # (table, value columns)
    extra: dict = field(default_factory=dict)


def _coord_columns(dom) -> dict:
    return {f"x{k + 1}": dom.coords[:, k] for k in range(dom.coords.shape[1])}


def _site_rows(dom, **columns) -> list[dict]:
    cols = {**_coord_columns(dom), **columns}
    return [{"site": i, **{k: v[i] for k, v in cols.items()}} for i in range(dom.n_sites)]


def _coord_names(dom) -> list[str]:
    return list(_coord_columns(dom))


def _need_grid(dom, task: str) -> GridDomain:
    if not isinstance(dom, GridDomain):
        raise ConfigError(f"task {task} needs a grid model")
    return dom


# -- tasks ------------------------------------------------------------------------------

def task_calculus_suite(cfg: ExperimentConfig, dom) -> TaskResult:
    dom = _need_grid(dom, "calculus-suite")
    t, num = cfg["task"], cfg["numeric"]
    reps = dcalc.calculus_suite(dom, t["instances"], num["seed"], num["identity_tol"])
    rows = [{**r.row(), "tol": r.tol} for r in reps]
    err, rise = dcalc.oracle_agreement(dom.norm, t["oracle_samples"], num["seed"])
    oracle_ok = err <= num["oracle_tol"] and rise <= num["monotonicity_tol"]
    conv = dcalc.detect_strict_convexity(dom.norm, seed=num["seed"])
    gap_row = {"norm": dom.norm.label, "strictly_convex": conv.strictly_convex, "gap": conv.gap,
               "witness_df": conv.witness_df, "witness_dg": conv.witness_dg}
    summary = [{"check": "identities", "passed": all(r.passed for r in reps), "worst": max(r.max_violation for r in reps)},
               {"check": "oracle_agreement", "passed": oracle_ok, "worst": err, "rise": rise},
               {"check": "strict_convexity", "passed": True, "worst": conv.gap}]
    return TaskResult(all(s["passed"] for s in summary),
                      {"identities": rows, "gap_witness": [gap_row]}, summary)


def task_divergence(cfg: ExperimentConfig, dom) -> TaskResult:
    t, num = cfg["task"], cfg["numeric"]
    h = field_from_expr(dom, t["h"])
    g = field_from_expr(dom, t["g"])
    sites, A, B = divergence.hat_pairings(dom, h, g)
    lo = np.full(dom.n_sites, np.nan)
    hi = np.full(dom.n_sites, np.nan)
    m = dom.measure
    lo[sites], hi[sites] = -A / m[sites], -B / m[sites]
    cols = {"lo_density": lo, "hi_density": hi, "width": hi - lo}
    summary = []
    passed = True
    if divergence._single_valued(dom):
        mu = divergence.extract_divergence(dom, h, g, check=False)
        rep = divergence.membership(dom, mu, h, g, tol=num["membership_tol"])
        cols["density"] = np.where(mu.support, mu.density, np.nan)
        summary.append({"check": "membership", "passed": rep.member, "worst": rep.worst_violation,
                        "tests": rep.n_tests})
        passed &= rep.member
    dirs = [d for d in t["witness_directions"].split(";") if d.strip()]
    if dirs:
        fields_ = [field_from_expr(dom, d) for d in dirs]
        inner = strict_interior(dom)
        fields_ = [np.where(inner, f, 0.0) for f in fields_]
        wits = divergence.subdifferential_witnesses(dom, h, g, fields_)
        for k, (w, f) in enumerate(zip(wits, fields_)):
            rep = divergence.membership(dom, w, h, g, tol=num["membership_tol"])
            cols[f"witness{k}"] = w.density
            a, b = divergence.pairing_bounds(dom, h, g, f)
            summary.append({"check": f"witness{k}", "passed": rep.member, "worst": rep.worst_violation,
                            "pairing": w.pair(f), "interval_lo": -a, "interval_hi": -b})
            passed &= rep.member
    if not summary:
        summary.append({"check": "intervals", "passed": True, "worst": float(np.nanmax(cols["width"]))})
    plots = [("divergence", [c for c in ("density", "width") if c in cols])]
    return TaskResult(bool(passed), {"divergence": _site_rows(dom, **cols)}, summary, plots)


def _spec(cfg: ExperimentConfig, dom, boundary, source_expr: str) -> minimize.EnergySpec:
    src = field_from_expr(dom, source_expr) if source_expr else None
    return minimize.EnergySpec(cfg["numeric"]["p"], boundary, None, src)


def task_minimize(cfg: ExperimentConfig, dom) -> TaskResult:
    t, num = cfg["task"], cfg["numeric"]
    spec = _spec(cfg, dom, field_from_expr(dom, t["boundary"]), t["source"])
    rep = minimize.minimize_p_energy(dom, spec, delta_schedule=num["delta_schedule"], max_iter=num["max_iter"])
    tol = num["cert_rel_tol"] * minimize.energy_scale(dom, spec, rep.minimizer)
    cert = minimize.certify_minimizer(dom, spec, rep.minimizer, tol=tol)
    summary = [{"check": "solver", "passed": rep.converged, "energy": rep.energy, "residual": rep.residual,
                "residual_tol": rep.residual_tol, "method": rep.method, "iterations": rep.iterations},
               {"check": "certify_minimizer", "passed": cert.passed, "margin": cert.margin, "tol": cert.tol}]
    return TaskResult(rep.converged and cert.passed, {"minimizer": _site_rows(dom, value=rep.minimizer)},
                      summary, [("minimizer", ["value"])])


_CERTS = {"minimizer": minimize.certify_minimizer, "superminimizer": minimize.certify_superminimizer,
          "subminimizer": minimize.certify_subminimizer}


def task_certify(cfg: ExperimentConfig, dom) -> TaskResult:
    t, num = cfg["task"], cfg["numeric"]
    f = field_from_expr(dom, t["field"])
    spec = _spec(cfg, dom, f, t["source"])
    fn = _CERTS[t["kind"]]
    tol = num["cert_rel_tol"] * minimize.energy_scale(dom, spec, f)
    v = fn(dom, spec, f, tol=tol)
    expect_pass = t["expect"] == "pass"
    summary = [{"check": t["kind"], "passed": v.passed, "expected": t["expect"], "margin": v.margin, "tol": v.tol,
                "worst_test": v.worst_test, "mu_sign_ok": v.mu_sign_ok, "mu_extreme": v.mu_extreme}]
    ok = v.passed == expect_pass
    rng = np.random.default_rng(num["seed"])
    inner = strict_interior(dom)
    for k in range(t["perturbations"]):
        d = rng.normal(size=dom.n_sites) * inner
        d *= t["perturbation_size"] / max(np.max(np.abs(d)), 1e-300)
        pv = fn(dom, spec, f + d, tol=tol)
        summary.append({"check": f"perturbation{k}", "passed": pv.passed, "expected": "fail",
                        "margin": pv.margin, "tol": pv.tol})
        ok &= not pv.passed
    return TaskResult(bool(ok), {"field": _site_rows(dom, value=f)}, summary)


def task_sheaf(cfg: ExperimentConfig, dom) -> TaskResult:
    t, num = cfg["task"], cfg["numeric"]
    dom = _need_grid(dom, "sheaf")
    spec = minimize.EnergySpec(num["p"], field_from_expr(dom, t["boundary"]))
    g = minimize.minimize_p_energy(dom, spec, delta_schedule=num["delta_schedule"], max_iter=num["max_iter"]).minimizer
    if t["perturb"]:
        g = g + np.where(strict_interior(dom), field_from_expr(dom, t["perturb"]), 0.0)
    parts = potential.split_cover(dom, None, t["axis"], t["overlap"])
    rep = potential.sheaf_experiment(dom, spec, parts, g)
    ok = rep.passed
    if t["expect_global"] != "any":
        ok &= rep.global_pass == (t["expect_global"] == "pass")
    summary = [{"check": "sheaf", **rep.row(), "forward_ok": rep.forward_ok, "reverse_ok": rep.reverse_ok,
                "expected_global": t["expect_global"], "global_margin": rep.margins["global"],
                "local_margins": rep.margins["local"], "tol": rep.margins["tol"]}]
    part_cols = {f"part{k}": w.astype(int) for k, w in enumerate(parts)}
    return TaskResult(bool(ok), {"sheaf": _site_rows(dom, value=g, **part_cols)}, summary, [("sheaf", ["value"])])


def task_compose(cfg: ExperimentConfig, dom) -> TaskResult:
    t, num = cfg["task"], cfg["numeric"]
    if t["mode"] == "battery":
        verdicts = potential.composition_battery(num["seed"])
    else:
        g = field_from_expr(dom, t["field"])
        phi = dcalc.ScalarMap(lambda s: np.broadcast_to(evaluate(t["phi"], {"t": s}), np.shape(s)),
                              lambda s: np.broadcast_to(evaluate(t["phi_derivative"], {"t": s}), np.shape(s)),
                              (), t["phi"])
        verdicts = [potential.compose_experiment(dom, minimize.EnergySpec(num["p"], g), g, phi, t["case"])]
    rows = [v.row() for v in verdicts]
    summary = [{"check": "compose", "passed": all(v.passed for v in verdicts), "instances": len(verdicts),
                "worst_margin_over_tol": max(v.margin / v.tol for v in verdicts)}]
    return TaskResult(summary[0]["passed"], {"compose": rows}, summary)


def task_maxprinciple(cfg: ExperimentConfig, dom) -> TaskResult:
    t, num = cfg["task"], cfg["numeric"]
    domains = [dom] + (potential.battery_domains() if t["builtin_domains"] else [])
    search = potential.maximum_principle_search(domains, t["count"], num["seed"])
    rows = [{"candidate": i, **v.row()} for i, v in enumerate(search.outcomes)]
    summary = [{"check": "search", "passed": search.passed, "candidates": search.n_candidates,
                "premise_true": search.n_premise, "interior_min": search.n_interior_min,
                "counterexamples": search.counterexamples}]
    if t["checkerboard_probe"] and isinstance(dom, GridDomain) and dom.dim >= 1:
        inner = potential.nested_subdomains(dom)
        if len(inner) > 1:
            v = potential.maximum_principle_experiment(dom, potential.checkerboard(dom), inner[1])
            summary.append({"check": "checkerboard_probe", "passed": True, "outcome": v.outcome,
                            "note": "stencil null mode, excluded from the search family"})
    return TaskResult(search.passed, {"maxprinciple": rows}, summary)


def task_busemann(cfg: ExperimentConfig, dom) -> TaskResult:
    t, num = cfg["task"], cfg["numeric"]
    dom = _need_grid(dom, "busemann")
    base = t["base"] or (0.0,) * dom.dim
    direction = t["direction"] or tuple(np.eye(dom.dim)[0])
    line = potential.LineSpec.through(dom.norm, base, direction, t["t_max"])
    closed = (lambda x: field_from_expr(dom, t["closed_form_sum"])) if t["closed_form_sum"] else None
    rep = potential.busemann_harmonicity_experiment(dom, line, closed, tail_tol=num["tail_tol"])
    lip = max(potential.lipschitz_defect(dom, b, seed=num["seed"]) for b in (rep.pair.bplus, rep.pair.bminus))
    ok = rep.passed and lip <= 1e-9 and rep.pair.check()
    summary = [{"check": "busemann", "passed": bool(ok), "hilbertian": rep.hilbertian,
                "strictly_convex": rep.strictly_convex, "sum_sup": rep.sum_sup, "sum_min": rep.sum_min,
                "mu_max": rep.mu_max, "certified": rep.certified, "closed_form_gap": rep.closed_form_gap,
                "lipschitz_defect": lip}]
    cols = {"bplus": rep.pair.bplus, "bminus": rep.pair.bminus, "sum": rep.pair.total}
    return TaskResult(bool(ok), {"busemann": _site_rows(dom, **cols)}, summary, [("busemann", ["bplus", "bminus", "sum"])])


def task_poincare(cfg: ExperimentConfig, dom) -> TaskResult:
    t, num = cfg["task"], cfg["numeric"]
    dom = _need_grid(dom, "poincare")
    fields_ = None
    if t["fields"]:
        fields_ = [(e.strip(), field_from_expr(dom, e)) for e in t["fields"].split(";") if e.strip()]
    rep = potential.poincare_diagnostic(dom, t["p0"], None, fields_, t["n_balls"], num["seed"], t["flag_ratio"])
    rows = [{**r, "flagged": False} for r in rep.ratios] + [{**r, "flagged": True} for r in rep.flagged]
    summary = [{"check": "poincare", "passed": bool(np.isfinite(rep.constant)), **rep.row()}]
    return TaskResult(summary[0]["passed"], {"poincare": rows}, summary)


TASK_RUNNERS = {
    "calculus-suite": task_calculus_suite,
    "divergence": task_divergence,
    "minimize": task_minimize,
    "certify": task_certify,
    "sheaf": task_sheaf,
    "compose": task_compose,
    "maxprinciple": task_maxprinciple,
    "busemann": task_busemann,
    "poincare": task_poincare,
}
assert tuple(TASK_RUNNERS) == TASKS


# -- driver -----------------------------------------------------------------------------

def output_dir(cfg: ExperimentConfig) -> Path:
    d = Path(cfg["output"]["directory"])
    if d.is_absolute():
        return d
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return (Path(root) if root else Path.cwd()) / d


def run_config(cfg: ExperimentConfig) -> tuple[int, TaskResult, Path]:
    base_dir = cfg.path.parent if cfg.path else None
    dom = build_domain(cfg["domain"], base_dir)
    res = TASK_RUNNERS[cfg.task](cfg, dom)
    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    formats = cfg["output"]["formats"]
    written = []
    if "csv" in formats:
        for name, rows in res.tables.items():
            written.append(write_csv(out / f"{name}.csv", rows).name)
        written.append(write_csv(out / "summary.csv", res.summary).name)
    if "plot" in formats and "csv" in formats:
        coords = _coord_names(dom)[:2]
        for table, values in res.plots:
            if values:
                written.append(write_plot_script(out / f"plot_{table}.py", f"{table}.csv", coords, values).name)
    code = EXIT_OK if res.passed else EXIT_FAIL
    record = {
        "task": cfg.task,
        "config_file": cfg.path.name if cfg.path else None,
        "config": cfg.resolved(),
        "seeds": {"seed": cfg["numeric"]["seed"]},
        "tolerances": {k: v for k, v in cfg.resolved()["numeric"].items() if k not in ("p", "seed")},
        "fixed_constants": {
            "gap_tol": dcalc.GAP_TOL, "zero_guard": minimize.ZERO_GUARD,
            "membership_tol_default": divergence.MEMBERSHIP_TOL, "busemann_tail_tol": potential.BUSEMANN_TAIL_TOL,
        },
        "versions": versions(),
        "outputs": sorted(written),
        "passed": res.passed,
        "exit_code": code,
        "summary": res.summary,
    }
    write_provenance(out / "provenance.json", record)
    return code, res, out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_ERROR)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pharmlab", description="Config-driven experiments on discrete metric-measure models.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    r = sub.add_parser("run", help="run the task described by a config file")
    r.add_argument("config", help="path to an INI config")
    lt = sub.add_parser("list-tasks", help="print the task names")
    lt.add_argument("--json", action="store_true", help="print a JSON array")
    sub.add_parser("schema", help="print the config schema as markdown")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-tasks":
        print(json.dumps(list(TASKS)) if args.json else "\n".join(TASKS))
        return EXIT_OK
    if args.command == "schema":
        from .config import schema_markdown
        print(schema_markdown())
        return EXIT_OK
    try:
        cfg = load_config(args.config)
        code, res, out = run_config(cfg)
    except (ConfigError, ValueError, TypeError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for row in res.summary:
        status = "PASS" if row.get("passed") else "FAIL"
        note = f" (expected {row['expected']})" if "expected" in row else ""
        print(f"{cfg.task} {row.get('check', '')}: {status}{note}")
    print(f"outputs: {out}")
    return code


if __name__ == "__main__":
    sys.exit(main())
