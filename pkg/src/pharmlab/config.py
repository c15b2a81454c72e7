"""Experiment configuration: schema, validation and domain construction.

Configs are INI files with four sections (``domain``, ``task``, ``numeric``,
``output``). Every key has a type and a default; unknown keys are rejected
with the offending line number. ``docs/config-schema.md`` is generated from
the schema below by ``schema_markdown``.
"""

from __future__ import annotations

import ast
import configparser
import math
import operator
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .norms import NormSpec
from .spaces import GraphDomain, GridDomain

TASKS = ("calculus-suite", "divergence", "minimize", "certify", "sheaf", "compose",
         "maxprinciple", "busemann", "poincare")


class ConfigError(ValueError):
    """Malformed configuration; the message carries line/field diagnostics."""


# -- value parsers ----------------------------------------------------------------------

def _float(s: str) -> float:
    s = s.strip().lower()
    if s in ("inf", "infinity"):
        return math.inf
    return float(s)


def _int(s: str) -> int:
    return int(s.strip())


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple:
    return tuple(_float(t) for t in s.replace(";", ",").split(",") if t.strip())


def _ints(s: str) -> tuple:
    return tuple(_int(t) for t in s.split(",") if t.strip())


def _strs(s: str) -> tuple:
    return tuple(t.strip() for t in s.split(",") if t.strip())


def _choice(*options):
    def parse(s: str) -> str:
        v = s.strip()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}; got {v!r}")
        return v
    parse.options = options
    return parse


def _str(s: str) -> str:
    return s.strip()


@dataclass(frozen=True)
class Key:
    parse: object
    default: str | None
    doc: str


COMMON = {
    "domain": {
        "model": Key(_choice("grid", "graph"), "grid", "model kind"),
        "shape": Key(_ints, "21", "sites per axis (grid) or lattice shape (graph)"),
        "lower": Key(_floats, "", "coordinates of the first site; zeros by default"),
        "upper": Key(_floats, "", "coordinates of the last site; lower + 1 by default"),
        "density": Key(_choice("trapezoid", "uniform"), "trapezoid", "site density profile (grid)"),
        "norm": Key(_str, "lp:2", "primal norm: lp:P, weighted-lp:P:w1,w2, ellipsoidal:a,b;c,d, "
                                  "l1-polytope or polyhedral:x,y;x,y;..."),
        "omega": Key(_str, "all", "subdomain: all, or inner:K to drop K outer rings"),
        "graph": Key(_choice("lattice", "path", "file"), "lattice", "graph construction (graph model)"),
        "graph_file": Key(_str, "", "CSV edge list src,dst,conductance (graph = file)"),
        "graph_boundary": Key(_ints, "", "boundary vertices (graph = file)"),
        "spread": Key(_float, "0.5", "conductance spread of the lattice graph"),
        "p_model": Key(_float, "2", "exponent of the graph vertex modulus"),
    },
    "task": {
        "name": Key(_choice(*TASKS), None, "task to run"),
    },
    "numeric": {
        "p": Key(_float, "2", "energy exponent, in (1, inf)"),
        "seed": Key(_int, "0", "seed for random draws"),
        "identity_tol": Key(_float, "1e-9", "sitewise tolerance of the calculus identities"),
        "oracle_tol": Key(_float, "1e-5", "relative tolerance of the quotient-oracle agreement"),
        "monotonicity_tol": Key(_float, "1e-9", "allowed rise of the eps > 0 quotient sequence"),
        "membership_tol": Key(_float, "1e-8", "tolerance of divergence membership checks"),
        "cert_rel_tol": Key(_float, "1e-6", "certification tolerance relative to the energy scale"),
        "delta_schedule": Key(_floats, "1e-2,1e-3,1e-4,1e-5,1e-6,1e-7,1e-8", "smoothing continuation"),
        "max_iter": Key(_int, "20000", "iteration cap per smoothing stage"),
        "tail_tol": Key(_float, "1e-9", "Busemann tail-increment tolerance"),
    },
    "output": {
        "directory": Key(_str, "results", "output directory (relative to PHARMLAB_OUTPUT_ROOT or cwd)"),
        "formats": Key(_strs, "csv,plot", "csv and/or plot (a generated matplotlib script)"),
    },
}

TASK_KEYS = {
    "calculus-suite": {
        "instances": Key(_int, "200", "random field instances"),
        "oracle_samples": Key(_int, "400", "covector pairs for the quotient-oracle check"),
    },
    "divergence": {
        "h": Key(_str, "1", "weight field expression"),
        "g": Key(_str, "x1", "potential field expression"),
        "witness_directions": Key(_str, "", "';'-separated direction expressions for LP witnesses"),
    },
    "minimize": {
        "boundary": Key(_str, "x1", "boundary data expression"),
        "source": Key(_str, "", "source density expression (empty for none)"),
    },
    "certify": {
        "field": Key(_str, "x1", "field expression to certify"),
        "kind": Key(_choice("minimizer", "superminimizer", "subminimizer"), "minimizer", "certificate"),
        "source": Key(_str, "", "source density expression"),
        "expect": Key(_choice("pass", "fail"), "pass", "expected verdict; fail inverts the exit code"),
        "perturbations": Key(_int, "0", "seeded perturbations of the field, each expected to fail"),
        "perturbation_size": Key(_float, "1e-4", "max-abs size of the perturbations"),
    },
    "sheaf": {
        "boundary": Key(_str, "x1", "boundary data of the solved field"),
        "perturb": Key(_str, "", "expression added to the solved field"),
        "axis": Key(_int, "0", "split axis"),
        "overlap": Key(_int, "3", "overlap layers each side of the middle"),
        "expect_global": Key(_choice("pass", "fail", "any"), "any", "expected global verdict"),
    },
    "compose": {
        "mode": Key(_choice("battery", "single"), "battery", "fixed 4x8 battery or one instance"),
        "field": Key(_str, "x1", "field expression (single mode)"),
        "phi": Key(_str, "-t", "map expression in t (single mode)"),
        "phi_derivative": Key(_str, "-1 + 0*t", "derivative expression in t (single mode)"),
        "case": Key(_choice("i", "ii", "iii", "iv"), "i", "composition case (single mode)"),
    },
    "maxprinciple": {
        "count": Key(_int, "12", "solver-generated candidates per domain"),
        "builtin_domains": Key(_bool, "true", "add the fixed quadratic battery domains"),
        "checkerboard_probe": Key(_bool, "true", "report the stencil null-mode artifact separately"),
    },
    "busemann": {
        "base": Key(_floats, "", "base point of the line; origin by default"),
        "direction": Key(_floats, "", "direction (normalized); first axis by default"),
        "t_max": Key(_float, "1e10", "truncation parameter"),
        "closed_form_sum": Key(_str, "", "expected b+ + b- expression (optional)"),
    },
    "poincare": {
        "p0": Key(_float, "2", "modulus exponent"),
        "n_balls": Key(_int, "16", "random balls"),
        "fields": Key(_str, "", "';'-separated field expressions; coordinates and a smooth field by default"),
        "flag_ratio": Key(_float, "10", "ratios above this are flagged as artifacts"),
    },
}


# -- expressions ------------------------------------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv,
           ast.Pow: operator.pow, ast.Mod: operator.mod}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_CMPOPS = {ast.Lt: operator.lt, ast.LtE: operator.le, ast.Gt: operator.gt, ast.GtE: operator.ge,
           ast.Eq: operator.eq, ast.NotEq: operator.ne}
_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log, "sqrt": np.sqrt,
    "abs": np.abs, "tanh": np.tanh, "sign": np.sign, "max": np.maximum, "min": np.minimum,
    "where": np.where, "log1p": np.log1p, "expm1": np.expm1, "hypot": np.hypot,
}
_CONSTS = {"pi": math.pi, "e": math.e, "inf": math.inf}


def evaluate(expr: str, names: dict):
    """Evaluate an arithmetic expression over numpy arrays without ``eval``.

    Allowed: numbers, the given names, ``pi``/``e``, arithmetic, comparisons
    (giving 0/1 floats) and the functions in ``_FUNCS``.
    """
    try:
        tree = ast.parse(expr.strip(), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse expression {expr!r}: {exc.msg}") from None

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id in names:
                return names[node.id]
            if node.id in _CONSTS:
                return _CONSTS[node.id]
            raise ValueError(f"unknown name {node.id!r} in {expr!r}")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            return _UNOPS[type(node.op)](ev(node.operand))
        if isinstance(node, ast.Compare) and len(node.ops) == 1 and type(node.ops[0]) in _CMPOPS:
            return np.asarray(_CMPOPS[type(node.ops[0])](ev(node.left), ev(node.comparators[0])), dtype=float)
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS
                and not node.keywords):
            return _FUNCS[node.func.id](*[ev(a) for a in node.args])
        raise ValueError(f"unsupported syntax in expression {expr!r}")

    return ev(tree)


def field_from_expr(dom, expr: str) -> np.ndarray:
    """Evaluate ``expr`` at every site; coordinates are ``x1, x2, ...``."""
    x = dom.coords
    names = {f"x{k + 1}": x[:, k] for k in range(x.shape[1])}
    names["x"] = x[:, 0]
    val = np.asarray(evaluate(expr, names), dtype=float)
    out = np.broadcast_to(val, (dom.n_sites,)).astype(float)
    if not np.all(np.isfinite(out)):
        raise ValueError(f"expression {expr!r} is not finite on every site")
    return out


# -- norms and domains ------------------------------------------------------------------

def _matrix(s: str) -> np.ndarray:
    rows = [tuple(_float(t) for t in r.split(",")) for r in s.split(";") if r.strip()]
    if len({len(r) for r in rows}) != 1:
        raise ValueError("ragged matrix")
    return np.array(rows, dtype=float)


def parse_norm(text: str, dim: int) -> NormSpec:
    """Parse ``lp:P``, ``weighted-lp:P:w1,w2``, ``ellipsoidal:...``, ``l1-polytope`` or ``polyhedral:...``."""
    parts = [t.strip() for t in text.strip().split(":")]
    kind = parts[0]
    if kind == "lp" and len(parts) == 2:
        return NormSpec.lp(dim, _float(parts[1]))
    if kind == "weighted-lp" and len(parts) == 3:
        w = _floats(parts[2])
        if len(w) != dim:
            raise ValueError(f"weighted-lp needs {dim} weights")
        return NormSpec.weighted_lp(_float(parts[1]), w)
    if kind == "ellipsoidal" and len(parts) == 2:
        M = _matrix(parts[1])
        if M.shape != (dim, dim):
            raise ValueError(f"ellipsoidal matrix must be {dim}x{dim}")
        return NormSpec.ellipsoidal(M)
    if kind == "l1-polytope" and len(parts) == 1:
        return NormSpec.l1_polytope(dim)
    if kind == "polyhedral" and len(parts) == 2:
        G = _matrix(parts[1])
        if G.shape[1] != dim:
            raise ValueError(f"polyhedral generators must have {dim} coordinates")
        return NormSpec.polyhedral(G)
    raise ValueError(f"cannot parse norm {text!r}")


def _omega_mask(dom, text: str) -> np.ndarray | None:
    from .spaces import strict_interior

    if text == "all":
        return None
    if text.startswith("inner:"):
        k = int(text.split(":", 1)[1])
        om = np.ones(dom.n_sites, bool)
        for _ in range(k):
            om = strict_interior(dom, om)
        if not om.any():
            raise ValueError("omega is empty")
        return om
    raise ValueError(f"cannot parse omega {text!r}; use all or inner:K")


def build_domain(d: dict, base_dir: Path | None = None):
    """Domain from a resolved ``[domain]`` section."""
    if d["model"] == "grid":
        shape = d["shape"]
        dim = len(shape)
        lower = np.array(d["lower"] or (0.0,) * dim, dtype=float)
        upper = np.array(d["upper"] or tuple(lower + 1.0), dtype=float)
        if lower.shape != (dim,) or upper.shape != (dim,):
            raise ValueError("lower/upper must have one entry per axis")
        steps = (upper - lower) / (np.asarray(shape) - 1)
        if not np.allclose(steps, steps[0], rtol=1e-12) or steps[0] <= 0:
            raise ValueError("the grid must have the same positive spacing on every axis")
        dom = GridDomain(shape, float(steps[0]), parse_norm(d["norm"], dim), tuple(lower), d["density"])
    else:
        if d["graph"] == "lattice":
            dom = GraphDomain.lattice(d["shape"], spread=d["spread"], p_model=d["p_model"])
        elif d["graph"] == "path":
            dom = GraphDomain.path(d["shape"][0], p_model=d["p_model"])
        else:
            path = Path(d["graph_file"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
            src, dst, c = data[:, 0].astype(int), data[:, 1].astype(int), data[:, 2]
            n = int(max(src.max(), dst.max())) + 1
            import scipy.sparse as sp
            C = sp.coo_matrix((np.r_[c, c], (np.r_[src, dst], np.r_[dst, src])), shape=(n, n))
            bd = np.zeros(n, bool)
            bd[list(d["graph_boundary"])] = True
            dom = GraphDomain(C, np.ones(n), boundary=bd, p_model=d["p_model"])
    om = _omega_mask(dom, d["omega"])
    return dom if om is None else dom.with_omega(om)


# -- loading ----------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Resolved configuration: every key with its parsed value and raw text."""

    sections: dict
    raw: dict
    path: Path | None = None
    lines: dict = field(default_factory=dict)

    @property
    def task(self) -> str:
        return self.sections["task"]["name"]

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    def resolved(self) -> dict:
        """Raw strings of every key including defaults (for provenance)."""
        return {s: dict(v) for s, v in self.raw.items()}


def _line_index(text: str) -> dict:
    """Map (section, key) to 1-based line numbers."""
    out, section = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            out[(section, None)] = no
            continue
        for sep in ("=", ":"):
            if sep in s:
                out.setdefault((section, s.split(sep, 1)[0].strip().lower()), no)
                break
    return out


def schema_for(task: str) -> dict:
    sch = {k: dict(v) for k, v in COMMON.items()}
    sch["task"].update(TASK_KEYS[task])
    return sch


def parse_config(text: str, path: Path | None = None) -> ExperimentConfig:
    where = str(path) if path else "<config>"
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",), default_section="__none__")
    try:
        cp.read_string(text, source=where)
    except configparser.ParsingError as exc:
        lines = ", ".join(str(no) for no, _ in exc.errors)
        raise ConfigError(f"{where}: malformed line(s) {lines}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{where}: {exc.message}") from None
    lines = _line_index(text)
    if not cp.has_section("task") or not cp.has_option("task", "name"):
        raise ConfigError(f"{where}: missing [task] name")
    name = cp.get("task", "name").strip()
    if name not in TASKS:
        raise ConfigError(f"{where}:{lines.get(('task', 'name'), '?')}: [task] name: unknown task {name!r}")
    schema = schema_for(name)
    for sec in cp.sections():
        if sec not in schema:
            raise ConfigError(f"{where}:{lines.get((sec, None), '?')}: unknown section [{sec}]")
        for key in cp[sec]:
            if key not in schema[sec]:
                raise ConfigError(f"{where}:{lines.get((sec, key), '?')}: [{sec}] unknown key {key!r}")
    parsed, raw = {}, {}
    for sec, keys in schema.items():
        parsed[sec], raw[sec] = {}, {}
        for key, spec in keys.items():
            given = cp.has_option(sec, key)
            txt = cp.get(sec, key) if given else spec.default
            if txt is None:
                raise ConfigError(f"{where}: [{sec}] missing required key {key!r}")
            try:
                parsed[sec][key] = spec.parse(txt)
            except ValueError as exc:
                raise ConfigError(f"{where}:{lines.get((sec, key), 'default')}: [{sec}] {key}: {exc}") from None
            raw[sec][key] = txt.strip()
    p = parsed["numeric"]["p"]
    if not (1.0 < p < math.inf):
        raise ConfigError(f"{where}:{lines.get(('numeric', 'p'), 'default')}: [numeric] p: exponent out of range (1,∞)")
    return ExperimentConfig(parsed, raw, path, lines)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path)


def schema_markdown() -> str:
    """Markdown reference of every section and key."""
    out = ["# Config schema", "", "INI format. Unknown sections or keys are errors.", ""]

    def table(title, keys):
        out.extend([f"## {title}", "", "| key | default | meaning |", "|---|---|---|"])
        for k, v in keys.items():
            d = "(required)" if v.default is None else (f"`{v.default}`" if v.default else "(empty)")
            opts = getattr(v.parse, "options", None)
            doc = v.doc + (f" ({' / '.join(opts)})" if opts else "")
            out.append(f"| `{k}` | {d} | {doc} |")
        out.append("")

    for sec, keys in COMMON.items():
        table(f"[{sec}]", keys)
    for task, keys in TASK_KEYS.items():
        table(f"[task] keys for `{task}`", keys)
    return "\n".join(out)
