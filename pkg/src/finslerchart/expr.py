"""Expression language for scalar fields on a slit tangent chart.

A chart on the slit tangent bundle of a 2n-dimensional manifold carries
coordinates x1..x{2n} (base) and y1..y{2n} (fiber).  Scalar fields such as
the metric generator, nonlinear connection coefficients and prescribed
torsion components are written in a small closed-form grammar:

    expr   := term (("+" | "-") term)*
    term   := factor (("*" | "/") factor)*
    factor := "-" factor | power
    power  := atom ("^" integer)?
    atom   := number | ident | func "(" expr ")" | "(" expr ")"
    ident  := ("x" | "y") integer
    func   := "sin" | "cos" | "exp" | "log" | "sqrt"

Exponents are integer literals only, so every expression is smooth wherever
its denominators and log/sqrt arguments stay in range, and the symbolic
differentiation rules are exact.  Parse trees are immutable; share them
freely across threads.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

import numpy as np

__all__ = [
    "Num", "Var", "Neg", "BinOp", "Pow", "Call", "Node",
    "ExpressionError", "ValidationError",
    "parse_expression", "to_source", "differentiate",
    "FieldSet", "validate_fieldset", "LoadedConfig", "load_config",
    "FUNCTIONS",
]

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")


class ExpressionError(ValueError):
    """Syntax or naming problem in expression source, with location."""

    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        if line:
            message = f"line {line}, column {column}: {message}"
        super().__init__(message)


class ValidationError(ValueError):
    """A field set or config file violates a structural requirement."""


# ---------------------------------------------------------------------------
# AST nodes
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Num:
    value: float


@dataclass(frozen=True, slots=True)
class Var:
    kind: str          # "x" or "y"
    index: int         # 1-based, valid range 1..2n


@dataclass(frozen=True, slots=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True, slots=True)
class BinOp:
    op: str            # one of + - * /
    left: "Node"
    right: "Node"


@dataclass(frozen=True, slots=True)
class Pow:
    base: "Node"
    exponent: int


@dataclass(frozen=True, slots=True)
class Call:
    func: str
    arg: "Node"


Node = Num | Var | Neg | BinOp | Pow | Call


def children(node: Node) -> tuple[Node, ...]:
    if isinstance(node, BinOp):
        return (node.left, node.right)
    if isinstance(node, (Neg,)):
        return (node.arg,)
    if isinstance(node, Pow):
        return (node.base,)
    if isinstance(node, Call):
        return (node.arg,)
    return ()


def iter_nodes(root: Node):
    """Yield every node reachable from ``root`` once (DAG-aware)."""
    seen: set[int] = set()
    stack = [root]
    while stack:
        nd = stack.pop()
        if id(nd) in seen:
            continue
        seen.add(id(nd))
        yield nd
        stack.extend(children(nd))


def variables_in(root: Node) -> set[tuple[str, int]]:
    return {(nd.kind, nd.index) for nd in iter_nodes(root) if isinstance(nd, Var)}


# ---------------------------------------------------------------------------
# Lexer / parser
# ---------------------------------------------------------------------------

_OPS = set("+-*/^()")


@dataclass(frozen=True, slots=True)
class _Token:
    kind: str          # "num", "ident", an operator char, or "end"
    text: str
    line: int
    column: int
    value: float = 0.0


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    line, col = 1, 1
    i, size = 0, len(source)
    while i < size:
        ch = source[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        start_col = col
        if ch in _OPS:
            tokens.append(_Token(ch, ch, line, start_col))
            i += 1
            col += 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < size and source[i + 1].isdigit()):
            j = i
            while j < size and source[j].isdigit():
                j += 1
            if j < size and source[j] == ".":
                j += 1
                while j < size and source[j].isdigit():
                    j += 1
            if j < size and source[j] in "eE":
                k = j + 1
                if k < size and source[k] in "+-":
                    k += 1
                if k < size and source[k].isdigit():
                    j = k
                    while j < size and source[j].isdigit():
                        j += 1
            text = source[i:j]
            try:
                value = float(text)
            except ValueError:
                raise ExpressionError(f"bad number literal '{text}'", line, start_col)
            tokens.append(_Token("num", text, line, start_col, value))
            col += j - i
            i = j
            continue
        if ch.isalpha():
            j = i
            while j < size and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(_Token("ident", source[i:j], line, start_col))
            col += j - i
            i = j
            continue
        raise ExpressionError(f"unexpected character '{ch}'", line, start_col)
    tokens.append(_Token("end", "", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token], n: int | None):
        self.tokens = tokens
        self.pos = 0
        self.n = n

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def take(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str) -> _Token:
        tok = self.peek()
        if tok.kind != kind:
            shown = tok.text if tok.kind != "end" else "end of input"
            raise ExpressionError(f"expected '{kind}', found {shown!r}", tok.line, tok.column)
        return self.take()

    def parse(self) -> Node:
        node = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ExpressionError(f"unexpected trailing input {tok.text!r}", tok.line, tok.column)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek().kind in ("+", "-"):
            op = self.take().kind
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.peek().kind in ("*", "/"):
            op = self.take().kind
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Node:
        if self.peek().kind == "-":
            self.take()
            return Neg(self.factor())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek().kind == "^":
            self.take()
            base = Pow(base, self._integer())
        return base

    def _integer(self) -> int:
        sign = 1
        if self.peek().kind == "-":
            self.take()
            sign = -1
        tok = self.expect("num")
        if not float(tok.value).is_integer():
            raise ExpressionError(f"exponent must be an integer, found {tok.text!r}",
                                  tok.line, tok.column)
        return sign * int(tok.value)

    def atom(self) -> Node:
        tok = self.peek()
        if tok.kind == "num":
            self.take()
            return Num(tok.value)
        if tok.kind == "(":
            self.take()
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind == "ident":
            self.take()
            name = tok.text
            if name in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(name, arg)
            if name[0] in "xy" and name[1:].isdigit():
                index = int(name[1:])
                if index < 1:
                    raise ExpressionError(f"variable index must be at least 1: '{name}'",
                                          tok.line, tok.column)
                if self.n is not None and index > 2 * self.n:
                    raise ExpressionError(
                        f"variable {name} out of range for n={self.n} (indices run 1..{2 * self.n})",
                        tok.line, tok.column)
                return Var(name[0], index)
            raise ExpressionError(f"unknown identifier {name}", tok.line, tok.column)
        shown = tok.text if tok.kind != "end" else "end of input"
        raise ExpressionError(f"expected a value, found {shown!r}", tok.line, tok.column)


def parse_expression(source: str, n: int | None = None) -> Node:
    """Parse ``source`` into an AST.

    When ``n`` is given, variable indices are checked against the chart
    dimension 2n immediately; otherwise range checking is deferred to
    :func:`validate_fieldset`.
    """
    return _Parser(_tokenize(source), n).parse()


# ---------------------------------------------------------------------------
# Pretty printer (inverse of the parser up to whitespace)
# ---------------------------------------------------------------------------

_PREC_ADD, _PREC_MUL, _PREC_UNARY, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _fmt_number(value: float) -> str:
    if value == int(value) and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def _render(node: Node, context: int) -> str:
    if isinstance(node, Num):
        return _fmt_number(node.value)
    if isinstance(node, Var):
        return f"{node.kind}{node.index}"
    if isinstance(node, Call):
        return f"{node.func}({_render(node.arg, _PREC_ADD)})"
    if isinstance(node, Neg):
        text = "-" + _render(node.arg, _PREC_UNARY)
        return f"({text})" if context > _PREC_UNARY else text
    if isinstance(node, Pow):
        text = f"{_render(node.base, _PREC_ATOM)}^{node.exponent}"
        return f"({text})" if context > _PREC_POW else text
    if isinstance(node, BinOp):
        if node.op in "+-":
            prec = _PREC_ADD
            left = _render(node.left, prec)
            right = _render(node.right, prec + 1)
        else:
            prec = _PREC_MUL
            left = _render(node.left, prec)
            right = _render(node.right, prec + 1)
        text = f"{left} {node.op} {right}" if node.op in "+-" else f"{left}{node.op}{right}"
        return f"({text})" if context > prec else text
    raise TypeError(f"not an expression node: {node!r}")


def to_source(node: Node) -> str:
    """Render an AST back to grammar text that re-parses to an equal tree."""
    return _render(node, _PREC_ADD)


# ---------------------------------------------------------------------------
# Symbolic differentiation
# ---------------------------------------------------------------------------
# Derivative trees share subtrees of the input aggressively, so repeated
# differentiation produces DAGs whose unique-node count stays manageable.
# The constructors below prune zeros and fold constants; they are used only
# when BUILDING derivatives, never by the parser, so parse trees stay
# faithful to their source text.

ZERO = Num(0.0)
ONE = Num(1.0)


def _is_zero(nd: Node) -> bool:
    return isinstance(nd, Num) and nd.value == 0.0


def _is_one(nd: Node) -> bool:
    return isinstance(nd, Num) and nd.value == 1.0


def _add(a: Node, b: Node) -> Node:
    if _is_zero(a):
        return b
    if _is_zero(b):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return BinOp("+", a, b)


def _sub(a: Node, b: Node) -> Node:
    if _is_zero(b):
        return a
    if _is_zero(a):
        return _neg(b)
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    return BinOp("-", a, b)


def _neg(a: Node) -> Node:
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _mul(a: Node, b: Node) -> Node:
    if _is_zero(a) or _is_zero(b):
        return ZERO
    if _is_one(a):
        return b
    if _is_one(b):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return BinOp("*", a, b)


def _div(a: Node, b: Node) -> Node:
    if _is_zero(a):
        return ZERO
    if _is_one(b):
        return a
    return BinOp("/", a, b)


def _pow(a: Node, k: int) -> Node:
    if k == 0:
        return ONE
    if k == 1:
        return a
    if isinstance(a, Num):
        return Num(a.value ** k)
    return Pow(a, k)


def ast_sum(terms: list[Node]) -> Node:
    """Balanced sum; keeps tree depth logarithmic in the term count."""
    terms = [t for t in terms if not _is_zero(t)]
    if not terms:
        return ZERO
    while len(terms) > 1:
        terms = [_add(terms[i], terms[i + 1]) if i + 1 < len(terms) else terms[i]
                 for i in range(0, len(terms), 2)]
    return terms[0]


def differentiate(root: Node, kind: str, index: int) -> Node:
    """Exact partial derivative of ``root`` with respect to x{index} or y{index}.

    Shared subtrees are differentiated once per call (memoised on identity),
    so the result of differentiating a DAG is again a compact DAG.
    """
    memo: dict[int, Node] = {}

    def go(nd: Node) -> Node:
        key = id(nd)
        hit = memo.get(key)
        if hit is not None:
            return hit
        if isinstance(nd, Num):
            out = ZERO
        elif isinstance(nd, Var):
            out = ONE if (nd.kind == kind and nd.index == index) else ZERO
        elif isinstance(nd, Neg):
            out = _neg(go(nd.arg))
        elif isinstance(nd, BinOp):
            da, db = go(nd.left), go(nd.right)
            if nd.op == "+":
                out = _add(da, db)
            elif nd.op == "-":
                out = _sub(da, db)
            elif nd.op == "*":
                out = _add(_mul(da, nd.right), _mul(nd.left, db))
            else:  # "/"
                if _is_zero(db):
                    out = _div(da, nd.right)
                else:
                    out = _div(_sub(_mul(da, nd.right), _mul(nd.left, db)),
                               _pow(nd.right, 2))
        elif isinstance(nd, Pow):
            da = go(nd.base)
            out = _mul(Num(float(nd.exponent)),
                       _mul(_pow(nd.base, nd.exponent - 1), da))
        elif isinstance(nd, Call):
            da = go(nd.arg)
            if nd.func == "sin":
                out = _mul(Call("cos", nd.arg), da)
            elif nd.func == "cos":
                out = _neg(_mul(Call("sin", nd.arg), da))
            elif nd.func == "exp":
                out = _mul(nd, da)           # reuses the original node
            elif nd.func == "log":
                out = _div(da, nd.arg)
            else:  # sqrt
                out = _div(da, _mul(Num(2.0), nd))
        else:
            raise TypeError(f"not an expression node: {nd!r}")
        memo[key] = out
        return out

    return go(root)


# ---------------------------------------------------------------------------
# Field sets
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class FieldSet:
    """All chart-local input fields for one run.

    ``n`` is the half-dimension: the base manifold has dimension 2n and the
    chart has 4n coordinates.  ``fstar`` generates the metric.  ``n_coeffs``
    optionally supplies nonlinear connection coefficients, indexed
    ``n_coeffs[p][q]`` for the coefficient with upper (fiber) index p and
    lower (base) index q, both 1-based in config keys and 0-based here.
    ``s_coeffs`` / ``t_coeffs`` hold prescribed skew torsion components as
    sparse maps (k, i, j) -> expression with 1-based indices and i < j only;
    the i > j half is implied by skew symmetry and i = j vanishes.
    """

    n: int
    fstar: Node
    n_coeffs: list[list[Node]] | None = None
    s_coeffs: dict[tuple[int, int, int], Node] = field(default_factory=dict)
    t_coeffs: dict[tuple[int, int, int], Node] = field(default_factory=dict)
    _derived: dict = field(default_factory=dict, repr=False)

    @property
    def m(self) -> int:
        """Number of base (equivalently fiber) coordinates, 2n."""
        return 2 * self.n

    def metric_asts(self) -> list[list[Node]]:
        """Metric component expressions, half the second fiber derivatives
        of the generating function.  Built once and cached."""
        cached = self._derived.get("metric_asts")
        if cached is None:
            m = self.m
            dy = [differentiate(self.fstar, "y", i + 1) for i in range(m)]
            cached = [[None] * m for _ in range(m)]
            for i in range(m):
                for j in range(i, m):
                    comp = _mul(Num(0.5), differentiate(dy[i], "y", j + 1))
                    cached[i][j] = comp
                    cached[j][i] = comp
            self._derived["metric_asts"] = cached
        return cached


def _check_indices(label: str, node: Node, n: int) -> None:
    for kind, index in sorted(variables_in(node)):
        if index > 2 * n:
            raise ValidationError(
                f"{label}: variable {kind}{index} out of range for n={n} "
                f"(indices run 1..{2 * n})")


def validate_fieldset(fs: FieldSet) -> FieldSet:
    """Check index ranges and skew storage conventions; returns ``fs``."""
    if fs.n < 1:
        raise ValidationError(f"n must be a positive integer, got {fs.n}")
    m = fs.m
    _check_indices("fstar", fs.fstar, fs.n)
    if fs.n_coeffs is not None:
        if len(fs.n_coeffs) != m or any(len(row) != m for row in fs.n_coeffs):
            raise ValidationError(f"N: expected a {m}x{m} table of expressions")
        for p in range(m):
            for q in range(m):
                _check_indices(f"N[{p + 1},{q + 1}]", fs.n_coeffs[p][q], fs.n)
    for label, table in (("S", fs.s_coeffs), ("T", fs.t_coeffs)):
        for (k, i, j), node in table.items():
            for idx in (k, i, j):
                if not 1 <= idx <= m:
                    raise ValidationError(
                        f"{label}[{k},{i},{j}]: index out of range for n={fs.n}")
            if i >= j:
                raise ValidationError(
                    f"{label}[{k},{i},{j}]: only i<j entries allowed "
                    "(the rest follows from skew symmetry)")
            _check_indices(f"{label}[{k},{i},{j}]", node, fs.n)
    return fs


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------

_CONFIG_KEYS = {"n", "fstar", "N", "S", "T", "points"}


@dataclass
class LoadedConfig:
    fieldset: FieldSet
    points: np.ndarray | None      # (P, 4n) rows of x then y, or None

    @property
    def n(self) -> int:
        return self.fieldset.n


def _as_index(text: str, label: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ValidationError(f"{label}: index key {text!r} is not an integer")


def _load_pair_table(table: dict, n: int, label: str) -> list[list[Node]]:
    m = 2 * n
    out = [[ZERO] * m for _ in range(m)]
    for pk, sub in table.items():
        p = _as_index(pk, label)
        if not isinstance(sub, dict):
            raise ValidationError(f"{label}.{pk}: expected a nested index table")
        for qk, src in sub.items():
            q = _as_index(qk, f"{label}.{pk}")
            for idx in (p, q):
                if not 1 <= idx <= m:
                    raise ValidationError(
                        f"{label}.{pk}.{qk}: index out of range for n={n}")
            if not isinstance(src, str):
                raise ValidationError(f"{label}.{pk}.{qk}: expected an expression string")
            out[p - 1][q - 1] = parse_expression(src, n)
    return out


def _load_triple_table(table: dict, n: int, label: str) -> dict[tuple[int, int, int], Node]:
    out = {}
    for kk, sub in table.items():
        k = _as_index(kk, label)
        if not isinstance(sub, dict):
            raise ValidationError(f"{label}.{kk}: expected a nested index table")
        for ik, sub2 in sub.items():
            i = _as_index(ik, f"{label}.{kk}")
            if not isinstance(sub2, dict):
                raise ValidationError(f"{label}.{kk}.{ik}: expected a nested index table")
            for jk, src in sub2.items():
                j = _as_index(jk, f"{label}.{kk}.{ik}")
                if not isinstance(src, str):
                    raise ValidationError(
                        f"{label}.{kk}.{ik}.{jk}: expected an expression string")
                out[(k, i, j)] = parse_expression(src, n)
    return out


MIN_FIBER_NORM = 1e-6


def load_config(path) -> LoadedConfig:
    """Load a TOML run configuration.

    Recognised keys: ``n``, ``fstar``, optional tables ``[N]``, ``[S]``,
    ``[T]`` keyed by integer index paths (upper index first), and an optional
    ``points`` array whose rows list the 4n chart coordinates x1..x{2n},
    y1..y{2n} of each evaluation site.
    """
    with open(path, "rb") as fh:
        try:
            raw = _toml.load(fh)
        except _toml.TOMLDecodeError as exc:
            raise ValidationError(f"config {path}: {exc}") from exc

    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ValidationError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    if "n" not in raw:
        raise ValidationError("config is missing required key 'n'")
    if "fstar" not in raw:
        raise ValidationError("config is missing required key 'fstar'")

    n = raw["n"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ValidationError(f"n: expected a positive integer, got {n!r}")
    if not isinstance(raw["fstar"], str):
        raise ValidationError("fstar: expected an expression string")

    try:
        fstar = parse_expression(raw["fstar"], n)
    except ExpressionError as exc:
        raise ValidationError(f"fstar: {exc}") from exc

    n_coeffs = None
    if "N" in raw:
        if not isinstance(raw["N"], dict):
            raise ValidationError("N: expected a table of expressions")
        n_coeffs = _load_pair_table(raw["N"], n, "N")
    s_coeffs = _load_triple_table(raw.get("S", {}), n, "S") if "S" in raw else {}
    t_coeffs = _load_triple_table(raw.get("T", {}), n, "T") if "T" in raw else {}

    points = None
    if "points" in raw:
        rows = raw["points"]
        if not isinstance(rows, list) or not rows:
            raise ValidationError("points: expected a non-empty list of coordinate rows")
        dim = 4 * n
        mat = []
        for idx, row in enumerate(rows):
            if not isinstance(row, list) or len(row) != dim:
                raise ValidationError(
                    f"points[{idx}]: expected {dim} coordinates (x1..x{2 * n}, y1..y{2 * n})")
            try:
                vec = [float(v) for v in row]
            except (TypeError, ValueError):
                raise ValidationError(f"points[{idx}]: coordinates must be numbers")
            ynorm = float(np.linalg.norm(vec[2 * n:]))
            if ynorm < MIN_FIBER_NORM:
                raise ValidationError(
                    f"points[{idx}]: fiber part too close to the zero section "
                    f"(|y|={ynorm:.2e} < {MIN_FIBER_NORM:g})")
            mat.append(vec)
        points = np.asarray(mat, dtype=float)

    fieldset = validate_fieldset(
        FieldSet(n=n, fstar=fstar, n_coeffs=n_coeffs,
                 s_coeffs=s_coeffs, t_coeffs=t_coeffs))
    return LoadedConfig(fieldset=fieldset, points=points)
