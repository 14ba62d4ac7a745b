"""Signal Temporal Logic formulas over linear predicates.

Formulas are immutable trees built from ``TRUE``, :class:`Pred`, :class:`Not`,
:class:`And` and :class:`Until`.  Eventually, globally, implication and
disjunction are sugar and desugar into those five node types on construction,
so every evaluator in the package only has to handle the core grammar.

Concrete syntax (see :func:`parse_formula`)::

    formula := 'T' | atom | '!' formula | formula '&' formula
             | formula '|' formula | formula '->' formula
             | formula 'U' interval formula
             | 'F' interval formula | 'G' interval formula | '(' formula ')'
    atom     := linexpr ('>=' | '<=') linexpr
    interval := ('[' | '(') number ',' number (']' | ')')

Binding strength, tightest first: ``! F G``, ``&``, ``|``, ``->``, ``U``.
``->`` and ``U`` associate to the right.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

__all__ = [
    "TimeInterval",
    "LinearPredicate",
    "TrueF",
    "TRUE",
    "Pred",
    "Not",
    "And",
    "Until",
    "Formula",
    "eventually",
    "globally",
    "implies",
    "disjunction",
    "conjunction",
    "StateTrajectory",
    "FormulaSyntaxError",
    "HorizonError",
    "parse_formula",
    "to_text",
    "horizon",
    "predicates",
    "subformulas",
    "eval_boolean",
    "boolean_signal",
    "window_offsets",
]

# Grid points closer than this to an interval endpoint are "on" the endpoint.
TIME_TOL = 1e-12


class FormulaSyntaxError(ValueError):
    """Raised for malformed formula text; carries a 1-based line/column."""

    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line else ""
        super().__init__(message + where)


class HorizonError(ValueError):
    """The trajectory is too short to decide the formula."""


@dataclass(frozen=True)
class TimeInterval:
    lower: float
    upper: float
    lower_open: bool = False
    upper_open: bool = False

    def __post_init__(self):
        lo, hi = float(self.lower), float(self.upper)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ValueError("interval bounds must be finite")
        if lo < 0:
            raise ValueError(f"interval lower bound must be >= 0, got {lo}")
        if not lo < hi:
            raise ValueError(f"malformed interval: need lower < upper, got [{lo}, {hi}]")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def contains(self, t: float) -> bool:
        if self.lower_open:
            if t <= self.lower + TIME_TOL:
                return False
        elif t < self.lower - TIME_TOL:
            return False
        if self.upper_open:
            return t < self.upper - TIME_TOL
        return t <= self.upper + TIME_TOL

    def __str__(self):
        lb = "(" if self.lower_open else "["
        rb = ")" if self.upper_open else "]"
        return f"{lb}{_num(self.lower)},{_num(self.upper)}{rb}"


@dataclass(frozen=True)
class LinearPredicate:
    """``h(x) = coefficients . x + offset``; the predicate holds when h(x) >= 0."""

    coefficients: tuple
    offset: float = 0.0

    def __post_init__(self):
        coeffs = tuple(float(c) for c in np.ravel(self.coefficients))
        if not coeffs:
            raise ValueError("predicate needs at least one coefficient")
        object.__setattr__(self, "coefficients", coeffs)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def dim(self) -> int:
        return len(self.coefficients)

    def value(self, x) -> np.ndarray:
        """h evaluated on the last axis of ``x``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"state dimension {x.shape[-1]} != predicate dimension {self.dim}")
        return x @ np.asarray(self.coefficients) + self.offset


@dataclass(frozen=True)
class TrueF:
    def __str__(self):
        return "T"


TRUE = TrueF()


@dataclass(frozen=True)
class Pred:
    predicate: LinearPredicate


@dataclass(frozen=True)
class Not:
    child: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Until:
    interval: TimeInterval
    left: "Formula"
    right: "Formula"


Formula = Union[TrueF, Pred, Not, And, Until]


def eventually(interval: TimeInterval, phi: Formula) -> Formula:
    return Until(interval, TRUE, phi)


def globally(interval: TimeInterval, phi: Formula) -> Formula:
    return Not(Until(interval, TRUE, Not(phi)))


def implies(a: Formula, b: Formula) -> Formula:
    return Not(And(a, Not(b)))


def disjunction(a: Formula, b: Formula) -> Formula:
    return Not(And(Not(a), Not(b)))


def conjunction(*phis: Formula) -> Formula:
    if not phis:
        return TRUE
    out = phis[0]
    for phi in phis[1:]:
        out = And(out, phi)
    return out


def horizon(f: Formula) -> float:
    """Lookahead (seconds) needed to decide ``f`` at time 0."""
    if isinstance(f, (TrueF, Pred)):
        return 0.0
    if isinstance(f, Not):
        return horizon(f.child)
    if isinstance(f, And):
        return max(horizon(f.left), horizon(f.right))
    if isinstance(f, Until):
        return f.interval.upper + max(horizon(f.left), horizon(f.right))
    raise TypeError(f"not a formula: {f!r}")


def subformulas(f: Formula):
    """Pre-order traversal of all nodes."""
    yield f
    if isinstance(f, Not):
        yield from subformulas(f.child)
    elif isinstance(f, (And, Until)):
        yield from subformulas(f.left)
        yield from subformulas(f.right)


def predicates(f: Formula) -> list:
    """Distinct linear predicates in first-occurrence order."""
    seen = {}
    for node in subformulas(f):
        if isinstance(node, Pred):
            seen.setdefault(node.predicate, None)
    return list(seen)


# ---------------------------------------------------------------------------
# Parsing

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<op>->|>=|<=|[!&|()\[\],*+\-])
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise FormulaSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "ws":
            for k, ch in enumerate(m.group(), start=pos):
                if ch == "\n":
                    line += 1
                    line_start = k + 1
        else:
            toks.append(_Tok(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text, variables, macros, dim):
        self.toks = _tokenize(text)
        self.i = 0
        self.variables = dict(variables)
        self.macros = dict(macros or {})
        if dim is None:
            dim = max(self.variables.values(), default=-1) + 1
        self.dim = dim
        for name, idx in self.variables.items():
            if not 0 <= idx < dim:
                raise ValueError(f"variable {name!r} index {idx} outside state dimension {dim}")

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, msg, tok=None):
        tok = tok or self.tok
        return FormulaSyntaxError(msg, tok.line, tok.col)

    def accept(self, text) -> bool:
        if self.tok.text == text and self.tok.kind in ("op", "ident"):
            self.i += 1
            return True
        return False

    def expect(self, text):
        if not self.accept(text):
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")

    def parse(self) -> Formula:
        f = self.until()
        if self.tok.kind != "eof":
            raise self.error(f"unexpected {self.tok.text!r}")
        return f

    def until(self) -> Formula:
        left = self.implication()
        if self.tok.kind == "ident" and self.tok.text == "U":
            self.i += 1
            interval = self.interval()
            return Until(interval, left, self.until())
        return left

    def implication(self) -> Formula:
        left = self.disj()
        if self.accept("->"):
            return implies(left, self.implication())
        return left

    def disj(self) -> Formula:
        left = self.conj()
        while self.accept("|"):
            left = disjunction(left, self.conj())
        return left

    def conj(self) -> Formula:
        left = self.unary()
        while self.accept("&"):
            left = And(left, self.unary())
        return left

    def unary(self) -> Formula:
        tok = self.tok
        if self.accept("!"):
            return Not(self.unary())
        if tok.kind == "ident" and tok.text in ("F", "G"):
            self.i += 1
            interval = self.interval()
            body = self.unary()
            return eventually(interval, body) if tok.text == "F" else globally(interval, body)
        if tok.kind == "ident" and tok.text == "T" and not self._starts_comparison(self.i + 1):
            self.i += 1
            return TRUE
        if tok.text == "(" and tok.kind == "op":
            # A parenthesis may open a nested formula or a linear expression.
            save = self.i
            try:
                self.i += 1
                inner = self.until()
                self.expect(")")
                if not self._starts_comparison(self.i):
                    return inner
            except FormulaSyntaxError:
                pass
            self.i = save
            return self.atom()
        if tok.kind == "ident" and tok.text in self.macros and not self._starts_comparison(self.i + 1):
            self.i += 1
            return self.macros[tok.text]
        return self.atom()

    def _starts_comparison(self, j) -> bool:
        t = self.toks[j]
        return t.kind == "op" and t.text in (">=", "<=", "*", "+", "-")

    def interval(self) -> TimeInterval:
        tok = self.tok
        if tok.text not in ("[", "("):
            raise self.error("expected interval after temporal operator")
        lower_open = tok.text == "("
        self.i += 1
        a = self.number()
        self.expect(",")
        b = self.number()
        close = self.tok
        if close.text not in ("]", ")"):
            raise self.error("expected ']' or ')' to close interval")
        self.i += 1
        try:
            return TimeInterval(a, b, lower_open, close.text == ")")
        except ValueError as exc:
            raise self.error(str(exc), tok) from None

    def number(self) -> float:
        sign = -1.0 if self.accept("-") else 1.0
        tok = self.tok
        if tok.kind != "num":
            raise self.error(f"expected number, found {tok.text or 'end of input'!r}")
        self.i += 1
        return sign * float(tok.text)

    def atom(self) -> Formula:
        start = self.tok
        lhs = self.linexpr()
        cmp = self.tok
        if cmp.text not in (">=", "<="):
            if start.kind == "ident" and start.text not in self.variables:
                raise self.error(f"unbound name {start.text!r}", start)
            raise self.error("expected '>=' or '<='", cmp)
        self.i += 1
        rhs = self.linexpr()
        diff = lhs - rhs if cmp.text == ">=" else rhs - lhs
        return Pred(LinearPredicate(tuple(diff[:-1]), diff[-1]))

    def linexpr(self) -> np.ndarray:
        """Returns [coefficients..., constant]."""
        acc = np.zeros(self.dim + 1)
        sign = -1.0 if self.accept("-") else 1.0
        if sign > 0:
            self.accept("+")
        acc += sign * self.term()
        while self.tok.text in ("+", "-") and self.tok.kind == "op":
            sign = 1.0 if self.tok.text == "+" else -1.0
            self.i += 1
            acc += sign * self.term()
        return acc

    def term(self) -> np.ndarray:
        vec = np.zeros(self.dim + 1)
        tok = self.tok
        if tok.text == "(" and tok.kind == "op":
            self.i += 1
            vec = self.linexpr()
            self.expect(")")
            return vec
        if tok.kind == "num":
            self.i += 1
            value = float(tok.text)
            if self.accept("*"):
                return value * self.term()
            vec[-1] = value
            return vec
        if tok.kind == "ident":
            if tok.text not in self.variables:
                raise self.error(f"unbound variable {tok.text!r}")
            self.i += 1
            vec[self.variables[tok.text]] = 1.0
            return vec
        raise self.error(f"unexpected {tok.text or 'end of input'!r}")


def parse_formula(
    text: str,
    variables: Mapping[str, int],
    macros: Mapping[str, Formula] | None = None,
    dim: int | None = None,
) -> Formula:
    """Parse ``text`` into a :data:`Formula`.

    ``variables`` maps identifiers to state-vector indices; ``macros`` maps
    names to already-built formulas (regions such as ``Puddle``).  ``dim``
    defaults to one past the largest variable index.
    """
    return _Parser(text, variables, macros, dim).parse()


def _num(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def _pred_text(p: LinearPredicate, names: Sequence[str]) -> str:
    nz = [(i, c) for i, c in enumerate(p.coefficients) if c != 0.0]
    if len(nz) == 1 and nz[0][1] in (1.0, -1.0):
        i, c = nz[0]
        if c == 1.0:
            return f"{names[i]} >= {_num(-p.offset)}"
        return f"{names[i]} <= {_num(p.offset)}"
    terms = [f"{_num(c)}*{names[i]}" for i, c in nz]
    terms.append(_num(p.offset))
    return " + ".join(terms).replace("+ -", "- ") + " >= 0"


def to_text(f: Formula, names: Sequence[str] | Mapping[str, int]) -> str:
    """Render ``f`` in the core grammar; ``parse_formula`` reads it back."""
    if isinstance(names, Mapping):
        inv = {idx: name for name, idx in names.items()}
        names = [inv.get(i, f"x{i}") for i in range(max(inv, default=-1) + 1)]
    names = list(names)

    def go(node) -> str:
        if isinstance(node, TrueF):
            return "T"
        if isinstance(node, Pred):
            if node.predicate.dim > len(names):
                raise ValueError("not enough variable names for predicate")
            return "(" + _pred_text(node.predicate, names) + ")"
        if isinstance(node, Not):
            return "!" + go(node.child)
        if isinstance(node, And):
            return "(" + go(node.left) + " & " + go(node.right) + ")"
        if isinstance(node, Until):
            return "(" + go(node.left) + f" U{node.interval} " + go(node.right) + ")"
        raise TypeError(f"not a formula: {node!r}")

    return go(f)


# ---------------------------------------------------------------------------
# Boolean semantics on sampled realizations


@dataclass(frozen=True, eq=False)
class StateTrajectory:
    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        states = np.array(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if times.ndim != 1 or len(times) < 1 or len(times) != len(states):
            raise ValueError("need one state per time and at least one sample")
        if abs(times[0]) > TIME_TOL:
            raise ValueError("trajectory must start at t = 0")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        times.setflags(write=False)
        states.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @property
    def duration(self) -> float:
        return float(self.times[-1])


def window_offsets(interval: TimeInterval, dt: float) -> np.ndarray:
    """Grid offsets k (time k*dt) that fall inside ``interval``."""
    k_max = int(math.floor(interval.upper / dt + 1e-9))
    ks = np.arange(0, k_max + 1)
    mask = np.array([interval.contains(k * dt) for k in ks], dtype=bool)
    return ks[mask]


def boolean_signal(f: Formula, times: np.ndarray, states: np.ndarray) -> np.ndarray:
    """Satisfaction of ``f`` at every sample time.

    ``states`` has shape ``(..., len(times), n)``; leading axes are a batch of
    realizations sharing one time grid.  Windows that run past the last
    sample are evaluated on the samples that exist.
    """
    times = np.asarray(times, dtype=float)
    states = np.asarray(states, dtype=float)
    n = len(times)
    cache = {}

    def go(node):
        key = id(node)
        if key in cache:
            return cache[key][1]
        if isinstance(node, TrueF):
            out = np.ones(states.shape[:-1], dtype=bool)
        elif isinstance(node, Pred):
            out = node.predicate.value(states) >= 0
        elif isinstance(node, Not):
            out = ~go(node.child)
        elif isinstance(node, And):
            out = go(node.left) & go(node.right)
        elif isinstance(node, Until):
            out = _until_boolean(node.interval, go(node.left), go(node.right), times)
        else:
            raise TypeError(f"not a formula: {node!r}")
        cache[key] = (node, out)
        return out

    assert states.shape[-2] == n
    return go(f)


def _until_boolean(interval, left, right, times):
    n = len(times)
    idx = np.arange(n)
    # window [lo_i, hi_i) of sample indices satisfying t_j - t_i in interval
    lo_t = times + interval.lower
    hi_t = times + interval.upper
    if interval.lower_open:
        lo = np.searchsorted(times, lo_t + TIME_TOL, side="right")
    else:
        lo = np.searchsorted(times, lo_t - TIME_TOL, side="left")
    if interval.upper_open:
        hi = np.searchsorted(times, hi_t - TIME_TOL, side="left")
    else:
        hi = np.searchsorted(times, hi_t + TIME_TOL, side="right")
    # first index >= i where the left operand fails (n if none)
    fail = np.where(left, n, idx)
    first_fail = np.minimum.accumulate(fail[..., ::-1], axis=-1)[..., ::-1]
    # right must hold at some j in [lo, min(hi, first_fail))
    end = np.minimum(hi, first_fail)
    csum = np.concatenate(
        [np.zeros(right.shape[:-1] + (1,), dtype=np.int64), np.cumsum(right, axis=-1)], axis=-1
    )
    start = np.broadcast_to(lo, end.shape)
    stop = np.maximum(end, start)
    count = np.take_along_axis(csum, stop, axis=-1) - np.take_along_axis(csum, start, axis=-1)
    return count > 0


def eval_boolean(f: Formula, x: StateTrajectory, t: float = 0.0) -> bool:
    """``(x, t) |= f`` over the sample grid of ``x``."""
    times = x.times
    k = int(np.searchsorted(times, t - TIME_TOL))
    if k >= len(times) or abs(times[k] - t) > 1e-9:
        raise ValueError(f"t = {t} is not a sample time of the trajectory")
    if times[-1] + 1e-9 < t + horizon(f):
        raise HorizonError(
            f"trajectory ends at {times[-1]:g} s but formula needs {t + horizon(f):g} s"
        )
    return bool(boolean_signal(f, times, x.states)[k])
