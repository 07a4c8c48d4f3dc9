"""Reach-avoid STL: formulas, parsing, Lipschitz robustness and a boolean monitor.

Only ``always (pred)`` and ``eventually (pred)`` (and their expanded
``true until ...`` forms) receive a robustness measure. The boolean monitor
in :func:`satisfies` handles the whole untimed fragment and is written
independently of :func:`robustness` so that each can check the other.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.typing import ArrayLike

from .signals import FloatArray, Trajectory, WeightedNorm

__all__ = [
    "Interval", "Halfspace", "Predicate",
    "TrueF", "FalseF", "TRUE", "FALSE", "Pred", "Not", "And", "Or", "Until", "Eventually", "Always",
    "Spec", "SpecSyntaxError", "NotReachAvoidError", "RobustnessMeasure",
    "parse_spec", "format_spec", "signed_distance", "holds", "reach_avoid_form", "is_certifiable",
    "build_measure", "robustness", "satisfies", "predicate_coordinates",
]


# --------------------------------------------------------------------------- predicates


@dataclass(frozen=True)
class Interval:
    """Truth region ``lo <= x[index] <= hi`` (or its complement when ``inside`` is False).

    Either bound may be infinite, giving a half-line. Strict flags only
    matter to the boolean monitor; the signed distance is the same.
    """

    index: int
    lo: float = -math.inf
    hi: float = math.inf
    lo_strict: bool = False
    hi_strict: bool = False
    inside: bool = True

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError("coordinate index must be non-negative")
        if math.isinf(self.lo) and math.isinf(self.hi):
            raise ValueError("an interval predicate needs at least one finite bound")
        if math.isnan(self.lo) or math.isnan(self.hi) or self.lo > self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")
        if self.lo == self.hi and (self.lo_strict or self.hi_strict):
            raise ValueError(f"empty interval around {self.lo}")

    @property
    def dim_required(self) -> int:
        return self.index + 1


@dataclass(frozen=True)
class Halfspace:
    """Truth region ``coeffs . x >= offset`` (``>`` when strict)."""

    coeffs: tuple[float, ...]
    offset: float
    strict: bool = False

    def __post_init__(self) -> None:
        coeffs = [float(c) for c in self.coeffs]
        while coeffs and coeffs[-1] == 0.0:
            coeffs.pop()
        object.__setattr__(self, "coeffs", tuple(coeffs))
        object.__setattr__(self, "offset", float(self.offset))
        if not any(c != 0.0 for c in self.coeffs):
            raise ValueError("half-space normal must be non-zero")
        if not all(math.isfinite(c) for c in self.coeffs) or not math.isfinite(self.offset):
            raise ValueError("half-space coefficients must be finite")

    @property
    def dim_required(self) -> int:
        return max(i for i, c in enumerate(self.coeffs) if c != 0.0) + 1


Predicate = Union[Interval, Halfspace]


def _check_dim(x: np.ndarray, p: Predicate) -> None:
    if x.shape[-1] < p.dim_required:
        raise ValueError(f"state of dimension {x.shape[-1]} too small for predicate on coordinate {p.dim_required - 1}")


def holds(p: Predicate, x: ArrayLike) -> bool:
    """Boolean truth of a predicate at one state."""
    x = np.asarray(x, dtype=np.float64)
    _check_dim(x, p)
    if isinstance(p, Interval):
        v = x[p.index]
        above = v > p.lo if p.lo_strict else v >= p.lo
        below = v < p.hi if p.hi_strict else v <= p.hi
        inside = bool(above and below)
        return inside if p.inside else not inside
    lhs = float(np.dot(p.coeffs, x[: len(p.coeffs)]))
    return lhs > p.offset if p.strict else lhs >= p.offset


def _coordinate_scale(nrm: WeightedNorm, index: int) -> float:
    w = nrm.weights[index]
    if w <= 0.0:
        raise ValueError(f"norm weight on coordinate {index} is zero; signed distance is undefined")
    return math.sqrt(w)


def _signed_distance_batch(p: Predicate, states: np.ndarray, nrm: WeightedNorm) -> FloatArray:
    if states.shape[-1] != nrm.dim:
        raise ValueError(f"state dimension {states.shape[-1]} does not match norm dimension {nrm.dim}")
    _check_dim(states, p)
    if isinstance(p, Interval):
        v = states[..., p.index]
        d = _coordinate_scale(nrm, p.index) * np.minimum(v - p.lo, p.hi - v)
        return d if p.inside else -d
    a = np.zeros(nrm.dim)
    a[: len(p.coeffs)] = p.coeffs
    support = a != 0.0
    if np.any(nrm.weights[support] <= 0.0):
        raise ValueError("norm weight is zero on a coordinate the half-space depends on")
    # distance to {a.y = b} in the weighted norm is |a.x - b| / ||a||_dual
    dual = math.sqrt(float(np.sum(a[support] ** 2 / nrm.weights[support])))
    return (states @ a - p.offset) / dual


def signed_distance(p: Predicate | "TrueF" | "FalseF", x: ArrayLike, nrm: WeightedNorm) -> float:
    """Signed distance from ``x`` to the boundary of the predicate's truth region.

    Positive inside, negative outside, measured in ``nrm``; 1-Lipschitz.
    The literals ``TRUE``/``FALSE`` map to the constants +1/-1.
    """
    if isinstance(p, TrueF):
        return 1.0
    if isinstance(p, FalseF):
        return -1.0
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("expected a single state vector")
    return float(_signed_distance_batch(p, x[None, :], nrm)[0])


# --------------------------------------------------------------------------- formulas


@dataclass(frozen=True)
class TrueF:
    pass


@dataclass(frozen=True)
class FalseF:
    pass


TRUE = TrueF()
FALSE = FalseF()


@dataclass(frozen=True)
class Pred:
    pred: Predicate


@dataclass(frozen=True)
class Not:
    arg: "Spec"


@dataclass(frozen=True)
class And:
    left: "Spec"
    right: "Spec"


@dataclass(frozen=True)
class Or:
    left: "Spec"
    right: "Spec"


@dataclass(frozen=True)
class Until:
    left: "Spec"
    right: "Spec"


@dataclass(frozen=True)
class Eventually:
    arg: "Spec"


@dataclass(frozen=True)
class Always:
    arg: "Spec"


Spec = Union[TrueF, FalseF, Pred, Not, And, Or, Until, Eventually, Always]


# --------------------------------------------------------------------------- parsing


class SpecSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class NotReachAvoidError(ValueError):
    """Raised when a formula is not ``always (pred)`` / ``eventually (pred)``."""


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<cmp><=|>=|<|>)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<punct>[()\[\]*+-])
    """,
    re.VERBOSE,
)

_KEYWORDS = {"always", "eventually", "not", "and", "or", "until", "true", "false", "abs", "x"}


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise SpecSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        tok_text = m.group()
        if kind == "ws":
            for k, ch in enumerate(tok_text):
                if ch == "\n":
                    line += 1
                    line_start = pos + k + 1
        else:
            if kind == "ident" and tok_text not in _KEYWORDS:
                raise SpecSyntaxError(f"unknown identifier {tok_text!r}", line, pos - line_start + 1)
            toks.append(_Tok(kind, tok_text, line, pos - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    # until (right-assoc) < or < and < unary prefix < atom

    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def cur(self) -> _Tok:
        return self.toks[self.i]

    def _fail(self, message: str) -> SpecSyntaxError:
        tok = self.cur
        where = "end of input" if tok.kind == "eof" else repr(tok.text)
        return SpecSyntaxError(f"{message}, found {where}", tok.line, tok.col)

    def _accept(self, text: str) -> bool:
        if self.cur.text == text and self.cur.kind != "eof":
            self.i += 1
            return True
        return False

    def _expect(self, text: str) -> None:
        if not self._accept(text):
            raise self._fail(f"expected {text!r}")

    def parse(self) -> Spec:
        node = self._until()
        if self.cur.kind != "eof":
            raise self._fail("expected end of input")
        return node

    def _until(self) -> Spec:
        left = self._or()
        if self._accept("until"):
            return Until(left, self._until())
        return left

    def _or(self) -> Spec:
        node = self._and()
        while self._accept("or"):
            node = Or(node, self._and())
        return node

    def _and(self) -> Spec:
        node = self._unary()
        while self._accept("and"):
            node = And(node, self._unary())
        return node

    def _unary(self) -> Spec:
        if self._accept("not"):
            return Not(self._unary())
        if self._accept("always"):
            return Always(self._unary())
        if self._accept("eventually"):
            return Eventually(self._unary())
        return self._atom()

    def _atom(self) -> Spec:
        if self._accept("true"):
            return TRUE
        if self._accept("false"):
            return FALSE
        if self._accept("("):
            node = self._until()
            self._expect(")")
            return node
        return Pred(self._predicate())

    def _number(self) -> float:
        sign = 1.0
        while self.cur.kind == "punct" and self.cur.text in ("+", "-"):
            if self.cur.text == "-":
                sign = -sign
            self.i += 1
        if self.cur.kind != "num":
            raise self._fail("expected a number")
        value = float(self.cur.text)
        self.i += 1
        return sign * value

    def _coord(self) -> int:
        self._expect("x")
        self._expect("[")
        if self.cur.kind != "num" or not self.cur.text.isdigit():
            raise self._fail("expected a coordinate index")
        idx = int(self.cur.text)
        self.i += 1
        self._expect("]")
        return idx

    def _linear_term(self) -> tuple[dict[int, float], bool]:
        """``[c *] x[i] {(+|-) [c *] x[j]}``; also reports whether it was a bare ``x[i]``."""
        coeffs: dict[int, float] = {}
        bare = True
        first = True
        while True:
            sign = 1.0
            if self._accept("-"):
                sign, bare = -1.0, False
            elif not self._accept("+") and not first:
                break
            c = 1.0
            if self.cur.kind == "num":
                c = float(self.cur.text)
                self.i += 1
                self._expect("*")
                bare = False
            idx = self._coord()
            coeffs[idx] = coeffs.get(idx, 0.0) + sign * c
            if not first:
                bare = False
            first = False
        return coeffs, bare

    def _cmp(self) -> str | None:
        if self.cur.kind == "cmp":
            op = self.cur.text
            self.i += 1
            return op
        return None

    def _predicate(self) -> Predicate:
        tok = self.cur
        if tok.kind == "num" and self.toks[self.i + 1].text != "*" or (
            tok.kind == "punct" and tok.text in ("+", "-") and self.toks[self.i + 1].kind == "num"
            and self.toks[self.i + 2].text != "*"
        ):
            # chained form: lo <(=) x[i] <(=) hi
            lo = self._number()
            op1 = self._cmp()
            if op1 not in ("<", "<="):
                raise self._fail("expected '<' or '<=' in a chained comparison")
            idx = self._coord()
            op2 = self._cmp()
            if op2 not in ("<", "<="):
                raise self._fail("expected '<' or '<=' in a chained comparison")
            hi = self._number()
            try:
                return Interval(idx, lo, hi, lo_strict=op1 == "<", hi_strict=op2 == "<")
            except ValueError as exc:
                raise SpecSyntaxError(str(exc), tok.line, tok.col) from None
        if self._accept("abs"):
            self._expect("(")
            idx = self._coord()
            self._expect(")")
            op = self._cmp()
            if op is None:
                raise self._fail("expected a comparison after abs(...)")
            c = self._number()
            if c < 0:
                raise SpecSyntaxError("abs(...) bound must be non-negative", tok.line, tok.col)
            try:
                if op in ("<=", "<"):
                    return Interval(idx, -c, c, lo_strict=op == "<", hi_strict=op == "<")
                return Interval(idx, -c, c, lo_strict=op == ">=", hi_strict=op == ">=", inside=False)
            except ValueError as exc:
                raise SpecSyntaxError(str(exc), tok.line, tok.col) from None
        if tok.text not in ("x", "+", "-") and tok.kind != "num":
            raise self._fail("expected a predicate")
        coeffs, bare = self._linear_term()
        op = self._cmp()
        if op is None:
            # bare signal term reads as "term > 0"
            op, c = ">", 0.0
        else:
            c = self._number()
        return _linear_predicate(coeffs, bare, op, c, tok)


def _linear_predicate(coeffs: dict[int, float], bare: bool, op: str, c: float, tok: _Tok) -> Predicate:
    nonzero = {i: a for i, a in coeffs.items() if a != 0.0}
    if not nonzero:
        raise SpecSyntaxError("predicate has no non-zero coefficient", tok.line, tok.col)
    strict = op in ("<", ">")
    if bare:
        (idx,) = nonzero
        if op in (">", ">="):
            return Interval(idx, lo=c, lo_strict=strict)
        return Interval(idx, hi=c, hi_strict=strict)
    n = max(nonzero) + 1
    a = [nonzero.get(i, 0.0) for i in range(n)]
    if op in (">", ">="):
        return Halfspace(tuple(a), c, strict)
    return Halfspace(tuple(-v for v in a), -c, strict)


def parse_spec(text: str) -> Spec:
    """Parse a formula such as ``always (abs(x[2]) <= 0.7)``.

    Raises :class:`SpecSyntaxError` carrying line/column on malformed input.
    """
    return _Parser(text).parse()


def _fmt_num(v: float) -> str:
    return repr(float(v))


def _format_pred(p: Predicate) -> str:
    if isinstance(p, Halfspace):
        parts = []
        for i, a in enumerate(p.coeffs):
            if a == 0.0:
                continue
            sign = "-" if a < 0 else "+"
            parts.append(f"{sign} {_fmt_num(abs(a))} * x[{i}]")
        text = " ".join(parts)
        text = text[2:] if text.startswith("+ ") else "-" + text[2:]
        return f"{text} {'>' if p.strict else '>='} {_fmt_num(p.offset)}"
    x = f"x[{p.index}]"
    if p.lo == -p.hi and p.lo_strict == p.hi_strict and math.isfinite(p.hi):
        if p.inside:
            return f"abs({x}) {'<' if p.hi_strict else '<='} {_fmt_num(p.hi)}"
        return f"abs({x}) {'>=' if p.hi_strict else '>'} {_fmt_num(p.hi)}"
    if not p.inside:
        return format_spec(Not(Pred(Interval(p.index, p.lo, p.hi, p.lo_strict, p.hi_strict))))
    if math.isinf(p.hi):
        return f"{x} {'>' if p.lo_strict else '>='} {_fmt_num(p.lo)}"
    if math.isinf(p.lo):
        return f"{x} {'<' if p.hi_strict else '<='} {_fmt_num(p.hi)}"
    return f"{_fmt_num(p.lo)} {'<' if p.lo_strict else '<='} {x} {'<' if p.hi_strict else '<='} {_fmt_num(p.hi)}"


def format_spec(spec: Spec) -> str:
    """Render a formula in the parser's grammar (fully parenthesized)."""
    if isinstance(spec, TrueF):
        return "true"
    if isinstance(spec, FalseF):
        return "false"
    if isinstance(spec, Pred):
        return _format_pred(spec.pred)
    if isinstance(spec, Not):
        return f"not ({format_spec(spec.arg)})"
    if isinstance(spec, Always):
        return f"always ({format_spec(spec.arg)})"
    if isinstance(spec, Eventually):
        return f"eventually ({format_spec(spec.arg)})"
    ops = {And: "and", Or: "or", Until: "until"}
    for cls, word in ops.items():
        if isinstance(spec, cls):
            return f"({format_spec(spec.left)}) {word} ({format_spec(spec.right)})"
    raise TypeError(f"not a formula: {spec!r}")


# --------------------------------------------------------------------------- robustness


def _is_state_formula(phi: Spec) -> bool:
    if isinstance(phi, (TrueF, FalseF, Pred)):
        return True
    return isinstance(phi, Not) and _is_state_formula(phi.arg)


def reach_avoid_form(spec: Spec) -> tuple[str, Spec]:
    """Classify ``spec`` as ``("eventually", phi)`` or ``("always", phi)``.

    Accepts the sugared forms and their expansions ``true until phi`` and
    ``not (true until not phi)``; ``phi`` must be a predicate, a literal, or
    a negation of one. Anything else raises :class:`NotReachAvoidError`.
    """
    kind: str | None = None
    phi: Spec | None = None
    if isinstance(spec, Eventually):
        kind, phi = "eventually", spec.arg
    elif isinstance(spec, Until) and isinstance(spec.left, TrueF):
        kind, phi = "eventually", spec.right
    elif isinstance(spec, Always):
        kind, phi = "always", spec.arg
    elif isinstance(spec, Not):
        inner = spec.arg
        if isinstance(inner, Eventually) and isinstance(inner.arg, Not):
            kind, phi = "always", inner.arg.arg
        elif isinstance(inner, Until) and isinstance(inner.left, TrueF) and isinstance(inner.right, Not):
            kind, phi = "always", inner.right.arg
    if kind is None or phi is None or not _is_state_formula(phi):
        raise NotReachAvoidError(
            f"{format_spec(spec)!r} is not a reach-avoid specification; "
            "expected 'always (pred)' or 'eventually (pred)'"
        )
    return kind, phi


def is_certifiable(spec: Spec) -> bool:
    try:
        reach_avoid_form(spec)
    except NotReachAvoidError:
        return False
    return True


def _state_measure(phi: Spec, states: np.ndarray, nrm: WeightedNorm) -> FloatArray:
    if isinstance(phi, TrueF):
        return np.ones(len(states))
    if isinstance(phi, FalseF):
        return -np.ones(len(states))
    if isinstance(phi, Pred):
        return _signed_distance_batch(phi.pred, states, nrm)
    if isinstance(phi, Not):
        return -_state_measure(phi.arg, states, nrm)
    raise NotReachAvoidError(f"{format_spec(phi)!r} is not a state predicate")


@dataclass(frozen=True)
class RobustnessMeasure:
    """``rho(s) = min_t h(s(t))`` (always) or ``max_t h(s(t))`` (eventually).

    ``h`` is the signed distance of ``state_formula`` in ``norm``, so the
    measure is ``(lipschitz, sup-norm)``-Lipschitz on signals.
    """

    spec: Spec
    state_formula: Spec
    mode: str
    lipschitz: float
    norm: WeightedNorm

    def __post_init__(self) -> None:
        if self.mode not in ("min", "max"):
            raise ValueError(f"mode must be 'min' or 'max', got {self.mode!r}")
        if not self.lipschitz > 0:
            raise ValueError("Lipschitz constant must be positive")

    def h(self, x: ArrayLike) -> float:
        x = np.asarray(x, dtype=np.float64)
        return float(_state_measure(self.state_formula, x[None, :], self.norm)[0])

    def h_along(self, s: Trajectory) -> FloatArray:
        if s.dim != self.norm.dim:
            raise ValueError(f"trajectory dimension {s.dim} does not match measure dimension {self.norm.dim}")
        return _state_measure(self.state_formula, s.states, self.norm)


def build_measure(spec: Spec, nrm: WeightedNorm) -> RobustnessMeasure:
    kind, phi = reach_avoid_form(spec)
    # validates dimensions and zero weights up front
    _state_measure(phi, np.zeros((1, nrm.dim)), nrm)
    return RobustnessMeasure(spec, phi, "max" if kind == "eventually" else "min", 1.0, nrm)


def robustness(m: RobustnessMeasure, s: Trajectory) -> float:
    values = m.h_along(s)
    return float(values.min() if m.mode == "min" else values.max())


def predicate_coordinates(spec: Spec) -> list[int]:
    """Sorted state coordinates referenced by the formula's predicates."""
    found: set[int] = set()

    def walk(node: Spec) -> None:
        if isinstance(node, Pred):
            p = node.pred
            if isinstance(p, Interval):
                found.add(p.index)
            else:
                found.update(i for i, c in enumerate(p.coeffs) if c != 0.0)
        for child in ("arg", "left", "right"):
            if hasattr(node, child):
                walk(getattr(node, child))

    walk(spec)
    return sorted(found)


# --------------------------------------------------------------------------- boolean monitor


def _sat_trace(spec: Spec, states: np.ndarray) -> list[bool]:
    n = len(states)
    if isinstance(spec, TrueF):
        return [True] * n
    if isinstance(spec, FalseF):
        return [False] * n
    if isinstance(spec, Pred):
        return [holds(spec.pred, x) for x in states]
    if isinstance(spec, Not):
        return [not v for v in _sat_trace(spec.arg, states)]
    if isinstance(spec, And):
        return [a and b for a, b in zip(_sat_trace(spec.left, states), _sat_trace(spec.right, states))]
    if isinstance(spec, Or):
        return [a or b for a, b in zip(_sat_trace(spec.left, states), _sat_trace(spec.right, states))]
    if isinstance(spec, (Until, Eventually, Always)):
        if isinstance(spec, Until):
            left, right = _sat_trace(spec.left, states), _sat_trace(spec.right, states)
        elif isinstance(spec, Eventually):
            left, right = [True] * n, _sat_trace(spec.arg, states)
        else:
            # always phi == not (true until not phi)
            left, right = [True] * n, [not v for v in _sat_trace(spec.arg, states)]
        out = [False] * n
        nxt = False
        for k in range(n - 1, -1, -1):
            nxt = right[k] or (left[k] and nxt)
            out[k] = nxt
        return [not v for v in out] if isinstance(spec, Always) else out
    raise TypeError(f"not a formula: {spec!r}")


def satisfies(spec: Spec, s: Trajectory) -> bool:
    """Boolean satisfaction of ``spec`` by the sampled signal, evaluated at t = 0."""
    return _sat_trace(spec, s.states)[0]
