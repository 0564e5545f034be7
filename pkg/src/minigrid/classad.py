"""Attribute advertisements and matchmaking.

Jobs and machine slots describe themselves as attribute sets ("ads").
A small expression language (comparisons, ``&&``/``||``/``!``, parentheses,
``MY.<attr>``/``TARGET.<attr>`` references) lets each side state requirements
about the other; matchmaking succeeds only when both sides agree.

Evaluation is total: an unknown attribute or an ill-typed comparison yields
the distinguished value UNDEFINED instead of raising.  UNDEFINED follows
three-valued logic (absorbed by OR-with-true and AND-with-false, propagated
otherwise) and counts as a non-match at the matchmaking boundary.

Attribute names are case-insensitive.  String comparisons are also
case-insensitive, matching the observable behaviour of the batch systems
this models.  A bare (unscoped) attribute reference resolves in MY scope.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Union

from .errors import MiniGridError

__all__ = [
    "UNDEFINED",
    "Undefined",
    "AttrValue",
    "ClassAd",
    "Expr",
    "ExprSyntaxError",
    "parse_expr",
    "eval_expr",
    "matches",
    "matchmake",
]

_MAX_DEREF_DEPTH = 32


class Undefined:
    """Singleton result of evaluating anything unknown or ill-typed."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNDEFINED"

    def __bool__(self):
        # Falsy at boolean boundaries (e.g. a match test).
        return False


UNDEFINED = Undefined()


class ExprSyntaxError(MiniGridError):
    code = "BadExpression"


# ------------------------------------------------------------------ AST

@dataclass(frozen=True)
class Lit:
    value: Union[int, float, bool, str]


@dataclass(frozen=True)
class Ref:
    scope: str | None  # "my", "target", or None (bare: MY scope)
    name: str


@dataclass(frozen=True)
class Cmp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class And:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Or:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Not:
    operand: "Expr"


Expr = Union[Lit, Ref, Cmp, And, Or, Not]
AttrValue = Union[int, float, bool, str, Undefined, Lit, Ref, Cmp, And, Or, Not]


# ------------------------------------------------------------------ lexer

_SYMBOLS = ("||", "&&", "==", "!=", "<=", ">=", "<", ">", "!", "(", ")", ".")


def _tokenize(text: str) -> list[tuple[str, object]]:
    tokens: list[tuple[str, object]] = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c == '"':
            j = text.find('"', i + 1)
            if j < 0:
                raise ExprSyntaxError(f"unterminated string at offset {i}")
            tokens.append(("STR", text[i + 1:j]))
            i = j + 1
            continue
        if c.isdigit() or (c == "-" and i + 1 < n and text[i + 1].isdigit()):
            j = i + 1
            while j < n and text[j].isdigit():
                j += 1
            if j < n and text[j] == "." and j + 1 < n and text[j + 1].isdigit():
                j += 1
                while j < n and text[j].isdigit():
                    j += 1
                tokens.append(("NUM", float(text[i:j])))
            else:
                tokens.append(("NUM", int(text[i:j])))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i + 1
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            low = word.lower()
            if low == "true":
                tokens.append(("BOOL", True))
            elif low == "false":
                tokens.append(("BOOL", False))
            elif low == "undefined":
                tokens.append(("UNDEF", None))
            else:
                tokens.append(("NAME", word))
            i = j
            continue
        for sym in _SYMBOLS:
            if text.startswith(sym, i):
                tokens.append((sym, None))
                i += len(sym)
                break
        else:
            raise ExprSyntaxError(f"unexpected character {c!r} at offset {i}")
    tokens.append(("EOF", None))
    return tokens


class _Parser:
    def __init__(self, tokens: list[tuple[str, object]]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> str:
        return self.tokens[self.pos][0]

    def next(self) -> tuple[str, object]:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str) -> object:
        tok, value = self.next()
        if tok != kind:
            raise ExprSyntaxError(f"expected {kind}, found {tok}")
        return value

    def parse_expr(self) -> Expr:
        node = self.parse_and()
        while self.peek() == "||":
            self.next()
            node = Or(node, self.parse_and())
        return node

    def parse_and(self) -> Expr:
        node = self.parse_not()
        while self.peek() == "&&":
            self.next()
            node = And(node, self.parse_not())
        return node

    def parse_not(self) -> Expr:
        if self.peek() == "!":
            self.next()
            return Not(self.parse_not())
        return self.parse_cmp()

    def parse_cmp(self) -> Expr:
        node = self.parse_term()
        if self.peek() in ("==", "!=", "<", "<=", ">", ">="):
            op, _ = self.next()
            node = Cmp(op, node, self.parse_term())
        return node

    def parse_term(self) -> Expr:
        kind = self.peek()
        if kind == "(":
            self.next()
            node = self.parse_expr()
            self.expect(")")
            return node
        if kind in ("NUM", "STR", "BOOL"):
            _, value = self.next()
            return Lit(value)
        if kind == "UNDEF":
            self.next()
            return Ref(None, "__undefined__")
        if kind == "NAME":
            _, name = self.next()
            if self.peek() == ".":
                scope = str(name).lower()
                if scope not in ("my", "target"):
                    raise ExprSyntaxError(f"unknown scope {name!r}")
                self.next()
                attr = self.expect("NAME")
                return Ref(scope, str(attr))
            return Ref(None, str(name))
        raise ExprSyntaxError(f"unexpected token {kind}")


def parse_expr(text: str) -> Expr:
    """Parse an expression; raises ExprSyntaxError on malformed input."""
    parser = _Parser(_tokenize(text))
    node = parser.parse_expr()
    parser.expect("EOF")
    return node


def _is_expr(value: object) -> bool:
    return isinstance(value, (Lit, Ref, Cmp, And, Or, Not))


# ------------------------------------------------------------------ ads

_MACHINE_REQUIRED = ("Name", "State", "Activity", "LoadAvg", "Memory")
_JOB_REQUIRED = ("Owner", "Cmd", "Requirements")


class ClassAd:
    """Ordered, case-insensitively keyed attribute map describing a job or
    a machine slot.

    Values may be plain data (int, float, bool, str) or parsed expressions;
    strings passed to ``expr_keys`` (or already-parsed Expr objects) are
    treated as expressions.
    """

    def __init__(self, kind: str, attrs: Mapping[str, AttrValue],
                 expr_keys: Iterable[str] = ("requirements", "rank")):
        if kind not in ("job", "machine"):
            raise ValueError(f"kind must be job or machine, not {kind!r}")
        self.kind = kind
        expr_folded = {k.lower() for k in expr_keys}
        self._attrs: dict[str, AttrValue] = {}
        self._display: dict[str, str] = {}
        for name, value in attrs.items():
            folded = name.lower()
            if folded in self._attrs:
                raise ValueError(f"duplicate attribute {name!r} after case folding")
            if isinstance(value, str) and folded in expr_folded:
                value = parse_expr(value)
            self._attrs[folded] = value
            self._display[folded] = name
        required = _MACHINE_REQUIRED if kind == "machine" else _JOB_REQUIRED
        missing = [a for a in required if a.lower() not in self._attrs]
        if missing:
            raise ValueError(f"{kind} ad missing required attributes: {missing}")

    def get(self, name: str) -> AttrValue:
        return self._attrs.get(name.lower(), UNDEFINED)

    def __contains__(self, name: str) -> bool:
        return name.lower() in self._attrs

    def items(self):
        return ((self._display[k], v) for k, v in self._attrs.items())

    def __repr__(self):
        inner = ", ".join(f"{k}={v!r}" for k, v in self.items())
        return f"ClassAd({self.kind}: {inner})"


def job_ad(owner: str = "nobody", cmd: str = "/bin/true",
           requirements: str | Expr | bool = True, **extra) -> ClassAd:
    return ClassAd("job", {"Owner": owner, "Cmd": cmd,
                           "Requirements": requirements, **extra})


def machine_ad(name: str, state: str = "Unclaimed", activity: str = "Idle",
               load_avg: float = 0.0, memory: int = 1001, **extra) -> ClassAd:
    return ClassAd("machine", {"Name": name, "State": state, "Activity": activity,
                               "LoadAvg": load_avg, "Memory": memory, **extra})


# ------------------------------------------------------------- evaluation

def _lookup(ad: ClassAd | None, name: str, my: ClassAd | None,
            target: ClassAd | None, depth: int) -> AttrValue:
    if ad is None:
        return UNDEFINED
    value = ad.get(name)
    if _is_expr(value):
        if depth >= _MAX_DEREF_DEPTH:
            return UNDEFINED
        # An expression-valued attribute evaluates from its owner's viewpoint.
        flipped_target = target if ad is my else my
        return _eval(value, ad, flipped_target, depth + 1)
    return value


def _compare(op: str, lhs: AttrValue, rhs: AttrValue) -> AttrValue:
    if lhs is UNDEFINED or rhs is UNDEFINED:
        return UNDEFINED
    num = (int, float)
    if isinstance(lhs, bool) or isinstance(rhs, bool):
        if isinstance(lhs, bool) and isinstance(rhs, bool) and op in ("==", "!="):
            return (lhs == rhs) if op == "==" else (lhs != rhs)
        return UNDEFINED
    if isinstance(lhs, num) and isinstance(rhs, num):
        a, b = lhs, rhs
    elif isinstance(lhs, str) and isinstance(rhs, str):
        a, b = lhs.lower(), rhs.lower()
    else:
        return UNDEFINED  # type mismatch never aborts
    return {
        "==": a == b, "!=": a != b,
        "<": a < b, "<=": a <= b,
        ">": a > b, ">=": a >= b,
    }[op]


def _eval(node: Expr, my: ClassAd | None, target: ClassAd | None,
          depth: int = 0) -> AttrValue:
    if isinstance(node, Lit):
        return node.value
    if isinstance(node, Ref):
        if node.name == "__undefined__":
            return UNDEFINED
        if node.scope == "target":
            return _lookup(target, node.name, my, target, depth)
        return _lookup(my, node.name, my, target, depth)
    if isinstance(node, Cmp):
        return _compare(node.op,
                        _eval(node.left, my, target, depth),
                        _eval(node.right, my, target, depth))
    if isinstance(node, And):
        lhs = _as_bool3(_eval(node.left, my, target, depth))
        if lhs is False:
            return False
        rhs = _as_bool3(_eval(node.right, my, target, depth))
        if rhs is False:
            return False
        if lhs is True and rhs is True:
            return True
        return UNDEFINED
    if isinstance(node, Or):
        lhs = _as_bool3(_eval(node.left, my, target, depth))
        if lhs is True:
            return True
        rhs = _as_bool3(_eval(node.right, my, target, depth))
        if rhs is True:
            return True
        if lhs is False and rhs is False:
            return False
        return UNDEFINED
    if isinstance(node, Not):
        value = _as_bool3(_eval(node.operand, my, target, depth))
        if value is UNDEFINED:
            return UNDEFINED
        return not value
    raise TypeError(f"not an expression node: {node!r}")


def _as_bool3(value: AttrValue):
    """Three-valued boolean coercion; non-booleans become UNDEFINED."""
    if value is True or value is False:
        return value
    return UNDEFINED


def eval_expr(expr: Expr | str, my: ClassAd | None = None,
              target: ClassAd | None = None) -> AttrValue:
    """Evaluate ``expr`` with MY/TARGET bound to the given ads.

    Deterministic and total: well-formed expressions never raise; anything
    unresolvable evaluates to UNDEFINED.
    """
    if isinstance(expr, str):
        expr = parse_expr(expr)
    return _eval(expr, my, target)


# ------------------------------------------------------------ matchmaking

def _requirement_holds(owner: ClassAd, other: ClassAd, *, default: bool) -> bool:
    req = owner.get("requirements")
    if req is UNDEFINED:
        return default
    if _is_expr(req):
        return _eval(req, owner, other) is True
    return req is True


def matches(job: ClassAd, machine: ClassAd) -> bool:
    """Symmetric match: the job's Requirements must hold against the machine
    and the machine's Requirements (default TRUE) must hold against the job.
    UNDEFINED on either side is a non-match.
    """
    if job.kind != "job" or machine.kind != "machine":
        raise ValueError("matches() wants a job ad and a machine ad")
    return (_requirement_holds(job, machine, default=False)
            and _requirement_holds(machine, job, default=True))


def _rank_value(job: ClassAd, machine: ClassAd) -> float:
    rank = job.get("rank")
    if _is_expr(rank):
        rank = _eval(rank, job, machine)
    if isinstance(rank, bool):
        return 1.0 if rank else 0.0
    if isinstance(rank, (int, float)):
        return float(rank)
    return 0.0


def matchmake(job: ClassAd, machines: list[ClassAd]) -> list[str]:
    """Names of Unclaimed machines matching ``job``, best first.

    Order: job Rank value descending, then machine Name ascending; the
    result is duplicate-free and independent of input permutation.
    """
    ranked: dict[str, float] = {}
    for machine in machines:
        if machine.kind != "machine":
            raise ValueError("matchmake() machines must be machine ads")
        state = machine.get("state")
        if not (isinstance(state, str) and state.lower() == "unclaimed"):
            continue
        if not matches(job, machine):
            continue
        name = machine.get("name")
        if not isinstance(name, str) or name in ranked:
            continue
        ranked[name] = _rank_value(job, machine)
    return sorted(ranked, key=lambda n: (-ranked[n], n))
