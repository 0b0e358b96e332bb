"""Inequality-constraint language over loading matrices.

Grammar::

    model      := statement ((";" | newline)+ statement)*
    statement  := expr cmp expr
    cmp        := "<" | ">"
    expr       := ["-"] primary
    primary    := cell | "abs(" ["-"] cell ")" | number
    cell       := "L[" int "," int "]"

``#`` starts a line comment. A model file holds several named models, each
introduced by a ``[model NAME]`` header line.

Statements are expanded into atoms ``sum(c_jk * L[j,k]) + c0 > 0``. An absolute
value is only admissible on the smaller side of a comparison, where it splits
into two atoms (``a > |b|`` gives ``a - b > 0`` and ``a + b > 0``); on the larger
side it would describe a non-convex region and is rejected.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .types import UcfmSpec


class DslError(ValueError):
    """Lexical, syntactic or semantic error with a 1-based source position."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {message}")
        self.message = message
        self.line = line
        self.col = col


# -- AST --------------------------------------------------------------------

@dataclass(frozen=True)
class CellRef:
    j: int  # 1-based
    k: int


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class Abs:
    operand: Union[CellRef, Neg]


Expr = Union[CellRef, Num, Neg, Abs]


@dataclass(frozen=True)
class Statement:
    lhs: Expr
    op: str
    rhs: Expr


@dataclass(frozen=True)
class ConstraintAst:
    statements: tuple[Statement, ...]

    def cells(self) -> set[tuple[int, int]]:
        return {c for s in self.statements for c in _cells(s.lhs) | _cells(s.rhs)}


def _cells(e: Expr) -> set[tuple[int, int]]:
    if isinstance(e, CellRef):
        return {(e.j, e.k)}
    if isinstance(e, (Neg, Abs)):
        return _cells(e.operand)
    return set()


# -- lexer ------------------------------------------------------------------

@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(
    r"""
    (?P<NUMBER>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ABS>abs\()
  | (?P<L>L\[)
  | (?P<RBRACK>\])
  | (?P<COMMA>,)
  | (?P<RPAREN>\))
  | (?P<MINUS>-)
  | (?P<LT><)
  | (?P<GT>>)
  | (?P<EQ>=)
  | (?P<SEMI>;)
""",
    re.VERBOSE,
)

_DESCRIBE = {
    "NUMBER": "number", "ABS": "'abs('", "L": "'L['", "RBRACK": "']'", "COMMA": "','",
    "RPAREN": "')'", "MINUS": "'-'", "LT": "'<'", "GT": "'>'", "EQ": "'='", "SEMI": "';'",
    "NEWLINE": "end of line", "EOF": "end of input",
}


def tokenize(text: str, first_line: int = 1) -> list[Token]:
    out = []
    for ln, raw in enumerate(text.split("\n"), start=first_line):
        line = raw.split("#", 1)[0]
        pos = 0
        while pos < len(line):
            ch = line[pos]
            if ch in " \t\r":
                pos += 1
                continue
            mo = _TOKEN_RE.match(line, pos)
            if mo is None:
                raise DslError(f"unexpected character {ch!r}", ln, pos + 1)
            out.append(Token(mo.lastgroup, mo.group(), ln, pos + 1))
            pos = mo.end()
        out.append(Token("NEWLINE", "", ln, len(line) + 1))
    last = out[-1] if out else Token("NEWLINE", "", first_line, 1)
    out.append(Token("EOF", "", last.line, last.col))
    return out


# -- parser -----------------------------------------------------------------

class _Parser:
    def __init__(self, text: str, first_line: int = 1):
        self.toks = tokenize(text, first_line)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def _expect(self, kind: str, what: str | None = None) -> Token:
        t = self.tok
        if t.kind != kind:
            found = _DESCRIBE[t.kind] if t.kind in ("NEWLINE", "EOF") else repr(t.text)
            raise DslError(f"expected {what or _DESCRIBE[kind]}, found {found}", t.line, t.col)
        self.i += 1
        return t

    def _skip_separators(self) -> None:
        while self.tok.kind in ("SEMI", "NEWLINE"):
            self.i += 1

    def model(self) -> ConstraintAst:
        stmts = []
        self._skip_separators()
        while self.tok.kind != "EOF":
            stmts.append(self.statement())
            if self.tok.kind not in ("SEMI", "NEWLINE", "EOF"):
                t = self.tok
                raise DslError(f"expected ';' or end of line, found {t.text!r}", t.line, t.col)
            self._skip_separators()
        return ConstraintAst(tuple(stmts))

    def statement(self) -> Statement:
        start = self.tok
        lhs = self.expr()
        t = self.tok
        if t.kind not in ("LT", "GT"):
            found = _DESCRIBE[t.kind] if t.kind in ("NEWLINE", "EOF") else repr(t.text)
            raise DslError(f"expected '<' or '>', found {found}", t.line, t.col)
        self.i += 1
        rhs = self.expr()
        st = Statement(lhs, "<" if t.kind == "LT" else ">", rhs)
        if not (_cells(lhs) | _cells(rhs)):
            raise DslError("statement must reference at least one loading cell", start.line, start.col)
        return st

    def expr(self) -> Expr:
        if self.tok.kind == "MINUS":
            self.i += 1
            return Neg(self.primary())
        return self.primary()

    def primary(self) -> Expr:
        t = self.tok
        if t.kind == "NUMBER":
            self.i += 1
            return Num(float(t.text))
        if t.kind == "L":
            return self.cell()
        if t.kind == "ABS":
            self.i += 1
            if self.tok.kind == "MINUS":
                self.i += 1
                inner = Neg(self.cell())
            else:
                inner = self.cell()
            self._expect("RPAREN")
            return Abs(inner)
        found = _DESCRIBE[t.kind] if t.kind in ("NEWLINE", "EOF") else repr(t.text)
        raise DslError(f"expected loading cell, 'abs(' or number, found {found}", t.line, t.col)

    def cell(self) -> CellRef:
        self._expect("L", "loading cell 'L[j,k]'")
        j = self._index()
        self._expect("COMMA")
        k = self._index()
        self._expect("RBRACK")
        return CellRef(j, k)

    def _index(self) -> int:
        t = self._expect("NUMBER", "integer index")
        if not t.text.isdigit() or int(t.text) < 1:
            raise DslError(f"cell index must be a positive integer, found {t.text!r}", t.line, t.col)
        return int(t.text)

    def restriction(self) -> tuple[CellRef, str]:
        """``L[j,k] = 0`` or ``L[j,k] > 0`` (identification restrictions only)."""
        cell = self.cell()
        t = self.tok
        if t.kind not in ("EQ", "GT"):
            raise DslError("expected '=' or '>'", t.line, t.col)
        self.i += 1
        num = self._expect("NUMBER", "0")
        if float(num.text) != 0:
            raise DslError("restriction constant must be 0", num.line, num.col)
        if self.tok.kind not in ("SEMI", "NEWLINE", "EOF"):
            raise DslError("expected end of restriction", self.tok.line, self.tok.col)
        return cell, "=" if t.kind == "EQ" else ">"


def parse(text: str, p: int | None = None, m: int | None = None) -> ConstraintAst:
    """Parse one constraint model; ``p``/``m`` enable cell range checks."""
    ast = _Parser(text).model()
    if p is not None or m is not None:
        check_range(ast, p, m)
    return ast


def check_range(ast: ConstraintAst, p: int | None, m: int | None) -> None:
    for s_no, s in enumerate(ast.statements, start=1):
        for j, k in sorted(_cells(s.lhs) | _cells(s.rhs)):
            if (p is not None and j > p) or (m is not None and k > m):
                raise DslError(f"cell L[{j},{k}] out of range for a {p}x{m} loading matrix", s_no, 1)


_HEADER_RE = re.compile(r"^\s*\[model\s+([^\]\s][^\]]*?)\s*\]\s*$")


def parse_models(text: str, p: int | None = None, m: int | None = None) -> dict[str, ConstraintAst]:
    """Parse a file of ``[model NAME]`` sections into an ordered name -> AST mapping."""
    models: dict[str, ConstraintAst] = {}
    name, start, body = None, 0, []
    lines = text.split("\n")

    def flush():
        if name is None:
            if any(ln.split("#", 1)[0].strip() for ln in body):
                raise DslError("statement before the first '[model NAME]' header", start + 1, 1)
            return
        ast = _Parser("\n".join(body), first_line=start + 2).model()
        if p is not None or m is not None:
            check_range(ast, p, m)
        models[name] = ast

    for ln_no, line in enumerate(lines):
        stripped = line.split("#", 1)[0].strip()
        if stripped.startswith("["):
            mo = _HEADER_RE.match(line.split("#", 1)[0])
            if mo is None:
                raise DslError("malformed section header, expected '[model NAME]'", ln_no + 1, 1)
            flush()
            name, start, body = mo.group(1), ln_no, []
            if name in models:
                raise DslError(f"duplicate model name {name!r}", ln_no + 1, 1)
        else:
            body.append(line)
    flush()
    if not models:
        raise DslError("no '[model NAME]' section found", 1, 1)
    return models


# -- rendering --------------------------------------------------------------

def _fmt_num(v: float) -> str:
    s = repr(float(v))
    return s[:-2] if s.endswith(".0") else s


def render_expr(e: Expr) -> str:
    if isinstance(e, CellRef):
        return f"L[{e.j},{e.k}]"
    if isinstance(e, Num):
        return _fmt_num(e.value)
    if isinstance(e, Neg):
        return "-" + render_expr(e.operand)
    return f"abs({render_expr(e.operand)})"


def render(ast: ConstraintAst) -> str:
    """Canonical one-statement-per-line text."""
    return "\n".join(f"{render_expr(s.lhs)} {s.op} {render_expr(s.rhs)}" for s in ast.statements)


def render_models(models: dict[str, ConstraintAst]) -> str:
    return "\n\n".join(f"[model {name}]\n{render(ast)}" for name, ast in models.items()) + "\n"


# -- direct evaluation -------------------------------------------------------

def _value(e: Expr, lam: np.ndarray) -> np.ndarray:
    if isinstance(e, CellRef):
        return lam[..., e.j - 1, e.k - 1]
    if isinstance(e, Num):
        return np.float64(e.value)
    if isinstance(e, Neg):
        return -_value(e.operand, lam)
    return np.abs(_value(e.operand, lam))


def evaluate(ast: ConstraintAst, Lambda: np.ndarray):
    """Truth of every statement, evaluating absolute values directly."""
    lam = np.asarray(Lambda, dtype=float)
    ok = np.ones(lam.shape[:-2], dtype=bool)
    for s in ast.statements:
        a, b = _value(s.lhs, lam), _value(s.rhs, lam)
        ok &= (a > b) if s.op == ">" else (a < b)
    return ok if ok.ndim else bool(ok)


# -- expansion --------------------------------------------------------------

@dataclass(frozen=True)
class Atom:
    """Linear atom ``sum(coef[cell] * L[cell]) + const > 0`` (cells 0-based)."""

    coef: tuple[tuple[tuple[int, int], float], ...]
    const: float

    def cells(self) -> set[tuple[int, int]]:
        return {c for c, v in self.coef if v != 0}

    def render(self) -> str:
        parts = []
        for (j, k), v in self.coef:
            if v == 0:
                continue
            sign = "-" if v < 0 else "+"
            mag = "" if abs(v) == 1 else _fmt_num(abs(v)) + "*"
            parts.append(f"{sign} {mag}L[{j + 1},{k + 1}]")
        if self.const:
            parts.append(("- " if self.const < 0 else "+ ") + _fmt_num(abs(self.const)))
        text = " ".join(parts) or "0"
        return (text[2:] if text.startswith("+ ") else "-" + text[2:]) + " > 0"


@dataclass(frozen=True)
class ConstraintSet:
    source_text: str
    atoms: tuple[Atom, ...]
    p: int
    m: int

    def matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """``A`` of shape (atoms, p*m) acting on row-major flattened Lambda, and offsets ``b``."""
        A = np.zeros((len(self.atoms), self.p * self.m))
        b = np.zeros(len(self.atoms))
        for i, atom in enumerate(self.atoms):
            for (j, k), v in atom.coef:
                A[i, j * self.m + k] += v
            b[i] = atom.const
        return A, b

    def __len__(self) -> int:
        return len(self.atoms)

    def union(self, other: "ConstraintSet") -> "ConstraintSet":
        return ConstraintSet(self.source_text + "\n" + other.source_text, self.atoms + other.atoms, self.p, self.m)


def _terms(e: Expr, sign: float):
    """Yield (sign, kind, payload) with kind in {'cell', 'abs', 'num'}."""
    if isinstance(e, CellRef):
        yield sign, "cell", (e.j - 1, e.k - 1)
    elif isinstance(e, Num):
        yield sign, "num", e.value
    elif isinstance(e, Neg):
        yield from _terms(e.operand, -sign)
    else:
        inner = e.operand
        cell = inner.operand if isinstance(inner, Neg) else inner
        yield sign, "abs", (cell.j - 1, cell.k - 1)


def expand(ast: ConstraintAst, spec: UcfmSpec, p: int) -> ConstraintSet:
    """Expand statements into atoms, validating cells against the base model."""
    m = spec.m
    atoms: list[Atom] = []
    for s_no, s in enumerate(ast.statements, start=1):
        big, small = (s.lhs, s.rhs) if s.op == ">" else (s.rhs, s.lhs)
        terms = list(_terms(big, 1.0)) + list(_terms(small, -1.0))
        for sign, kind, payload in terms:
            if kind == "num":
                continue
            j, k = payload
            if not (0 <= j < p and 0 <= k < m):
                raise DslError(f"cell L[{j + 1},{k + 1}] out of range for a {p}x{m} loading matrix", s_no, 1)
            if payload in spec.zero_cells:
                raise DslError(f"cell L[{j + 1},{k + 1}] is fixed at zero in the base model", s_no, 1)
            if kind == "abs" and sign > 0:
                raise DslError(
                    f"abs(L[{j + 1},{k + 1}]) on the larger side of '{s.op}' is not a conjunction of "
                    "linear inequalities", s_no, 1)
        linear: dict[tuple[int, int], float] = {}
        const = 0.0
        abs_cells = []
        for sign, kind, payload in terms:
            if kind == "num":
                const += sign * payload
            elif kind == "cell":
                linear[payload] = linear.get(payload, 0.0) + sign
            else:
                abs_cells.append(payload)
        # -|x| > r  <=>  -x > r and x > r
        for flips in itertools.product((-1.0, 1.0), repeat=len(abs_cells)):
            coef = dict(linear)
            for f, cell in zip(flips, abs_cells):
                coef[cell] = coef.get(cell, 0.0) + f
            atoms.append(Atom(tuple(sorted(coef.items())), const))
    return ConstraintSet(render(ast), tuple(atoms), p, m)


def satisfies(Lambda: np.ndarray, cs: ConstraintSet):
    """True iff every atom is strictly positive; vectorized over leading draw axes."""
    lam = np.asarray(Lambda, dtype=float)
    if lam.shape[-2:] != (cs.p, cs.m):
        raise ValueError(f"Lambda shape {lam.shape[-2:]} does not match constraint set {(cs.p, cs.m)}")
    if not cs.atoms:
        out = np.ones(lam.shape[:-2], dtype=bool)
        return out if out.ndim else True
    A, b = cs.matrix()
    flat = lam.reshape(lam.shape[:-2] + (cs.p * cs.m,))
    out = np.all(flat @ A.T + b > 0, axis=-1)
    return out if out.ndim else bool(out)
