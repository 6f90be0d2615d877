"""Source language: expressions, statements, programs and their parser.

Programs are lists of single-parameter procedure declarations followed by
a ``main { decls; body }`` block.  Procedure bodies are scopes ending in
exactly one tail-position ``return``.  Values are unbounded integers;
booleans exist only at condition positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Union


class ParseError(Exception):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {msg}")
        self.msg = msg
        self.line = line
        self.col = col


# ---------------------------------------------------------------------------
# Expressions (shared by programs, predicates and update right-hand sides)
# ---------------------------------------------------------------------------

ARITH_OPS = ("+", "-", "*")
CMP_OPS = ("==", "!=", "<", "<=", ">", ">=")
BOOL_OPS = ("&&", "||")


@dataclass(frozen=True)
class IntLit:
    value: int

    def __str__(self):
        return str(self.value)


@dataclass(frozen=True)
class BoolLit:
    value: bool

    def __str__(self):
        return "true" if self.value else "false"


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class ResVar:
    """Result variable res(i); written only by the semantics itself."""

    index: "Expr"

    def __str__(self):
        return f"res({self.index})"


@dataclass(frozen=True)
class Unary:
    op: str  # '-' or '!'
    operand: "Expr"

    def __str__(self):
        return pretty_expr(self)


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"

    def __str__(self):
        return pretty_expr(self)


Expr = Union[IntLit, BoolLit, Var, ResVar, Unary, Binary]

_PREC = {"||": 1, "&&": 2, "==": 3, "!=": 3, "<": 3, "<=": 3, ">": 3, ">=": 3,
         "+": 4, "-": 4, "*": 5}


def pretty_expr(e: Expr, min_prec: int = 0) -> str:
    """Minimal-parentheses rendering; reparses to the same tree."""
    if isinstance(e, (IntLit, BoolLit, Var)):
        return str(e)
    if isinstance(e, ResVar):
        return f"res({pretty_expr(e.index)})"
    if isinstance(e, Unary):
        text = f"{e.op}{pretty_expr(e.operand, 6)}"
        return f"({text})" if min_prec > 6 else text
    prec = _PREC[e.op]
    text = f"{pretty_expr(e.left, prec)} {e.op} {pretty_expr(e.right, prec + 1)}"
    return f"({text})" if min_prec > prec else text


def expr_vars(e: Expr) -> set:
    """All variable names read by e (res-variables excluded)."""
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Unary):
        return expr_vars(e.operand)
    if isinstance(e, Binary):
        return expr_vars(e.left) | expr_vars(e.right)
    if isinstance(e, ResVar):
        return expr_vars(e.index)
    return set()


def expr_res_vars(e: Expr) -> set:
    """All ResVar nodes occurring in e."""
    if isinstance(e, ResVar):
        return {e} | expr_res_vars(e.index)
    if isinstance(e, Unary):
        return expr_res_vars(e.operand)
    if isinstance(e, Binary):
        return expr_res_vars(e.left) | expr_res_vars(e.right)
    return set()


def subst_expr(e: Expr, name: str, replacement: Expr) -> Expr:
    """Substitute replacement for every free occurrence of Var(name)."""
    if isinstance(e, Var):
        return replacement if e.name == name else e
    if isinstance(e, ResVar):
        return ResVar(subst_expr(e.index, name, replacement))
    if isinstance(e, Unary):
        return Unary(e.op, subst_expr(e.operand, name, replacement))
    if isinstance(e, Binary):
        return Binary(e.op, subst_expr(e.left, name, replacement),
                      subst_expr(e.right, name, replacement))
    return e


def subst_res_expr(e: Expr, index: Expr, replacement: Expr) -> Expr:
    """Substitute replacement for res(index); indices compared structurally."""
    if isinstance(e, ResVar):
        if e.index == index:
            return replacement
        return ResVar(subst_res_expr(e.index, index, replacement))
    if isinstance(e, Unary):
        return Unary(e.op, subst_res_expr(e.operand, index, replacement))
    if isinstance(e, Binary):
        return Binary(e.op, subst_res_expr(e.left, index, replacement),
                      subst_res_expr(e.right, index, replacement))
    return e


def fold_expr(e: Expr) -> Expr:
    """Constant-fold arithmetic; keeps everything else untouched."""
    if isinstance(e, Unary):
        inner = fold_expr(e.operand)
        if e.op == "-" and isinstance(inner, IntLit):
            return IntLit(-inner.value)
        return Unary(e.op, inner)
    if isinstance(e, Binary):
        l, r = fold_expr(e.left), fold_expr(e.right)
        if e.op in ARITH_OPS and isinstance(l, IntLit) and isinstance(r, IntLit):
            if e.op == "+":
                return IntLit(l.value + r.value)
            if e.op == "-":
                return IntLit(l.value - r.value)
            return IntLit(l.value * r.value)
        # x + 0, 0 + x, x - 0, x * 1, 1 * x
        if e.op == "+" and isinstance(r, IntLit) and r.value == 0:
            return l
        if e.op == "+" and isinstance(l, IntLit) and l.value == 0:
            return r
        if e.op == "-" and isinstance(r, IntLit) and r.value == 0:
            return l
        if e.op == "*" and isinstance(r, IntLit) and r.value == 1:
            return l
        if e.op == "*" and isinstance(l, IntLit) and l.value == 1:
            return r
        return Binary(e.op, l, r)
    return e


# ---------------------------------------------------------------------------
# Statements and programs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Skip:
    def __str__(self):
        return "skip"


@dataclass(frozen=True)
class Assign:
    target: Union[Var, ResVar]
    expr: Expr

    def __str__(self):
        return f"{self.target} = {self.expr}"


@dataclass(frozen=True)
class CallAssign:
    target: Var
    proc: str
    arg: Expr

    def __str__(self):
        return f"{self.target} = {self.proc}({self.arg})"


@dataclass(frozen=True)
class Call:
    """Bare procedure call; internal form used by contract judgments."""

    proc: str
    arg: Expr

    def __str__(self):
        return f"{self.proc}({self.arg})"


@dataclass(frozen=True)
class If:
    cond: Expr
    body: "Stmt"

    def __str__(self):
        return f"if ({self.cond}) {{ {self.body} }}"


@dataclass(frozen=True)
class While:
    cond: Expr
    body: "Stmt"

    def __str__(self):
        return f"while ({self.cond}) {{ {self.body} }}"


@dataclass(frozen=True)
class Seq:
    first: "Stmt"
    second: "Stmt"

    def __str__(self):
        return f"{self.first}; {self.second}"


@dataclass(frozen=True)
class Scope:
    decls: tuple
    body: "Stmt"

    def __str__(self):
        ds = "".join(f"{d}; " for d in self.decls)
        return f"{{ {ds}{self.body} }}"


@dataclass(frozen=True)
class Return:
    expr: Expr

    def __str__(self):
        return f"return {self.expr}"


Stmt = Union[Skip, Assign, CallAssign, Call, If, While, Seq, Scope, Return]


def seq(parts) -> Stmt:
    """Right-associated sequence of statements."""
    parts = list(parts)
    if not parts:
        return Skip()
    out = parts[-1]
    for p in reversed(parts[:-1]):
        out = Seq(p, out)
    return out


def subst_stmt(s: Stmt, name: str, replacement: Expr) -> Stmt:
    """Substitute into a statement, respecting scope shadowing."""
    if isinstance(s, Skip):
        return s
    if isinstance(s, Assign):
        tgt = s.target
        if isinstance(tgt, Var) and tgt.name == name and isinstance(replacement, Var):
            tgt = replacement
        return Assign(tgt, subst_expr(s.expr, name, replacement))
    if isinstance(s, CallAssign):
        tgt = s.target
        if tgt.name == name and isinstance(replacement, Var):
            tgt = replacement
        return CallAssign(tgt, s.proc, subst_expr(s.arg, name, replacement))
    if isinstance(s, Call):
        return Call(s.proc, subst_expr(s.arg, name, replacement))
    if isinstance(s, If):
        return If(subst_expr(s.cond, name, replacement), subst_stmt(s.body, name, replacement))
    if isinstance(s, While):
        return While(subst_expr(s.cond, name, replacement), subst_stmt(s.body, name, replacement))
    if isinstance(s, Seq):
        return Seq(subst_stmt(s.first, name, replacement), subst_stmt(s.second, name, replacement))
    if isinstance(s, Scope):
        if name in s.decls:
            return s
        return Scope(s.decls, subst_stmt(s.body, name, replacement))
    if isinstance(s, Return):
        return Return(subst_expr(s.expr, name, replacement))
    raise TypeError(f"not a statement: {s!r}")


@dataclass(frozen=True)
class ProcDecl:
    name: str
    param: str
    body: Scope  # ends in a tail-position Return

    def __str__(self):
        return f"{self.name}({self.param}) {self.body}"


@dataclass(frozen=True)
class Program:
    procs: tuple
    main_decls: tuple
    main_body: Stmt

    def __str__(self):
        parts = [str(p) for p in self.procs]
        ds = "".join(f"{d}; " for d in self.main_decls)
        parts.append(f"main {{ {ds}{self.main_body} }}")
        return "\n\n".join(parts)


LookupTable = dict


class UnknownProcedure(Exception):
    pass


def build_lookup(program: Program) -> LookupTable:
    return {p.name: p for p in program.procs}


def lookup(name: str, table: LookupTable) -> ProcDecl:
    try:
        return table[name]
    except KeyError:
        raise UnknownProcedure(name) from None


# ---------------------------------------------------------------------------
# Lexer (shared with the formula parser)
# ---------------------------------------------------------------------------

_TWO_CHAR = ("==", "!=", "<=", ">=", "&&", "||", "**", "..", "~~", ":=", "/\\", "\\/")
_ONE_CHAR = "+-*!<>=(){}[],;.~:@"


@dataclass
class Token:
    kind: str  # 'ident' | 'int' | 'sym' | 'eof'
    text: str
    line: int
    col: int


def tokenize(src: str) -> list:
    toks = []
    i, line, col = 0, 1, 1
    n = len(src)
    while i < n:
        c = src[i]
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if src.startswith("//", i):
            while i < n and src[i] != "\n":
                i += 1
            continue
        start_col = col
        if c.isalpha() or c == "_":
            j = i
            while j < n and (src[j].isalnum() or src[j] in "_#"):
                j += 1
            while j < n and src[j] == "'":
                j += 1
            toks.append(Token("ident", src[i:j], line, start_col))
            col += j - i
            i = j
            continue
        if c.isdigit():
            j = i
            while j < n and src[j].isdigit():
                j += 1
            toks.append(Token("int", src[i:j], line, start_col))
            col += j - i
            i = j
            continue
        two = src[i:i + 2]
        if two in _TWO_CHAR:
            toks.append(Token("sym", two, line, start_col))
            i += 2
            col += 2
            continue
        if c in _ONE_CHAR:
            toks.append(Token("sym", c, line, start_col))
            i += 1
            col += 1
            continue
        raise ParseError(f"unexpected character {c!r}", line, col)
    toks.append(Token("eof", "", line, col))
    return toks


class TokenStream:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self, ahead: int = 0) -> Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def next(self) -> Token:
        t = self.tokens[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def at_sym(self, text: str) -> bool:
        t = self.peek()
        return t.kind == "sym" and t.text == text

    def at_ident(self, text: Optional[str] = None) -> bool:
        t = self.peek()
        return t.kind == "ident" and (text is None or t.text == text)

    def expect_sym(self, text: str) -> Token:
        t = self.peek()
        if not self.at_sym(text):
            raise ParseError(f"expected {text!r}, found {t.text!r}", t.line, t.col)
        return self.next()

    def expect_ident(self, text: Optional[str] = None) -> Token:
        t = self.peek()
        if t.kind != "ident" or (text is not None and t.text != text):
            what = text or "identifier"
            raise ParseError(f"expected {what!r}, found {t.text!r}", t.line, t.col)
        return self.next()

    def error(self, msg: str):
        t = self.peek()
        raise ParseError(msg, t.line, t.col)


RESERVED = {"skip", "if", "while", "return", "main", "res", "true", "false",
            "mu", "contract", "spec", "fresh", "psi", "startEv", "finishEv"}


# Expression parsing, shared grammar.  allow_res/allow_bool control which
# leaves are legal: user programs get neither res(i) nor true/false.

def parse_expr(ts: TokenStream, allow_res: bool = False, allow_bool: bool = False) -> Expr:
    return _parse_or(ts, allow_res, allow_bool)


def _parse_or(ts, ar, ab):
    e = _parse_and(ts, ar, ab)
    while ts.at_sym("||"):
        ts.next()
        e = Binary("||", e, _parse_and(ts, ar, ab))
    return e


def _parse_and(ts, ar, ab):
    e = _parse_cmp(ts, ar, ab)
    while ts.at_sym("&&"):
        ts.next()
        e = Binary("&&", e, _parse_cmp(ts, ar, ab))
    return e


def _parse_cmp(ts, ar, ab):
    e = _parse_add(ts, ar, ab)
    for op in CMP_OPS:
        if ts.at_sym(op):
            ts.next()
            return Binary(op, e, _parse_add(ts, ar, ab))
    return e


def _parse_add(ts, ar, ab):
    e = _parse_mul(ts, ar, ab)
    while ts.at_sym("+") or ts.at_sym("-"):
        op = ts.next().text
        e = Binary(op, e, _parse_mul(ts, ar, ab))
    return e


def _parse_mul(ts, ar, ab):
    e = _parse_unary(ts, ar, ab)
    while ts.at_sym("*"):
        ts.next()
        e = Binary("*", e, _parse_unary(ts, ar, ab))
    return e


def _parse_unary(ts, ar, ab):
    if ts.at_sym("-"):
        ts.next()
        inner = _parse_unary(ts, ar, ab)
        if isinstance(inner, IntLit):
            return IntLit(-inner.value)
        return Unary("-", inner)
    if ts.at_sym("!"):
        ts.next()
        return Unary("!", _parse_unary(ts, ar, ab))
    return _parse_atom(ts, ar, ab)


def _parse_atom(ts, ar, ab):
    t = ts.peek()
    if t.kind == "int":
        ts.next()
        return IntLit(int(t.text))
    if ts.at_sym("("):
        ts.next()
        e = _parse_or(ts, ar, ab)
        ts.expect_sym(")")
        return e
    if t.kind == "ident":
        if t.text == "res":
            if not ar:
                ts.error("res(...) is reserved for the semantics")
            ts.next()
            ts.expect_sym("(")
            idx = _parse_or(ts, ar, ab)
            ts.expect_sym(")")
            return ResVar(idx)
        if t.text in ("true", "false"):
            if not ab:
                ts.error(f"{t.text!r} not allowed here")
            ts.next()
            return BoolLit(t.text == "true")
        if t.text in RESERVED:
            ts.error(f"reserved word {t.text!r} in expression")
        ts.next()
        return Var(t.text)
    ts.error(f"expected expression, found {t.text!r}")


# ---------------------------------------------------------------------------
# Program parsing
# ---------------------------------------------------------------------------

def _parse_decls(ts: TokenStream) -> list:
    # leading "x;" lines of a block are declarations, as in the listings
    decls = []
    while ts.at_ident() and ts.peek().text not in RESERVED and \
            ts.peek(1).kind == "sym" and ts.peek(1).text == ";":
        decls.append(ts.next().text)
        ts.next()  # ';'
    return decls


def _parse_stmt(ts: TokenStream) -> Stmt:
    t = ts.peek()
    if ts.at_ident("skip"):
        ts.next()
        return Skip()
    if ts.at_ident("if") or ts.at_ident("while"):
        kw = ts.next().text
        ts.expect_sym("(")
        cond = parse_expr(ts)
        ts.expect_sym(")")
        body = _parse_block(ts)
        return If(cond, body) if kw == "if" else While(cond, body)
    if ts.at_sym("{"):
        return _parse_block(ts)
    if ts.at_ident():
        if t.text in RESERVED:
            ts.error(f"unexpected {t.text!r}")
        name = ts.next().text
        ts.expect_sym("=")
        if ts.at_ident() and ts.peek().text not in RESERVED and \
                ts.peek(1).kind == "sym" and ts.peek(1).text == "(":
            proc = ts.next().text
            ts.expect_sym("(")
            arg = parse_expr(ts)
            ts.expect_sym(")")
            return CallAssign(Var(name), proc, arg)
        return Assign(Var(name), parse_expr(ts))
    ts.error(f"expected statement, found {t.text!r}")


def _parse_stmt_list(ts: TokenStream, *, in_proc: bool) -> tuple:
    """Statements separated by ';'.  Returns (stmt_list, return_expr_or_none)."""
    stmts = []
    ret = None
    while not ts.at_sym("}"):
        if ts.at_ident("return"):
            tok = ts.next()
            ret = parse_expr(ts)
            if not in_proc:
                raise ParseError("return outside a procedure body", tok.line, tok.col)
            while ts.at_sym(";"):
                ts.next()
            if not ts.at_sym("}"):
                raise ParseError("return must be the final statement", tok.line, tok.col)
            break
        stmts.append(_parse_stmt(ts))
        if ts.at_sym(";"):
            while ts.at_sym(";"):
                ts.next()
        elif not ts.at_sym("}"):
            ts.error("expected ';' or '}'")
    return stmts, ret


def _parse_block(ts: TokenStream) -> Stmt:
    ts.expect_sym("{")
    decls = _parse_decls(ts)
    stmts, ret = _parse_stmt_list(ts, in_proc=False)
    ts.expect_sym("}")
    body = seq(stmts) if stmts else Skip()
    return Scope(tuple(decls), body) if decls else body


def _parse_proc(ts: TokenStream) -> ProcDecl:
    name_tok = ts.expect_ident()
    name = name_tok.text
    ts.expect_sym("(")
    param = ts.expect_ident().text
    ts.expect_sym(")")
    ts.expect_sym("{")
    decls = _parse_decls(ts)
    stmts, ret = _parse_stmt_list(ts, in_proc=True)
    if ret is None:
        raise ParseError(f"procedure {name!r} must end with return",
                         name_tok.line, name_tok.col)
    ts.expect_sym("}")
    return ProcDecl(name, param, Scope(tuple(decls), seq(stmts + [Return(ret)])))


def parse_program(text: str) -> Program:
    ts = TokenStream(tokenize(text))
    procs = []
    seen = set()
    while ts.at_ident() and not ts.at_ident("main"):
        p = _parse_proc(ts)
        if p.name in seen:
            tok = ts.peek()
            raise ParseError(f"duplicate procedure name {p.name!r}", tok.line, tok.col)
        seen.add(p.name)
        procs.append(p)
    ts.expect_ident("main")
    ts.expect_sym("{")
    decls = _parse_decls(ts)
    stmts, _ = _parse_stmt_list(ts, in_proc=False)
    ts.expect_sym("}")
    if ts.peek().kind != "eof":
        ts.error("trailing input after main block")
    return Program(tuple(procs), tuple(decls), seq(stmts) if stmts else Skip())


# ---------------------------------------------------------------------------
# Pretty printer (parse . pretty . parse is the identity)
# ---------------------------------------------------------------------------

def pretty_stmt(s: Stmt, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(s, Seq):
        return f"{pretty_stmt(s.first, indent)};\n{pretty_stmt(s.second, indent)}"
    if isinstance(s, If):
        return f"{pad}if ({s.cond}) {{\n{pretty_stmt(s.body, indent + 1)}\n{pad}}}"
    if isinstance(s, While):
        return f"{pad}while ({s.cond}) {{\n{pretty_stmt(s.body, indent + 1)}\n{pad}}}"
    if isinstance(s, Scope):
        inner = "".join(f"{'  ' * (indent + 1)}{d};\n" for d in s.decls)
        return f"{pad}{{\n{inner}{pretty_stmt(s.body, indent + 1)}\n{pad}}}"
    if isinstance(s, Return):
        return f"{pad}return {s.expr}"
    return f"{pad}{s}"


def pretty_program(p: Program) -> str:
    chunks = []
    for proc in p.procs:
        decls = "".join(f"  {d};\n" for d in proc.body.decls)
        body = proc.body.body
        chunks.append(f"{proc.name}({proc.param}) {{\n{decls}{pretty_stmt(body, 1)}\n}}")
    decls = "".join(f"  {d};\n" for d in p.main_decls)
    chunks.append(f"main {{\n{decls}{pretty_stmt(p.main_body, 1)}\n}}")
    return "\n\n".join(chunks) + "\n"


# ---------------------------------------------------------------------------
# Well-formedness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    where: str

    def __str__(self):
        return f"[{self.code}] {self.where}: {self.message}"


def _stmt_seq(s: Stmt) -> Iterator[Stmt]:
    if isinstance(s, Seq):
        yield from _stmt_seq(s.first)
        yield from _stmt_seq(s.second)
    else:
        yield s


def _check_expr(e: Expr, scope: set, want: str, diags, where: str):
    # want is 'int' or 'bool'
    if isinstance(e, IntLit):
        if want != "int":
            diags.append(Diagnostic("type", f"integer where condition expected: {e}", where))
    elif isinstance(e, BoolLit):
        if want != "bool":
            diags.append(Diagnostic("type", f"boolean literal in integer position: {e}", where))
    elif isinstance(e, Var):
        if e.name not in scope:
            diags.append(Diagnostic("undeclared", f"variable {e.name!r} not in scope", where))
        if want != "int":
            diags.append(Diagnostic("type", f"integer variable where condition expected: {e}", where))
    elif isinstance(e, ResVar):
        diags.append(Diagnostic("res-var", "res(...) may not appear in user programs", where))
    elif isinstance(e, Unary):
        if e.op == "-":
            if want != "int":
                diags.append(Diagnostic("type", f"arithmetic where condition expected: {e}", where))
            _check_expr(e.operand, scope, "int", diags, where)
        else:  # '!'
            if want != "bool":
                diags.append(Diagnostic("type", f"boolean where integer expected: {e}", where))
            _check_expr(e.operand, scope, "bool", diags, where)
    elif isinstance(e, Binary):
        if e.op in ARITH_OPS:
            if want != "int":
                diags.append(Diagnostic("type", f"arithmetic where condition expected: {e}", where))
            _check_expr(e.left, scope, "int", diags, where)
            _check_expr(e.right, scope, "int", diags, where)
        elif e.op in CMP_OPS:
            if want != "bool":
                diags.append(Diagnostic("type", f"comparison in integer position: {e}", where))
            _check_expr(e.left, scope, "int", diags, where)
            _check_expr(e.right, scope, "int", diags, where)
        else:
            if want != "bool":
                diags.append(Diagnostic("type", f"boolean operator in integer position: {e}", where))
            _check_expr(e.left, scope, "bool", diags, where)
            _check_expr(e.right, scope, "bool", diags, where)


def _check_stmt(s: Stmt, scope: set, locals_only: Optional[set], table: dict,
                diags, where: str, tail_return_ok: bool):
    # locals_only, when set, is the set of names a procedure may write to
    items = list(_stmt_seq(s))
    for k, item in enumerate(items):
        last = k == len(items) - 1
        if isinstance(item, Skip):
            continue
        if isinstance(item, Return):
            if not (tail_return_ok and last):
                diags.append(Diagnostic("return-position", "return must be the final statement", where))
            _check_expr(item.expr, scope, "int", diags, where)
            continue
        if isinstance(item, Assign):
            if isinstance(item.target, ResVar):
                diags.append(Diagnostic("res-var", "user code may not write res(...)", where))
                continue
            name = item.target.name
            if name not in scope:
                diags.append(Diagnostic("undeclared", f"assignment to undeclared {name!r}", where))
            elif locals_only is not None and name not in locals_only:
                diags.append(Diagnostic("side-effect",
                                        f"procedure writes non-local variable {name!r}", where))
            _check_expr(item.expr, scope, "int", diags, where)
            continue
        if isinstance(item, (CallAssign, Call)):
            if item.proc not in table:
                diags.append(Diagnostic("unknown-procedure", f"call to unknown {item.proc!r}", where))
            _check_expr(item.arg, scope, "int", diags, where)
            if isinstance(item, CallAssign):
                name = item.target.name
                if name not in scope:
                    diags.append(Diagnostic("undeclared", f"assignment to undeclared {name!r}", where))
                elif locals_only is not None and name not in locals_only:
                    diags.append(Diagnostic("side-effect",
                                            f"procedure writes non-local variable {name!r}", where))
            continue
        if isinstance(item, If) or isinstance(item, While):
            _check_expr(item.cond, scope, "bool", diags, where)
            _check_stmt(item.body, scope, locals_only, table, diags, where, False)
            continue
        if isinstance(item, Scope):
            inner_scope = scope | set(item.decls)
            inner_locals = None if locals_only is None else locals_only | set(item.decls)
            _check_stmt(item.body, inner_scope, inner_locals, table, diags, where,
                        tail_return_ok and last)
            continue
        diags.append(Diagnostic("internal", f"unexpected statement {item!r}", where))


def well_formed(p: Program) -> list:
    """Empty list iff all program invariants hold."""
    diags: list = []
    table = {}
    for proc in p.procs:
        if proc.name in table:
            diags.append(Diagnostic("duplicate-procedure",
                                    f"procedure {proc.name!r} declared twice", proc.name))
        table[proc.name] = proc
    for proc in p.procs:
        scope = {proc.param} | set(proc.body.decls)
        locals_only = set(proc.body.decls)
        items = list(_stmt_seq(proc.body.body))
        if not items or not isinstance(items[-1], Return):
            diags.append(Diagnostic("return-position",
                                    "procedure body must end in return", proc.name))
        _check_stmt(proc.body.body, scope, locals_only, table, diags, proc.name, True)
    _check_stmt(p.main_body, set(p.main_decls), None, table, diags, "main", False)
    return diags
