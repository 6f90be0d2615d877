"""Fixed-point trace logic: formulas, membership checking, contracts.

Formulas are negation-free and use least fixed points only.  Membership
of a finite trace is decided by memoized descent; a fixed-point query
that revisits an obligation already on the descent stack is answered
false, which is exactly the least-fixed-point reading.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from typing import Optional, Tuple, Union

from .lang import (Binary, BoolLit, Expr, IntLit, ParseError, ResVar,
                   TokenStream, Unary, Var, parse_expr, pretty_expr,
                   subst_expr, tokenize)
from .traces import (CallEv, PopEv, PushEv, RetEv, State, Trace,
                     UndefinedVariable, eval_expr, is_event, is_state,
                     res_name, ret_owners)


class LogicError(Exception):
    pass


class MemberBudgetExceeded(LogicError):
    pass


# ---------------------------------------------------------------------------
# Terms: expressions over logical variables, plus the fresh-id marker
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Fresh:
    """#(i): a call identifier fresh for the enclosing ones.

    During membership checking it is matched existentially against the
    call identifiers occurring in the segment; the calculus instead
    instantiates it with a fresh rigid symbol at unfold time.
    """

    arg: "Term"

    def __str__(self):
        return f"fresh({pretty_term(self.arg)})"


Term = Union[Expr, Fresh]


def pretty_term(t: Term) -> str:
    if isinstance(t, Fresh):
        return str(t)
    return pretty_expr(t)


def term_vars(t: Term) -> set:
    if isinstance(t, Fresh):
        return term_vars(t.arg)
    if isinstance(t, Var):
        return {t.name}
    if isinstance(t, Unary):
        return term_vars(t.operand)
    if isinstance(t, Binary):
        return term_vars(t.left) | term_vars(t.right)
    return set()


def subst_term(t: Term, name: str, replacement: Term) -> Term:
    if isinstance(t, Fresh):
        return Fresh(subst_term(t.arg, name, replacement))
    if isinstance(t, Var) and t.name == name:
        return replacement
    if isinstance(t, Unary):
        return Unary(t.op, subst_term(t.operand, name, replacement))
    if isinstance(t, Binary):
        return Binary(t.op, subst_term(t.left, name, replacement),
                      subst_term(t.right, name, replacement))
    return t


class _FreshValue:
    """Placeholder produced when a fresh(...) term is evaluated."""

    __slots__ = ("token",)

    def __init__(self, token: int):
        self.token = token


def eval_term(t: Term, env: dict):
    if isinstance(t, Fresh):
        return _FreshValue(id(t))
    if isinstance(t, IntLit):
        return t.value
    if isinstance(t, Var):
        if t.name in env:
            return env[t.name]
        raise UndefinedVariable(t.name)
    if isinstance(t, Unary) and t.op == "-":
        return -eval_term(t.operand, env)
    if isinstance(t, Binary):
        l, r = eval_term(t.left, env), eval_term(t.right, env)
        if isinstance(l, _FreshValue) or isinstance(r, _FreshValue):
            raise LogicError("fresh(...) may only appear as a whole argument")
        if t.op == "+":
            return l + r
        if t.op == "-":
            return l - r
        if t.op == "*":
            return l * r
    raise LogicError(f"cannot evaluate term {t!r}")


# ---------------------------------------------------------------------------
# Formula AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StatePred:
    pred: Expr

    def __repr__(self):
        return f"[{pretty_expr(self.pred)}]"


@dataclass(frozen=True)
class NoEv:
    """One-entry matcher: a state, or an event not involving the procs."""

    exclude: frozenset  # procedure names; empty set excludes nothing

    def __repr__(self):
        return f"noev({', '.join(sorted(self.exclude))})"


@dataclass(frozen=True)
class StartEvF:
    proc: str
    arg: Term
    call_id: Term

    def __repr__(self):
        return f"startEv({self.proc}, {pretty_term(self.arg)}, {pretty_term(self.call_id)})"


@dataclass(frozen=True)
class FinishEvF:
    proc: str
    arg: Term
    call_id: Term

    def __repr__(self):
        return f"finishEv({self.proc}, {pretty_term(self.arg)}, {pretty_term(self.call_id)})"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Concat:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Chop:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class RecApp:
    name: str
    args: tuple

    def __repr__(self):
        return f"{self.name}({', '.join(pretty_term(a) for a in self.args)})"


class Mu:
    """mu X(params). body — compared by identity, printed structurally."""

    __slots__ = ("name", "params", "body")

    def __init__(self, name: str, params: tuple, body):
        self.name = name
        self.params = tuple(params)
        self.body = body

    def __repr__(self):
        return f"mu {self.name}({', '.join(self.params)}). ..."


@dataclass(frozen=True)
class MuApp:
    mu: Mu
    args: tuple


Formula = Union[StatePred, NoEv, StartEvF, FinishEvF, And, Or, Concat, Chop,
                RecApp, Mu, MuApp]


def formula_equal(a: Formula, b: Formula) -> bool:
    """Structural equality; Mu nodes compare by name/params/body."""
    if type(a) is not type(b):
        return False
    if isinstance(a, Mu):
        return (a.name == b.name and a.params == b.params
                and formula_equal(a.body, b.body))
    if isinstance(a, MuApp):
        return formula_equal(a.mu, b.mu) and a.args == b.args
    if isinstance(a, (And, Or, Concat, Chop)):
        return formula_equal(a.left, b.left) and formula_equal(a.right, b.right)
    return a == b


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def psi(*procs: str) -> Mu:
    """Traces not containing any event involving the given procedures."""
    excl = frozenset(procs)
    atom = NoEv(excl)
    return Mu("_G" + "_".join(sorted(excl)), (),
              Or(atom, Concat(atom, RecApp("_G" + "_".join(sorted(excl)), ()))))


def is_psi(f: Formula):
    """The exclusion set when f is a no-event fixed point, else None."""
    if isinstance(f, MuApp) and not f.args:
        f = f.mu
    if not isinstance(f, Mu) or f.params:
        return None
    body = f.body
    if not isinstance(body, Or):
        return None
    base, step = body.left, body.right
    if not isinstance(base, NoEv) or not isinstance(step, Concat):
        return None
    if not isinstance(step.left, NoEv) or step.left != base:
        return None
    if not isinstance(step.right, RecApp) or step.right.name != f.name or step.right.args:
        return None
    return base.exclude


def chop_chain(parts) -> Formula:
    parts = list(parts)
    out = parts[0]
    for p in parts[1:]:
        out = Chop(out, p)
    return out


def no_event_chop(left: Formula, proc: Optional[str], right: Formula) -> Formula:
    gap = psi(proc) if proc else psi()
    return Chop(Chop(left, gap), right)


def flatten_chain(f: Formula):
    """[first, (op, operand), ...] for the left spine of chop/concat."""
    if isinstance(f, (Chop, Concat)):
        head = flatten_chain(f.left)
        head.append(("**" if isinstance(f, Chop) else "..", f.right))
        return head
    return [f]


# ---------------------------------------------------------------------------
# Contracts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContractSpec:
    """The recursive-contract template's parameters for one procedure.

    pre_base/pre_step guard the non-recursive and recursive cases, f_m
    maps the parameter value to the result, step_inv gives the argument
    of the recursive call.  All terms are in the parameter symbol n.
    """

    proc: str
    pre_base: Expr
    pre_step: Expr
    f_m: Expr
    step_inv: Expr

    PARAM = "n"
    ID = "i"


def make_contract(spec: ContractSpec) -> Mu:
    n, i = Var(ContractSpec.PARAM), Var(ContractSpec.ID)
    rec = f"X_{spec.proc}"
    gap = psi(spec.proc)
    res_eq = StatePred(Binary("==", ResVar(i), spec.f_m))
    base = chop_chain([
        StatePred(spec.pre_base),
        StartEvF(spec.proc, n, i),
        gap,
        FinishEvF(spec.proc, spec.f_m, i),
        res_eq,
    ])
    step = chop_chain([
        StatePred(spec.pre_step),
        StartEvF(spec.proc, n, i),
        gap,
        RecApp(rec, (spec.step_inv, Fresh(i))),
        gap,
        FinishEvF(spec.proc, spec.f_m, i),
        res_eq,
    ])
    return Mu(rec, (ContractSpec.PARAM, ContractSpec.ID), Or(base, step))


def big_step_of(spec: ContractSpec) -> Formula:
    i = Var(ContractSpec.ID)
    return chop_chain([
        StatePred(Binary("||", spec.pre_base, spec.pre_step)),
        psi(),
        StatePred(Binary("==", ResVar(i), spec.f_m)),
    ])


# ---------------------------------------------------------------------------
# Substitution and unfolding
# ---------------------------------------------------------------------------

def _formula_term_vars(f: Formula) -> set:
    if isinstance(f, StatePred):
        from .lang import expr_vars
        return expr_vars(f.pred)
    if isinstance(f, (StartEvF, FinishEvF)):
        return term_vars(f.arg) | term_vars(f.call_id)
    if isinstance(f, (And, Or, Concat, Chop)):
        return _formula_term_vars(f.left) | _formula_term_vars(f.right)
    if isinstance(f, RecApp):
        out = set()
        for a in f.args:
            out |= term_vars(a)
        return out
    if isinstance(f, MuApp):
        out = _formula_term_vars(f.mu)
        for a in f.args:
            out |= term_vars(a)
        return out
    if isinstance(f, Mu):
        return _formula_term_vars(f.body) - set(f.params)
    return set()


def _subst_formula(f: Formula, mapping: dict, rec_name: str, mu: Optional[Mu]) -> Formula:
    """Substitute terms for logical variables and mu for X occurrences."""
    if isinstance(f, StatePred):
        from .lang import expr_vars
        pred = f.pred
        occurring = expr_vars(pred)
        for name, t in mapping.items():
            if name not in occurring:
                continue
            if isinstance(t, Fresh):
                raise LogicError("fresh(...) cannot appear inside state predicates")
            pred = subst_expr(pred, name, t)
        return StatePred(pred)
    if isinstance(f, NoEv):
        return f
    if isinstance(f, (StartEvF, FinishEvF)):
        arg, cid = f.arg, f.call_id
        for name, t in mapping.items():
            arg = subst_term(arg, name, t)
            cid = subst_term(cid, name, t)
        return type(f)(f.proc, arg, cid)
    if isinstance(f, (And, Or, Concat, Chop)):
        return type(f)(_subst_formula(f.left, mapping, rec_name, mu),
                       _subst_formula(f.right, mapping, rec_name, mu))
    if isinstance(f, RecApp):
        args = tuple(_subst_terms_in(a, mapping) for a in f.args)
        if f.name == rec_name and mu is not None:
            return MuApp(mu, args)
        return RecApp(f.name, args)
    if isinstance(f, MuApp):
        return MuApp(_subst_formula(f.mu, mapping, rec_name, mu),
                     tuple(_subst_terms_in(a, mapping) for a in f.args))
    if isinstance(f, Mu):
        inner_map = {k: v for k, v in mapping.items() if k not in f.params}
        captured = set()
        for t in inner_map.values():
            captured |= term_vars(t)
        if captured & set(f.params):
            raise LogicError(f"substitution would capture a parameter of {f.name}")
        inner_rec = None if f.name == rec_name else rec_name
        body = _subst_formula(f.body, inner_map,
                              inner_rec if inner_rec else "", mu if inner_rec else None)
        return Mu(f.name, f.params, body)
    raise LogicError(f"not a formula: {f!r}")


def _subst_terms_in(t: Term, mapping: dict) -> Term:
    for name, repl in mapping.items():
        t = subst_term(t, name, repl)
    return t


def substitute(phi: Formula, rec_name: str, mu: Mu, args: tuple) -> Formula:
    """phi[(mu X(ys). body)/X, args/ys]: one unfolding step's body."""
    if len(args) != len(mu.params):
        raise LogicError(f"arity mismatch unfolding {mu.name}: "
                         f"{len(args)} args for {len(mu.params)} params")
    mapping = dict(zip(mu.params, args))
    return _subst_formula(phi, mapping, rec_name, mu)


def unfold(app: MuApp) -> Formula:
    return substitute(app.mu.body, app.mu.name, app.mu, app.args)


# ---------------------------------------------------------------------------
# Predicate evaluation
# ---------------------------------------------------------------------------

def eval_pred(state: State, env: Optional[dict], pred: Expr) -> bool:
    """First-order satisfaction; program variables shadow logical ones."""
    value = eval_expr(state, pred, env or {})
    if not isinstance(value, bool):
        raise LogicError(f"predicate is not boolean: {pretty_expr(pred)}")
    return value


# ---------------------------------------------------------------------------
# Membership
# ---------------------------------------------------------------------------

class _Closure:
    __slots__ = ("mu", "benv", "renv", "key")

    def __init__(self, mu: Mu, benv: dict, renv: dict):
        self.mu = mu
        self.benv = benv
        self.renv = renv
        free_l = sorted(_formula_term_vars(mu) - set(mu.params))
        self.key = (id(mu),
                    tuple((v, benv.get(v)) for v in free_l),
                    tuple(sorted((x, c.key) for x, c in renv.items())))


class _Member:
    def __init__(self, trace: Trace, budget: int):
        self.entries = trace.entries
        self.owners = ret_owners(trace)
        self.budget = budget
        self.memo = {}
        self.onstack = set()
        self._fv = {}
        self._width = {}
        self._psi = {}
        self._ids = {}
        self._evpos = {}
        self._tokens = {}
        self._state_flags = tuple(is_state(e) for e in self.entries)
        for pos, e in enumerate(self.entries):
            if isinstance(e, CallEv):
                self._evpos.setdefault(("call", e.proc), []).append(pos)
            elif isinstance(e, RetEv):
                self._evpos.setdefault(("ret", None), []).append(pos)
            elif isinstance(e, PushEv):
                self._evpos.setdefault(("push", e.ctx.proc), []).append(pos)
            elif isinstance(e, PopEv):
                self._evpos.setdefault(("pop", e.ctx.proc), []).append(pos)

    # -- per-node caches ----------------------------------------------------

    def fv(self, f) -> tuple:
        key = id(f)
        got = self._fv.get(key)
        if got is None:
            got = tuple(sorted(_formula_term_vars(f)))
            self._fv[key] = got
        return got

    def psi_excl(self, f):
        key = id(f)
        if key not in self._psi:
            self._psi[key] = is_psi(f)
        return self._psi[key]

    def width(self, f) -> tuple:
        """(min_entries, max_entries); max None means unbounded."""
        key = id(f)
        got = self._width.get(key)
        if got is not None:
            return got
        self._width[key] = (1, None)  # provisional, for recursive formulas
        if isinstance(f, (StatePred, NoEv)):
            out = (1, 1)
        elif isinstance(f, StartEvF):
            out = (5, 5)
        elif isinstance(f, FinishEvF):
            out = (6, 6)
        elif isinstance(f, And):
            l, r = self.width(f.left), self.width(f.right)
            hi = None if l[1] is None else (l[1] if r[1] is None else min(l[1], r[1]))
            if r[1] is not None and l[1] is None:
                hi = r[1]
            out = (max(l[0], r[0]), hi)
        elif isinstance(f, Or):
            l, r = self.width(f.left), self.width(f.right)
            hi = None if (l[1] is None or r[1] is None) else max(l[1], r[1])
            out = (min(l[0], r[0]), hi)
        elif isinstance(f, Concat):
            l, r = self.width(f.left), self.width(f.right)
            hi = None if (l[1] is None or r[1] is None) else l[1] + r[1]
            out = (l[0] + r[0], hi)
        elif isinstance(f, Chop):
            l, r = self.width(f.left), self.width(f.right)
            hi = None if (l[1] is None or r[1] is None) else l[1] + r[1] - 1
            out = (max(l[0] + r[0] - 1, 1), hi)
        else:
            out = (1, None)
        self._width[key] = out
        return out

    def ids_in(self, lo: int, hi: int) -> tuple:
        key = (lo, hi)
        got = self._ids.get(key)
        if got is not None:
            return got
        ids = set()
        for pos in range(lo, hi):
            e = self.entries[pos]
            if isinstance(e, CallEv):
                ids.add(e.call_id)
            elif isinstance(e, (PushEv, PopEv)) and e.ctx.call_id is not None:
                ids.add(e.ctx.call_id)
        got = tuple(sorted(ids))
        self._ids[key] = got
        return got

    # -- argument resolution --------------------------------------------------

    def resolve_args(self, args: tuple, benv: dict, lo: int, hi: int):
        """All concrete argument tuples; fresh markers range over segment ids."""
        concrete = [eval_term(a, benv) for a in args]
        fresh_slots = [k for k, v in enumerate(concrete) if isinstance(v, _FreshValue)]
        if not fresh_slots:
            return [tuple(concrete)]
        candidates = self.ids_in(lo, hi)
        out = []

        def fill(slot_idx, current):
            if slot_idx == len(fresh_slots):
                out.append(tuple(current))
                return
            for cid in candidates:
                nxt = list(current)
                nxt[fresh_slots[slot_idx]] = cid
                fill(slot_idx + 1, nxt)

        fill(0, concrete)
        return out

    def _gap_ok(self, exclude, lo: int, hi: int) -> bool:
        # linear scan: every entry is a state or a non-excluded event
        for pos in range(lo, hi):
            e = self.entries[pos]
            if is_state(e):
                continue
            if isinstance(e, CallEv):
                if e.proc in exclude:
                    return False
            elif isinstance(e, (PushEv, PopEv)):
                if e.ctx.proc in exclude:
                    return False
            else:
                owner = self.owners.get(pos)
                if owner is not None and owner.proc in exclude:
                    return False
        return True

    def sat(self, f: Formula, lo: int, hi: int, benv: dict, renv: dict,
            token: int = 0) -> bool:
        # the token identifies the enclosing fixed-point entry, which
        # fully determines the logical/recursion environments
        key = (id(f), token, lo, hi)
        got = self.memo.get(key)
        if got is None:
            got = self._sat(f, lo, hi, benv, renv, token)
            self.memo[key] = got
        return got

    def _sat(self, f, lo, hi, benv, renv, token) -> bool:
        ent = self.entries
        n = hi - lo
        if n <= 0:
            return False
        lo_w, hi_w = self.width(f)
        if n < lo_w or (hi_w is not None and n > hi_w):
            return False
        excl = self.psi_excl(f)
        if excl is not None:
            return self._gap_ok(excl, lo, hi)
        if isinstance(f, StatePred):
            if n != 1 or not is_state(ent[lo]):
                return False
            try:
                return eval_pred(ent[lo], benv, f.pred)
            except UndefinedVariable:
                return False
        if isinstance(f, NoEv):
            if n != 1:
                return False
            e = ent[lo]
            if is_state(e):
                return True
            if isinstance(e, CallEv):
                return e.proc not in f.exclude
            if isinstance(e, (PushEv, PopEv)):
                return e.ctx.proc not in f.exclude
            owner = self.owners.get(lo)
            return owner is None or owner.proc not in f.exclude
        if isinstance(f, StartEvF):
            if n != 5:
                return False
            s0, e1, s2, e3, s4 = ent[lo:hi]
            if not (is_state(s0) and s0 == s2 == s4
                    and isinstance(e1, CallEv) and isinstance(e3, PushEv)):
                return False
            try:
                arg = eval_term(f.arg, benv)
                cid = eval_term(f.call_id, benv)
            except UndefinedVariable:
                return False
            if isinstance(arg, _FreshValue) or isinstance(cid, _FreshValue):
                raise LogicError("fresh(...) only supported in recursion arguments")
            return (e1.proc == f.proc and e1.arg == arg and e1.call_id == cid
                    and e3.ctx.proc == f.proc and e3.ctx.call_id == cid)
        if isinstance(f, FinishEvF):
            if n != 6:
                return False
            s0, e1, s2, s3, e4, s5 = ent[lo:hi]
            if not (is_state(s0) and isinstance(e1, RetEv) and s2 == s0
                    and is_state(s3) and isinstance(e4, PopEv) and s5 == s3):
                return False
            try:
                val = eval_term(f.arg, benv)
                cid = eval_term(f.call_id, benv)
            except UndefinedVariable:
                return False
            if isinstance(val, _FreshValue) or isinstance(cid, _FreshValue):
                raise LogicError("fresh(...) only supported in recursion arguments")
            return (e1.value == val and e4.ctx.proc == f.proc
                    and e4.ctx.call_id == cid
                    and s3 == s0.set(res_name(cid), val))
        if isinstance(f, And):
            return self.sat(f.left, lo, hi, benv, renv, token) and \
                self.sat(f.right, lo, hi, benv, renv, token)
        if isinstance(f, Or):
            return self.sat(f.left, lo, hi, benv, renv, token) or \
                self.sat(f.right, lo, hi, benv, renv, token)
        if isinstance(f, Concat):
            lw, rw = self.width(f.left), self.width(f.right)
            k_min = lo + lw[0]
            k_max = hi - rw[0]
            if lw[1] is not None:
                k_max = min(k_max, lo + lw[1])
            if rw[1] is not None:
                k_min = max(k_min, hi - rw[1])
            for k in range(k_min, k_max + 1):
                if self.sat(f.left, lo, k, benv, renv, token) and \
                        self.sat(f.right, k, hi, benv, renv, token):
                    return True
            return False
        if isinstance(f, Chop):
            lw, rw = self.width(f.left), self.width(f.right)
            j_min = lo + lw[0] - 1
            j_max = hi - rw[0]
            if lw[1] is not None:
                j_max = min(j_max, lo + lw[1] - 1)
            if rw[1] is not None:
                j_min = max(j_min, hi - rw[1])
            candidates = None
            ra = self.first_anchor(f.right)
            if ra is not None:
                candidates = [p - 1 for p in self._evpos.get(ra, ())]
            else:
                la = self.last_anchor(f.left)
                if la is not None:
                    candidates = [p + 1 for p in self._evpos.get(la, ())]
            if candidates is None:
                candidates = range(j_min, j_max + 1)
            flags = self._state_flags
            for j in candidates:
                if j < j_min or j > j_max or not flags[j]:
                    continue
                if self.sat(f.left, lo, j + 1, benv, renv, token) and \
                        self.sat(f.right, j, hi, benv, renv, token):
                    return True
            return False
        if isinstance(f, Mu):
            if f.params:
                raise LogicError(f"unapplied fixed point {f.name} in formula position")
            f = MuApp(f, ())
        if isinstance(f, MuApp):
            if not self._anchors_ok(f.mu, lo, hi):
                return False
            closure = _Closure(f.mu, benv, renv)
            for argv in self.resolve_args(f.args, benv, lo, hi):
                if self._mu_member(closure, argv, lo, hi):
                    return True
            return False
        if isinstance(f, RecApp):
            if f.name not in renv:
                raise LogicError(f"unbound recursion variable {f.name}")
            closure = renv[f.name]
            if not self._anchors_ok(closure.mu, lo, hi):
                return False
            for argv in self.resolve_args(f.args, benv, lo, hi):
                if self._mu_member(closure, argv, lo, hi):
                    return True
            return False
        raise LogicError(f"not a formula: {f!r}")


    def first_anchor(self, f):
        """Forced event kind at segment position lo+1, if any."""
        key = ("fa", id(f))
        if key in self._psi:
            return self._psi[key]
        self._psi[key] = None  # cycle guard
        out = None
        if isinstance(f, StartEvF):
            out = ("call", f.proc)
        elif isinstance(f, FinishEvF):
            out = ("ret", None)
        elif isinstance(f, Chop):
            out = self.first_anchor(f.left)
            if out is None and self.width(f.left) == (1, 1):
                out = self.first_anchor(f.right)
        elif isinstance(f, And):
            out = self.first_anchor(f.left) or self.first_anchor(f.right)
        elif isinstance(f, Or):
            a, b = self.first_anchor(f.left), self.first_anchor(f.right)
            out = a if a == b else None
        elif isinstance(f, Concat):
            out = self.first_anchor(f.left)
        elif isinstance(f, Mu):
            out = self.first_anchor(f.body)
        elif isinstance(f, MuApp):
            out = self.first_anchor(f.mu)
        self._psi[key] = out
        return out

    def last_anchor(self, f):
        """Forced event kind at segment position hi-2, if any."""
        key = ("la", id(f))
        if key in self._psi:
            return self._psi[key]
        self._psi[key] = None
        out = None
        if isinstance(f, StartEvF):
            out = ("push", f.proc)
        elif isinstance(f, FinishEvF):
            out = ("pop", f.proc)
        elif isinstance(f, Chop):
            out = self.last_anchor(f.right)
            if out is None and self.width(f.right) == (1, 1):
                out = self.last_anchor(f.left)
        elif isinstance(f, And):
            out = self.last_anchor(f.left) or self.last_anchor(f.right)
        elif isinstance(f, Or):
            a, b = self.last_anchor(f.left), self.last_anchor(f.right)
            out = a if a == b else None
        elif isinstance(f, Concat):
            out = self.last_anchor(f.right)
        elif isinstance(f, Mu):
            out = self.last_anchor(f.body)
        elif isinstance(f, MuApp):
            out = self.last_anchor(f.mu)
        self._psi[key] = out
        return out

    def _anchors_ok(self, mu, lo: int, hi: int) -> bool:
        fa = self.first_anchor(mu)
        if fa is not None:
            if hi - lo < 3:
                return False
            e = self.entries[lo + 1]
            if fa[0] == "call":
                if not (isinstance(e, CallEv) and e.proc == fa[1]):
                    return False
            elif fa[0] == "ret" and not isinstance(e, RetEv):
                return False
        la = self.last_anchor(mu)
        if la is not None:
            if hi - lo < 3:
                return False
            e = self.entries[hi - 2]
            if la[0] == "pop":
                if not (isinstance(e, PopEv) and e.ctx.proc == la[1]):
                    return False
            elif la[0] == "push" and not (isinstance(e, PushEv) and e.ctx.proc == la[1]):
                return False
        return True

    def _mu_member(self, closure: _Closure, argv: tuple, lo: int, hi: int) -> bool:
        key = (closure.key, argv, lo, hi)
        got = self.memo.get(key)
        if got is not None:
            return got
        if key in self.onstack:
            return False  # least fixed point: no progress, contributes nothing
        self.budget -= 1
        if self.budget < 0:
            raise MemberBudgetExceeded("fixed-point descent budget exhausted")
        mu = closure.mu
        benv = dict(closure.benv)
        benv.update(zip(mu.params, argv))
        renv = dict(closure.renv)
        renv[mu.name] = closure
        tok_key = (closure.key, argv)
        token = self._tokens.get(tok_key)
        if token is None:
            token = len(self._tokens) + 1
            self._tokens[tok_key] = token
        self.onstack.add(key)
        try:
            out = self.sat(mu.body, lo, hi, benv, renv, token)
        finally:
            self.onstack.remove(key)
        self.memo[key] = out
        return out


def member(trace: Trace, formula: Formula, env: Optional[dict] = None,
           rec_env: Optional[dict] = None, budget: int = 500_000) -> bool:
    """True iff the trace belongs to the formula's denotation."""
    if trace.is_empty:
        raise LogicError("membership of the empty trace is undefined")
    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, 100_000))
    try:
        checker = _Member(trace, budget)
        renv = {}
        for name, (mu, benv) in (rec_env or {}).items():
            renv[name] = _Closure(mu, benv, {})
        return checker.sat(formula, 0, len(trace.entries), dict(env or {}), renv)
    finally:
        sys.setrecursionlimit(old_limit)


# ---------------------------------------------------------------------------
# Concrete syntax (.tcf)
# ---------------------------------------------------------------------------

def _parse_term(ts: TokenStream) -> Term:
    return _parse_term_add(ts)


def _parse_term_add(ts):
    t = _parse_term_mul(ts)
    while ts.at_sym("+") or ts.at_sym("-"):
        op = ts.next().text
        t = Binary(op, t, _parse_term_mul(ts))
    return t


def _parse_term_mul(ts):
    t = _parse_term_atom(ts)
    while ts.at_sym("*"):
        ts.next()
        t = Binary("*", t, _parse_term_atom(ts))
    return t


def _parse_term_atom(ts):
    tok = ts.peek()
    if ts.at_sym("-"):
        ts.next()
        inner = _parse_term_atom(ts)
        if isinstance(inner, IntLit):
            return IntLit(-inner.value)
        return Unary("-", inner)
    if tok.kind == "int":
        ts.next()
        return IntLit(int(tok.text))
    if ts.at_sym("("):
        ts.next()
        t = _parse_term_add(ts)
        ts.expect_sym(")")
        return t
    if tok.kind == "ident":
        if tok.text == "fresh":
            ts.next()
            ts.expect_sym("(")
            inner = _parse_term(ts)
            ts.expect_sym(")")
            return Fresh(inner)
        if tok.text == "res":
            ts.next()
            ts.expect_sym("(")
            inner = _parse_term(ts)
            ts.expect_sym(")")
            return ResVar(inner)
        ts.next()
        return Var(tok.text)
    ts.error(f"expected term, found {tok.text!r}")


def _parse_formula_or(ts) -> Formula:
    f = _parse_formula_and(ts)
    while ts.at_sym("\\/"):
        ts.next()
        f = Or(f, _parse_formula_and(ts))
    return f


def _parse_formula_and(ts) -> Formula:
    f = _parse_formula_chain(ts)
    while ts.at_sym("/\\"):
        ts.next()
        f = And(f, _parse_formula_chain(ts))
    return f


def _parse_formula_chain(ts) -> Formula:
    f = _parse_formula_app(ts)
    while True:
        if ts.at_sym("**"):
            ts.next()
            f = Chop(f, _parse_formula_app(ts))
        elif ts.at_sym(".."):
            ts.next()
            f = Concat(f, _parse_formula_app(ts))
        elif ts.at_sym("~~"):
            ts.next()
            f = Chop(Chop(f, psi()), _parse_formula_app(ts))
        elif ts.at_sym("~"):
            ts.next()
            name = ts.expect_ident().text
            ts.expect_sym("~")
            f = Chop(Chop(f, psi(name)), _parse_formula_app(ts))
        else:
            return f


def _parse_formula_app(ts) -> Formula:
    f = _parse_formula_atom(ts)
    while ts.at_sym("("):
        if not isinstance(f, (Mu, RecApp)):
            ts.error("only fixed points and recursion variables take arguments")
        ts.next()
        args = []
        if not ts.at_sym(")"):
            args.append(_parse_term(ts))
            while ts.at_sym(","):
                ts.next()
                args.append(_parse_term(ts))
        ts.expect_sym(")")
        if isinstance(f, Mu):
            f = MuApp(f, tuple(args))
        else:
            f = RecApp(f.name, tuple(args))
    return f


def _parse_formula_atom(ts) -> Formula:
    tok = ts.peek()
    if ts.at_sym("["):
        ts.next()
        pred = parse_expr(ts, allow_res=True, allow_bool=True)
        ts.expect_sym("]")
        return StatePred(pred)
    if ts.at_sym("("):
        ts.next()
        f = _parse_formula_or(ts)
        ts.expect_sym(")")
        return f
    if tok.kind != "ident":
        ts.error(f"expected formula, found {tok.text!r}")
    if tok.text in ("startEv", "finishEv"):
        ts.next()
        ts.expect_sym("(")
        proc = ts.expect_ident().text
        ts.expect_sym(",")
        arg = _parse_term(ts)
        ts.expect_sym(",")
        cid = _parse_term(ts)
        ts.expect_sym(")")
        return StartEvF(proc, arg, cid) if tok.text == "startEv" else \
            FinishEvF(proc, arg, cid)
    if tok.text == "psi":
        ts.next()
        ts.expect_sym("(")
        procs = []
        if not ts.at_sym(")"):
            procs.append(ts.expect_ident().text)
            while ts.at_sym(","):
                ts.next()
                procs.append(ts.expect_ident().text)
        ts.expect_sym(")")
        return psi(*procs)
    if tok.text == "noev":
        ts.next()
        ts.expect_sym("(")
        procs = []
        if not ts.at_sym(")"):
            procs.append(ts.expect_ident().text)
            while ts.at_sym(","):
                ts.next()
                procs.append(ts.expect_ident().text)
        ts.expect_sym(")")
        return NoEv(frozenset(procs))
    if tok.text == "mu":
        ts.next()
        name = ts.expect_ident().text
        ts.expect_sym("(")
        params = []
        if not ts.at_sym(")"):
            params.append(ts.expect_ident().text)
            while ts.at_sym(","):
                ts.next()
                params.append(ts.expect_ident().text)
        ts.expect_sym(")")
        ts.expect_sym(".")
        body = _parse_formula_or(ts)
        return Mu(name, tuple(params), body)
    name = ts.next().text
    return RecApp(name, ())


def parse_formula(text: str) -> Formula:
    """Parse a single formula, verifying arities and closedness rules."""
    ts = TokenStream(tokenize(text))
    f = _parse_formula_or(ts)
    if ts.peek().kind != "eof":
        ts.error("trailing input after formula")
    check_formula(f, {})
    return f


def check_formula(f: Formula, bound: dict):
    """Arity checking for recursion variables; bound maps name -> arity."""
    if isinstance(f, (StatePred, NoEv, StartEvF, FinishEvF)):
        return
    if isinstance(f, (And, Or, Concat, Chop)):
        check_formula(f.left, bound)
        check_formula(f.right, bound)
        return
    if isinstance(f, RecApp):
        if f.name not in bound:
            raise LogicError(f"unbound recursion variable {f.name}")
        if bound[f.name] != len(f.args):
            raise LogicError(f"arity mismatch for {f.name}: "
                             f"{len(f.args)} args, expected {bound[f.name]}")
        return
    if isinstance(f, Mu):
        inner = dict(bound)
        inner[f.name] = len(f.params)
        check_formula(f.body, inner)
        return
    if isinstance(f, MuApp):
        if len(f.args) != len(f.mu.params):
            raise LogicError(f"arity mismatch applying {f.mu.name}")
        check_formula(f.mu, bound)
        return
    raise LogicError(f"not a formula: {f!r}")


def pretty_formula(f: Formula, prec: int = 0) -> str:
    """Render with the ~m~ shorthand for chop-embedded no-event gaps."""
    excl = is_psi(f)
    if excl is not None:
        return f"psi({', '.join(sorted(excl))})"
    if isinstance(f, StatePred):
        return f"[{pretty_expr(f.pred)}]"
    if isinstance(f, NoEv):
        return f"noev({', '.join(sorted(f.exclude))})"
    if isinstance(f, (StartEvF, FinishEvF)):
        kind = "startEv" if isinstance(f, StartEvF) else "finishEv"
        return f"{kind}({f.proc}, {pretty_term(f.arg)}, {pretty_term(f.call_id)})"
    if isinstance(f, Or):
        text = f"{pretty_formula(f.left, 1)} \\/ {pretty_formula(f.right, 2)}"
        return f"({text})" if prec > 1 else text
    if isinstance(f, And):
        text = f"{pretty_formula(f.left, 2)} /\\ {pretty_formula(f.right, 3)}"
        return f"({text})" if prec > 2 else text
    if isinstance(f, (Chop, Concat)):
        parts = flatten_chain(f)
        pieces = [pretty_formula(parts[0], 4)]
        j = 1
        while j < len(parts):
            op, part = parts[j]
            part_excl = is_psi(part)
            if part_excl is not None and op == "**" and j + 1 < len(parts) \
                    and parts[j + 1][0] == "**" and len(part_excl) <= 1:
                tie = "~~" if not part_excl else f"~{next(iter(part_excl))}~"
                pieces.append(f" {tie} {pretty_formula(parts[j + 1][1], 4)}")
                j += 2
            else:
                pieces.append(f" {op} {pretty_formula(part, 4)}")
                j += 1
        text = "".join(pieces)
        return f"({text})" if prec > 3 else text
    if isinstance(f, RecApp):
        return f"{f.name}({', '.join(pretty_term(a) for a in f.args)})"
    if isinstance(f, Mu):
        body = pretty_formula(f.body, 0)
        text = f"mu {f.name}({', '.join(f.params)}). ({body})"
        return f"({text})" if prec > 0 else text
    if isinstance(f, MuApp):
        mu_text = pretty_formula(f.mu, 4)
        return f"{mu_text}({', '.join(pretty_term(a) for a in f.args)})"
    raise LogicError(f"not a formula: {f!r}")


# ---------------------------------------------------------------------------
# Contract files: named bindings plus template spec blocks
# ---------------------------------------------------------------------------

@dataclass
class ContractFile:
    contracts: dict  # name -> (params, Formula)
    specs: dict      # proc -> ContractSpec


def parse_contract_file(text: str) -> ContractFile:
    ts = TokenStream(tokenize(text))
    contracts = {}
    specs = {}
    if not (ts.at_ident("contract") or ts.at_ident("spec")):
        f = _parse_formula_or(ts)
        if ts.peek().kind != "eof":
            ts.error("trailing input after formula")
        check_formula(f, {})
        contracts["_"] = ((), f)
        return ContractFile(contracts, specs)
    while ts.peek().kind != "eof":
        if ts.at_ident("spec"):
            ts.next()
            proc = ts.expect_ident().text
            ts.expect_sym("{")
            fields = {}
            while not ts.at_sym("}"):
                key = ts.expect_ident().text
                ts.expect_sym(":")
                if key in ("base", "step"):
                    ts.expect_sym("[")
                    fields[key] = parse_expr(ts, allow_res=True, allow_bool=True)
                    ts.expect_sym("]")
                elif key in ("inv", "result"):
                    fields[key] = _parse_term(ts)
                else:
                    ts.error(f"unknown spec field {key!r}")
                if ts.at_sym(";"):
                    ts.next()
            ts.expect_sym("}")
            missing = {"base", "step", "inv", "result"} - set(fields)
            if missing:
                ts.error(f"spec {proc} missing fields: {sorted(missing)}")
            specs[proc] = ContractSpec(proc, fields["base"], fields["step"],
                                       fields["result"], fields["inv"])
        elif ts.at_ident("contract"):
            ts.next()
            name = ts.expect_ident().text
            params = []
            ts.expect_sym("(")
            if not ts.at_sym(")"):
                params.append(ts.expect_ident().text)
                while ts.at_sym(","):
                    ts.next()
                    params.append(ts.expect_ident().text)
            ts.expect_sym(")")
            ts.expect_sym(":=")
            f = _parse_formula_or(ts)
            check_formula(f, {})
            contracts[name] = (tuple(params), f)
        else:
            ts.error("expected 'contract' or 'spec'")
    return ContractFile(contracts, specs)


def contract_file_text(spec: ContractSpec, include_big_step: bool = True) -> str:
    lines = [
        f"spec {spec.proc} {{ base: [{pretty_expr(spec.pre_base)}]; "
        f"step: [{pretty_expr(spec.pre_step)}]; "
        f"inv: {pretty_term(spec.step_inv)}; result: {pretty_term(spec.f_m)} }}",
        "",
        f"contract {spec.proc}(n, i) :=",
        f"  {pretty_formula(make_contract(spec))}",
    ]
    if include_big_step:
        lines += [
            "",
            f"contract {spec.proc}_big_step(n, i) :=",
            f"  {pretty_formula(big_step_of(spec))}",
        ]
    return "\n".join(lines) + "\n"


def applied(formula: Formula, params: tuple) -> Formula:
    """Apply an unapplied parametric fixed point to its declared parameters."""
    if isinstance(formula, Mu) and formula.params:
        return MuApp(formula, tuple(Var(p) for p in params))
    return formula
