"""Symbolic-execution sequent calculus with a replayable proof kernel.

Sequents carry assertions (closed predicates over rigid symbols, or
contract assumptions) and a goal: a judgment ``U s : Phi``, a first-order
predicate, or a procedure contract.  Rules are applied by name through
one registry, so proofs can be checked independently of how they were
produced by replaying every step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

from . import fo
from .lang import (Assign, Binary, BoolLit, Call, CallAssign, Expr, If,
                   IntLit, LookupTable, ParseError, Program, ResVar, Return,
                   Scope, Seq, Skip, Stmt, TokenStream, Unary, Var, While,
                   build_lookup, expr_vars, fold_expr, lookup, parse_expr,
                   pretty_expr, subst_expr, subst_res_expr, subst_stmt,
                   tokenize)
from .logic import (And, Chop, Concat, ContractSpec, FinishEvF, Formula,
                    Fresh, LogicError, Mu, MuApp, NoEv, Or, RecApp, StartEvF,
                    StatePred, check_formula, flatten_chain, formula_equal,
                    is_psi, make_contract, parse_formula, pretty_formula,
                    pretty_term, subst_term, term_vars)
from .traces import Ctx, MAIN_CTX, MalformedNesting
from .updates import (CallUpd, Elem, FinishUpd, StartUpd, Update, UpdateAtom,
                      UpdateApplicationError, apply_update_expr,
                      curr_ctx_update, is_res_elem, pretty_update,
                      update_reads, update_writes)


class RuleError(Exception):
    """A rule does not match or a side condition failed."""


class UnsupportedConstruct(Exception):
    pass


# ---------------------------------------------------------------------------
# Sequent model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PredAssert:
    pred: Expr

    def __repr__(self):
        return pretty_expr(self.pred)


@dataclass(frozen=True)
class ContractAssumption:
    """C_m: forall n,i. pre(n) -> m(n) : phi(n,i) ** [res_i == f(n)]."""

    proc: str
    pre: Expr      # in the parameter symbol n
    phi: Mu        # the contract's fixed point, params (n, i)
    result: Expr   # f_m, in the parameter symbol n

    def __repr__(self):
        return f"C_{self.proc}"

    @staticmethod
    def from_spec(spec: ContractSpec) -> "ContractAssumption":
        from .fo import simplify_or
        pre = simplify_or(spec.pre_base, spec.pre_step)
        return ContractAssumption(spec.proc, pre, make_contract(spec), spec.f_m)


Assertion = Union[PredAssert, ContractAssumption]


@dataclass(frozen=True)
class Judgment:
    update: Tuple[UpdateAtom, ...]
    stmt: Optional[Stmt]
    formula: Formula

    def __repr__(self):
        body = "" if self.stmt is None else f" {self.stmt}"
        return f"{pretty_update(self.update)}{body} : {pretty_formula(self.formula)}"


@dataclass(frozen=True)
class PredGoal:
    pred: Expr

    def __repr__(self):
        return pretty_expr(self.pred)


@dataclass(frozen=True)
class ContractGoal:
    proc: str

    def __repr__(self):
        return f"C_{self.proc}"


Goal = Union[Judgment, PredGoal, ContractGoal]


@dataclass(frozen=True)
class Sequent:
    gamma: Tuple[Assertion, ...]
    goal: Goal

    def __repr__(self):
        left = ", ".join(repr(a) for a in self.gamma)
        return f"{left} |- {self.goal!r}"


def gamma_preds(seq: Sequent) -> List[Expr]:
    return [a.pred for a in seq.gamma if isinstance(a, PredAssert)]


def gamma_contracts(seq: Sequent) -> List[ContractAssumption]:
    return [a for a in seq.gamma if isinstance(a, ContractAssumption)]


def assertion_equal(a: Assertion, b: Assertion) -> bool:
    if isinstance(a, PredAssert) and isinstance(b, PredAssert):
        return a.pred == b.pred
    if isinstance(a, ContractAssumption) and isinstance(b, ContractAssumption):
        return (a.proc == b.proc and a.pre == b.pre and a.result == b.result
                and formula_equal(a.phi, b.phi))
    return False


def _stmt_norm(s: Optional[Stmt]) -> Optional[Stmt]:
    """Canonical right-associated sequencing, recursively."""
    if s is None:
        return None
    if isinstance(s, Seq):
        items: List[Stmt] = []
        stack = [s]
        while stack:
            top = stack.pop()
            if isinstance(top, Seq):
                stack.append(top.second)
                stack.append(top.first)
            else:
                items.append(_stmt_norm(top))
        out = items[-1]
        for item in reversed(items[:-1]):
            out = Seq(item, out)
        return out
    if isinstance(s, If):
        return If(s.cond, _stmt_norm(s.body))
    if isinstance(s, While):
        return While(s.cond, _stmt_norm(s.body))
    if isinstance(s, Scope):
        return Scope(s.decls, _stmt_norm(s.body))
    return s


def goal_equal(a: Goal, b: Goal) -> bool:
    if isinstance(a, Judgment) and isinstance(b, Judgment):
        return (a.update == b.update and _stmt_norm(a.stmt) == _stmt_norm(b.stmt)
                and formula_equal(a.formula, b.formula))
    if isinstance(a, PredGoal) and isinstance(b, PredGoal):
        return a.pred == b.pred
    if isinstance(a, ContractGoal) and isinstance(b, ContractGoal):
        return a.proc == b.proc
    return False


def sequent_equal(a: Sequent, b: Sequent) -> bool:
    if len(a.gamma) != len(b.gamma):
        return False
    return all(assertion_equal(x, y) for x, y in zip(a.gamma, b.gamma)) \
        and goal_equal(a.goal, b.goal)


# ---------------------------------------------------------------------------
# Proof trees
# ---------------------------------------------------------------------------

class ProofNode:
    def __init__(self, sequent: Sequent, rule: Optional[str] = None,
                 args: Optional[dict] = None, children: Optional[list] = None):
        self.sequent = sequent
        self.rule = rule
        self.args = dict(args or {})
        self.children = list(children or [])

    @property
    def closed(self) -> bool:
        return self.rule is not None and all(c.closed for c in self.children)

    def open_goals(self) -> list:
        if self.rule is None:
            return [self]
        out = []
        for c in self.children:
            out.extend(c.open_goals())
        return out

    def rule_multiset(self) -> dict:
        out: Dict[str, int] = {}
        if self.rule:
            out[self.rule] = 1
        for c in self.children:
            for k, v in c.rule_multiset().items():
                out[k] = out.get(k, 0) + v
        return out

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)


# ---------------------------------------------------------------------------
# Name management for fresh rigid symbols
# ---------------------------------------------------------------------------

def _stmt_names(s: Optional[Stmt]) -> set:
    if s is None:
        return set()
    if isinstance(s, Skip):
        return set()
    if isinstance(s, Assign):
        base = expr_vars(s.expr)
        if isinstance(s.target, Var):
            base |= {s.target.name}
        else:
            base |= expr_vars(s.target.index)
        return base
    if isinstance(s, CallAssign):
        return {s.target.name} | expr_vars(s.arg)
    if isinstance(s, Call):
        return expr_vars(s.arg)
    if isinstance(s, (If, While)):
        return expr_vars(s.cond) | _stmt_names(s.body)
    if isinstance(s, Seq):
        return _stmt_names(s.first) | _stmt_names(s.second)
    if isinstance(s, Scope):
        return set(s.decls) | _stmt_names(s.body)
    if isinstance(s, Return):
        return expr_vars(s.expr)
    return set()


def _formula_names(f: Formula) -> set:
    if isinstance(f, StatePred):
        return expr_vars(f.pred)
    if isinstance(f, NoEv):
        return set()
    if isinstance(f, (StartEvF, FinishEvF)):
        return term_vars(f.arg) | term_vars(f.call_id)
    if isinstance(f, (And, Or, Concat, Chop)):
        return _formula_names(f.left) | _formula_names(f.right)
    if isinstance(f, RecApp):
        out = set()
        for a in f.args:
            out |= term_vars(a)
        return out
    if isinstance(f, Mu):
        return set(f.params) | _formula_names(f.body)
    if isinstance(f, MuApp):
        out = _formula_names(f.mu)
        for a in f.args:
            out |= term_vars(a)
        return out
    return set()


def _update_names(update: Update) -> set:
    out = set()
    for atom in update:
        out |= update_reads(atom)
        w = update_writes(atom)
        if w:
            out.add(w)
        if isinstance(atom, Elem) and isinstance(atom.target, ResVar):
            out |= expr_vars(atom.target.index)
    return out


def names_in_sequent(seq: Sequent) -> set:
    names = set()
    for a in seq.gamma:
        if isinstance(a, PredAssert):
            names |= expr_vars(a.pred)
        else:
            names |= expr_vars(a.pre) | expr_vars(a.result) | _formula_names(a.phi)
    g = seq.goal
    if isinstance(g, Judgment):
        names |= _update_names(g.update) | _stmt_names(g.stmt) | _formula_names(g.formula)
    elif isinstance(g, PredGoal):
        names |= expr_vars(g.pred)
    return names


def fresh_rigid(base: str, taken: set) -> str:
    candidate = base + "'"
    while candidate in taken:
        candidate += "'"
    return candidate


# ---------------------------------------------------------------------------
# Statement decomposition
# ---------------------------------------------------------------------------

def stmt_head(s: Stmt) -> Tuple[Stmt, Optional[Stmt]]:
    """(leading statement, remainder); flattens left-nested sequences."""
    while isinstance(s, Seq) and isinstance(s.first, Seq):
        s = Seq(s.first.first, Seq(s.first.second, s.second))
    if isinstance(s, Seq):
        return s.first, s.second
    return s, None


def seq_join(a: Optional[Stmt], b: Optional[Stmt]) -> Optional[Stmt]:
    if a is None:
        return b
    if b is None:
        return a
    return Seq(a, b)


# ---------------------------------------------------------------------------
# Rule context
# ---------------------------------------------------------------------------

@dataclass
class RuleContext:
    table: LookupTable
    contracts: Dict[str, ContractAssumption]
    extensions: bool = False

    @staticmethod
    def for_program(program: Program, contracts, extensions: bool = False):
        table = build_lookup(program)
        cmap = {c.proc: c for c in contracts}
        return RuleContext(table, cmap, extensions)


def _contract_gamma(ctx: RuleContext) -> tuple:
    return tuple(ctx.contracts[name] for name in sorted(ctx.contracts))


# ---------------------------------------------------------------------------
# Formula chain helpers
# ---------------------------------------------------------------------------

def _rebuild(parts) -> Formula:
    """Inverse of flatten_chain on a non-empty prefix-shaped part list."""
    head = parts[0]
    out = head if not isinstance(head, tuple) else head[1]
    for op, p in parts[1:]:
        out = Chop(out, p) if op == "**" else Concat(out, p)
    return out


def _drop_first(parts) -> Formula:
    rest = [parts[1][1]] + parts[2:]
    return _rebuild(rest)


def _drop_last(parts) -> Formula:
    return _rebuild(parts[:-1])


def _judgment(seq: Sequent) -> Judgment:
    if not isinstance(seq.goal, Judgment):
        raise RuleError("rule expects a judgment goal")
    return seq.goal


def _instantiate_fresh(f: Formula, taken: set,
                       introduced: Optional[list] = None) -> Formula:
    """Replace fresh(...) terms with fresh rigid symbols, left to right."""
    assigned: Dict[int, str] = {}

    def term(t):
        if isinstance(t, Fresh):
            key = id(t)
            if key not in assigned:
                name = fresh_rigid("k", taken)
                taken.add(name)
                assigned[key] = name
                if introduced is not None:
                    introduced.append(name)
            return Var(assigned[key])
        if isinstance(t, Unary):
            return Unary(t.op, term(t.operand))
        if isinstance(t, Binary):
            return Binary(t.op, term(t.left), term(t.right))
        return t

    def go(g):
        if isinstance(g, (StatePred, NoEv)):
            return g
        if isinstance(g, (StartEvF, FinishEvF)):
            return type(g)(g.proc, term(g.arg), term(g.call_id))
        if isinstance(g, (And, Or, Concat, Chop)):
            return type(g)(go(g.left), go(g.right))
        if isinstance(g, RecApp):
            return RecApp(g.name, tuple(term(a) for a in g.args))
        if isinstance(g, MuApp):
            return MuApp(g.mu, tuple(term(a) for a in g.args))
        if isinstance(g, Mu):
            return g  # nested binders keep their own fresh markers
        return g

    return go(f)


def _subst_judgment_var(j: Judgment, name: str, replacement: Expr) -> Judgment:
    def atom(a):
        if isinstance(a, Elem):
            tgt = a.target
            if isinstance(tgt, ResVar):
                tgt = ResVar(subst_expr(tgt.index, name, replacement))
            return Elem(tgt, fold_expr(subst_expr(a.expr, name, replacement)))
        if isinstance(a, CallUpd):
            return CallUpd(a.target, a.proc, fold_expr(subst_expr(a.arg, name, replacement)))
        return type(a)(a.proc, fold_expr(subst_expr(a.arg, name, replacement)),
                       fold_expr(subst_expr(a.call_id, name, replacement)))

    def formula(f):
        if isinstance(f, StatePred):
            return StatePred(subst_expr(f.pred, name, replacement))
        if isinstance(f, NoEv):
            return f
        if isinstance(f, (StartEvF, FinishEvF)):
            return type(f)(f.proc, subst_term(f.arg, name, replacement),
                           subst_term(f.call_id, name, replacement))
        if isinstance(f, (And, Or, Concat, Chop)):
            return type(f)(formula(f.left), formula(f.right))
        if isinstance(f, RecApp):
            return RecApp(f.name, tuple(subst_term(a, name, replacement) for a in f.args))
        if isinstance(f, MuApp):
            return MuApp(f.mu, tuple(subst_term(a, name, replacement) for a in f.args))
        if isinstance(f, Mu):
            return f
        return f

    stmt = subst_stmt(j.stmt, name, replacement) if j.stmt is not None else None
    return Judgment(tuple(atom(a) for a in j.update), stmt, formula(j.formula))


# ---------------------------------------------------------------------------
# The rules
# ---------------------------------------------------------------------------

def _rule_assign(seq, args, ctx):
    j = _judgment(seq)
    if j.stmt is None:
        raise RuleError("Assign needs a leading statement")
    head, rest = stmt_head(j.stmt)
    if isinstance(head, Assign):
        atom = Elem(head.target, head.expr)
    elif isinstance(head, CallAssign):
        atom = CallUpd(head.target, head.proc, head.arg)
    else:
        raise RuleError("Assign expects an assignment statement")
    return [Sequent(seq.gamma, Judgment(j.update + (atom,), rest, j.formula))]


def _rule_skip(seq, args, ctx):
    j = _judgment(seq)
    if j.stmt is None:
        raise RuleError("Skip needs a leading statement")
    head, rest = stmt_head(j.stmt)
    if not isinstance(head, Skip):
        raise RuleError("Skip expects a skip statement")
    return [Sequent(seq.gamma, Judgment(j.update, rest, j.formula))]


def _rule_scope(seq, args, ctx):
    j = _judgment(seq)
    if j.stmt is None:
        raise RuleError("Scope needs a leading statement")
    head, rest = stmt_head(j.stmt)
    if not isinstance(head, Scope) or head.decls:
        raise RuleError("Scope expects a declaration-free block")
    return [Sequent(seq.gamma, Judgment(j.update, seq_join(head.body, rest), j.formula))]


def _rule_var_decl(seq, args, ctx):
    j = _judgment(seq)
    if j.stmt is None:
        raise RuleError("VarDecl needs a leading statement")
    head, rest = stmt_head(j.stmt)
    if not isinstance(head, Scope) or not head.decls:
        raise RuleError("VarDecl expects a block with declarations")
    name = head.decls[0]
    fresh = fresh_rigid(name, names_in_sequent(seq))
    body = Scope(head.decls[1:], subst_stmt(head.body, name, Var(fresh)))
    update = j.update + (Elem(Var(fresh), IntLit(0)),)
    return [Sequent(seq.gamma, Judgment(update, seq_join(body, rest), j.formula))]


def _rule_cond(seq, args, ctx):
    j = _judgment(seq)
    if j.stmt is None:
        raise RuleError("Cond needs a leading statement")
    head, rest = stmt_head(j.stmt)
    if not isinstance(head, If):
        raise RuleError("Cond expects a conditional")
    try:
        guard = apply_update_expr(j.update, head.cond)
    except UpdateApplicationError as e:
        raise RuleError(f"guard reads a call-update target: {e}") from None
    then_seq = Sequent(seq.gamma + (PredAssert(guard),),
                       Judgment(j.update, seq_join(head.body, rest), j.formula))
    else_seq = Sequent(seq.gamma + (PredAssert(fo.negate_pred(guard)),),
                       Judgment(j.update, rest, j.formula))
    return [then_seq, else_seq]


def _rule_return(seq, args, ctx):
    j = _judgment(seq)
    if j.stmt is None:
        raise RuleError("Return needs a leading statement")
    head, rest = stmt_head(j.stmt)
    if not isinstance(head, Return):
        raise RuleError("Return expects a return statement")
    if rest is not None:
        raise RuleError("return must be in tail position")
    try:
        uctx = curr_ctx_update(j.update)
    except MalformedNesting as e:
        raise RuleError(str(e)) from None
    if uctx == MAIN_CTX:
        raise RuleError("return outside any startEv context")
    m, cid = uctx.proc, uctx.call_id
    update = j.update + (FinishUpd(m, head.expr, cid),)
    stmt = Assign(ResVar(cid), head.expr)
    return [Sequent(seq.gamma, Judgment(update, stmt, j.formula))]


def _rule_prestate(seq, args, ctx):
    j = _judgment(seq)
    parts = flatten_chain(j.formula)
    if len(parts) < 2 or not isinstance(parts[0], StatePred) or parts[1][0] != "**":
        raise RuleError("Prestate expects [Q] ** Phi")
    return [Sequent(seq.gamma, PredGoal(parts[0].pred)),
            Sequent(seq.gamma, Judgment(j.update, j.stmt, _drop_first(parts)))]


def _rule_poststate(seq, args, ctx):
    j = _judgment(seq)
    if j.stmt is not None:
        raise RuleError("Poststate applies after symbolic execution finished")
    parts = flatten_chain(j.formula)
    if len(parts) < 2 or not isinstance(parts[-1][1], StatePred) or parts[-1][0] != "**":
        raise RuleError("Poststate expects Phi ** [Q]")
    try:
        applied = apply_update_expr(j.update, parts[-1][1].pred)
    except UpdateApplicationError as e:
        raise RuleError(str(e)) from None
    return [Sequent(seq.gamma, PredGoal(applied)),
            Sequent(seq.gamma, Judgment(j.update, None, _drop_last(parts)))]


def _rule_empty_update(seq, args, ctx):
    j = _judgment(seq)
    if j.stmt is not None or j.update:
        raise RuleError("EmptyUpdate expects an empty update and no statement")
    if not isinstance(j.formula, StatePred):
        raise RuleError("EmptyUpdate expects a state predicate")
    return [Sequent(seq.gamma, PredGoal(j.formula.pred))]


def _rule_unfold(seq, args, ctx):
    j = _judgment(seq)
    f = j.formula
    if isinstance(f, Mu) and not f.params:
        f = MuApp(f, ())
    if not isinstance(f, MuApp):
        raise RuleError("Unfold expects an applied fixed point")
    from .logic import unfold as unfold_mu
    body = unfold_mu(f)
    taken = names_in_sequent(seq)
    introduced: list = []
    body = _instantiate_fresh(body, taken, introduced)
    # record the witness symbols: they stand for "some fresh identifier"
    args["fresh"] = introduced
    return [Sequent(seq.gamma, Judgment(j.update, j.stmt, body))]


def _rule_or(side: str):
    def rule(seq, args, ctx):
        j = _judgment(seq)
        if not isinstance(j.formula, Or):
            raise RuleError("expects a disjunctive trace formula")
        chosen = j.formula.left if side == "left" else j.formula.right
        return [Sequent(seq.gamma, Judgment(j.update, j.stmt, chosen))]
    return rule


def _rule_and_split(seq, args, ctx):
    j = _judgment(seq)
    if not isinstance(j.formula, And):
        raise RuleError("AndSplit expects a conjunctive trace formula")
    return [Sequent(seq.gamma, Judgment(j.update, j.stmt, j.formula.left)),
            Sequent(seq.gamma, Judgment(j.update, j.stmt, j.formula.right))]


def _rule_close(seq, args, ctx):
    if not isinstance(seq.goal, PredGoal):
        raise RuleError("Close expects a predicate goal")
    verdict = fo.fo_valid(gamma_preds(seq), seq.goal.pred)
    if verdict.status != "valid":
        detail = f" (counterexample {verdict.counterexample})" \
            if verdict.status == "invalid" else ""
        raise RuleError(f"not first-order valid{detail}")
    return []


def inline(proc_name: str, arg: Expr, call_id: Expr, table: LookupTable,
           taken: Optional[set] = None):
    """{startEv(m,e,i)} e' = e; body[e'/p] with e' a fresh copy of the
    formal parameter.  Returns the update prefix and the statement."""
    proc = lookup(proc_name, table)
    taken = set(taken or ()) | _stmt_names(proc.body) | {proc.param} | \
        expr_vars(arg) | expr_vars(call_id)
    e_p = fresh_rigid(proc.param, taken)
    stmt = seq_join(Assign(Var(e_p), arg),
                    subst_stmt(proc.body, proc.param, Var(e_p)))
    return (StartUpd(proc_name, arg, call_id),), stmt


def _rule_procedure_contract(seq, args, ctx):
    if not isinstance(seq.goal, ContractGoal):
        raise RuleError("ProcedureContract expects a contract goal")
    proc_name = seq.goal.proc
    if proc_name not in ctx.contracts:
        raise RuleError(f"no contract assumption for {proc_name!r}")
    c = ctx.contracts[proc_name]
    proc = lookup(proc_name, ctx.table)
    taken = names_in_sequent(seq) | _stmt_names(proc.body) | \
        {proc.param} | set(c.phi.params) | expr_vars(c.pre)
    n_p = fresh_rigid(ContractSpec.PARAM, taken)
    taken.add(n_p)
    i_p = fresh_rigid(ContractSpec.ID, taken)
    taken.add(i_p)
    update, inlined = inline(proc_name, Var(n_p), Var(i_p), ctx.table, taken)
    formula = MuApp(c.phi, (Var(n_p), Var(i_p)))
    gamma = (PredAssert(subst_expr(c.pre, ContractSpec.PARAM, Var(n_p))),) + \
        _contract_gamma(ctx)
    return [Sequent(gamma, Judgment(update, inlined, formula))]


def _rule_trabs(seq, args, ctx):
    j = _judgment(seq)
    if j.stmt is not None:
        raise RuleError("TrAbs applies after symbolic execution finished")
    call_indices = [k for k, a in enumerate(j.update) if isinstance(a, CallUpd)]
    if not call_indices:
        raise RuleError("TrAbs needs a call update")
    ci = args.get("call", call_indices[0])
    if ci not in call_indices:
        raise RuleError(f"no call update at index {ci}")
    if any(k < ci for k in call_indices):
        raise RuleError("call updates precede the selected one")
    call: CallUpd = j.update[ci]
    u1, u2 = j.update[:ci], j.update[ci + 1:]

    parts = flatten_chain(j.formula)
    if any(op != "**" for op, _ in parts[1:]):
        raise RuleError("TrAbs expects a chop chain")
    occ_indices = [k for k, p in enumerate(parts)
                   if isinstance(p[1] if isinstance(p, tuple) else p, (MuApp, RecApp))]
    if not occ_indices:
        raise RuleError("no recursion occurrence in the goal formula")
    xi = args.get("occ", occ_indices[0])
    if xi not in occ_indices or xi == 0 or xi == len(parts) - 1:
        raise RuleError("recursion occurrence must be interior")
    xapp = parts[xi][1]

    if call.proc not in ctx.contracts:
        raise RuleError(f"no contract assumption for {call.proc!r}")
    c = ctx.contracts[call.proc]
    if not any(isinstance(a, ContractAssumption) and a.proc == call.proc
               for a in seq.gamma):
        raise RuleError(f"contract for {call.proc!r} not among the assumptions")
    if isinstance(xapp, MuApp):
        if not formula_equal(xapp.mu, c.phi):
            raise RuleError("recursion occurrence does not match the contract")
        xargs = xapp.args
    else:
        if xapp.name != c.phi.name:
            raise RuleError("recursion variable does not match the contract")
        xargs = xapp.args
    if len(xargs) != 2:
        raise RuleError("contract occurrences take (value, identifier) arguments")
    t_val, t_id = xargs
    if not isinstance(t_id, Var):
        raise RuleError("identifier argument must be a rigid symbol")
    try:
        call_arg = apply_update_expr(u1, call.arg)
    except UpdateApplicationError as e:
        raise RuleError(str(e)) from None
    if not fo.terms_equal(t_val, call_arg):
        raise RuleError(
            f"call argument {pretty_expr(call_arg)} does not match "
            f"occurrence argument {pretty_term(t_val)}")

    phi1 = _rebuild(parts[:xi])
    phi2 = _rebuild([parts[xi + 1][1]] + parts[xi + 2:])
    preds = tuple(a for a in seq.gamma if isinstance(a, PredAssert))
    contracts = tuple(a for a in seq.gamma if isinstance(a, ContractAssumption))
    pre_inst = fold_expr(subst_expr(c.pre, ContractSpec.PARAM, call_arg))
    f_call = fold_expr(subst_expr(c.result, ContractSpec.PARAM, call_arg))
    res_k = ResVar(t_id)
    third_gamma = (PredAssert(Binary("==", res_k, f_call)),) + contracts
    return [
        Sequent(preds, Judgment(u1, None, phi1)),
        Sequent(preds, PredGoal(pre_inst)),
        Sequent(third_gamma, Judgment((Elem(call.target, res_k),) + u2, None, phi2)),
    ]


def _rule_apply_update(seq, args, ctx):
    j = _judgment(seq)
    idx = args.get("at")
    if idx is None:
        raise RuleError("ApplyUpdate needs at=<index>")
    if not (0 <= idx < len(j.update)):
        raise RuleError("index out of range")
    atom = j.update[idx]
    if not isinstance(atom, Elem) or not isinstance(atom.target, Var):
        raise RuleError("ApplyUpdate expects an elementary update on a variable")
    v, e = atom.target.name, atom.expr
    if v in expr_vars(e):
        raise RuleError("ApplyUpdate cannot propagate a self-referential update")
    # substitution is valid until v or a variable of e is reassigned
    new: List[UpdateAtom] = list(j.update)
    for k in range(idx + 1, len(j.update)):
        a = j.update[k]
        if isinstance(a, Elem):
            tgt = a.target
            if isinstance(tgt, ResVar):
                tgt = ResVar(fold_expr(subst_expr(tgt.index, v, e)))
            new[k] = Elem(tgt, fold_expr(subst_expr(a.expr, v, e)))
        elif isinstance(a, CallUpd):
            new[k] = CallUpd(a.target, a.proc, fold_expr(subst_expr(a.arg, v, e)))
        else:
            new[k] = type(a)(a.proc, fold_expr(subst_expr(a.arg, v, e)),
                             fold_expr(subst_expr(a.call_id, v, e)))
        written = update_writes(a)
        if written == v or written in expr_vars(e):
            break
    return [Sequent(seq.gamma, Judgment(tuple(new), j.stmt, j.formula))]


def _gap_tolerant(formula: Formula, update: Update, idx: int) -> bool:
    # dropping a state entry is covered when the goal is a contract
    # application (gap-closed) or the entry falls in a leading gap
    if isinstance(formula, (MuApp, RecApp)):
        return True
    parts = flatten_chain(formula)
    lead = parts[0]
    if is_psi(lead) is not None:
        return not any(isinstance(a, (StartUpd, FinishUpd, CallUpd))
                       for a in update[:idx])
    return False


def _rule_drop_update(seq, args, ctx):
    j = _judgment(seq)
    idx = args.get("at")
    if idx is None:
        raise RuleError("DropUpdate needs at=<index>")
    if not (0 <= idx < len(j.update)):
        raise RuleError("index out of range")
    atom = j.update[idx]
    if not isinstance(atom, Elem) or not isinstance(atom.target, Var):
        raise RuleError("DropUpdate expects an elementary update on a variable")
    v = atom.target.name
    alive = True
    for k in range(idx + 1, len(j.update)):
        if v in update_reads(j.update[k]):
            raise RuleError(f"{v!r} is read by a later update")
        if update_writes(j.update[k]) == v:
            alive = False
            break
    if alive:
        if j.stmt is not None and v in _stmt_names(j.stmt):
            raise RuleError(f"{v!r} occurs in the remaining statement")
        if v in _formula_names(j.formula):
            raise RuleError(f"{v!r} occurs in the goal formula")
    if not _gap_tolerant(j.formula, j.update, idx):
        raise RuleError("goal formula does not absorb the dropped state entry")
    update = j.update[:idx] + j.update[idx + 1:]
    return [Sequent(seq.gamma, Judgment(update, j.stmt, j.formula))]


def _rule_drop_res_update(seq, args, ctx):
    j = _judgment(seq)
    res_indices = [k for k, a in enumerate(j.update) if is_res_elem(a)]
    if not res_indices:
        raise RuleError("no result-variable update to drop")
    idx = args.get("at", res_indices[-1])
    if idx not in res_indices:
        raise RuleError(f"no result-variable update at index {idx}")
    update = j.update[:idx] + j.update[idx + 1:]
    return [Sequent(seq.gamma, Judgment(update, j.stmt, j.formula))]


def _rule_apply_eq_rigid(seq, args, ctx):
    j = _judgment(seq)
    gi = args.get("eq")
    if gi is None or not (0 <= gi < len(seq.gamma)):
        raise RuleError("ApplyEqRigid needs eq=<gamma index>")
    a = seq.gamma[gi]
    if not isinstance(a, PredAssert) or not isinstance(a.pred, Binary) \
            or a.pred.op != "==":
        raise RuleError("ApplyEqRigid expects an equality assumption")
    lhs, rhs = a.pred.left, a.pred.right
    if not isinstance(lhs, (Var, ResVar)):
        lhs, rhs = rhs, lhs
    if isinstance(lhs, Var):
        new_j = _subst_judgment_var(j, lhs.name, rhs)
    elif isinstance(lhs, ResVar):
        new_j = _subst_judgment_res(j, lhs.index, rhs)
    else:
        raise RuleError("equality must bind a variable or result variable")
    gamma = seq.gamma
    if args.get("drop"):
        gamma = gamma[:gi] + gamma[gi + 1:]
    return [Sequent(gamma, new_j)]


def _subst_judgment_res(j: Judgment, index: Expr, replacement: Expr) -> Judgment:
    def atom(a):
        if isinstance(a, Elem):
            return Elem(a.target, fold_expr(subst_res_expr(a.expr, index, replacement)))
        if isinstance(a, CallUpd):
            return CallUpd(a.target, a.proc,
                           fold_expr(subst_res_expr(a.arg, index, replacement)))
        return type(a)(a.proc, fold_expr(subst_res_expr(a.arg, index, replacement)),
                       a.call_id)

    def term(t):
        if isinstance(t, Fresh):
            return Fresh(term(t.arg))
        if isinstance(t, (Var, IntLit, BoolLit)):
            return t
        return subst_res_expr(t, index, replacement)

    def formula(f):
        if isinstance(f, StatePred):
            return StatePred(subst_res_expr(f.pred, index, replacement))
        if isinstance(f, NoEv):
            return f
        if isinstance(f, (StartEvF, FinishEvF)):
            return type(f)(f.proc, term(f.arg), term(f.call_id))
        if isinstance(f, (And, Or, Concat, Chop)):
            return type(f)(formula(f.left), formula(f.right))
        if isinstance(f, RecApp):
            return RecApp(f.name, tuple(term(a) for a in f.args))
        if isinstance(f, MuApp):
            return MuApp(f.mu, tuple(term(a) for a in f.args))
        return f

    stmt = j.stmt
    if stmt is not None:
        raise RuleError("result-variable equalities apply after execution finished")
    return Judgment(tuple(atom(a) for a in j.update), None, formula(j.formula))


def _event_formula_matches(atom, part, update_prefix) -> Optional[Expr]:
    """Equality side conditions when an event update meets its formula."""
    if isinstance(atom, StartUpd) and isinstance(part, StartEvF):
        pass
    elif isinstance(atom, FinishUpd) and isinstance(part, FinishEvF):
        pass
    else:
        return None
    if atom.proc != part.proc:
        return None
    if isinstance(part.arg, Fresh) or isinstance(part.call_id, Fresh):
        return None
    try:
        ae = apply_update_expr(update_prefix, atom.arg)
        ai = apply_update_expr(update_prefix, atom.call_id)
    except UpdateApplicationError:
        return None
    return Binary("&&", Binary("==", ae, part.arg), Binary("==", ai, part.call_id))


def _rule_elim_event(kind: str):
    upd_type = StartUpd if kind == "start" else FinishUpd
    fml_type = StartEvF if kind == "start" else FinishEvF
    label = "ElimStart" if kind == "start" else "ElimFinish"

    def rule(seq, args, ctx):
        j = _judgment(seq)
        if j.stmt is not None:
            raise RuleError(f"{label} applies after symbolic execution finished")
        if not j.update or not isinstance(j.update[-1], upd_type):
            raise RuleError(f"{label} expects a trailing event update")
        atom = j.update[-1]
        parts = flatten_chain(j.formula)
        if len(parts) >= 2 and parts[-1][0] == "**" and isinstance(parts[-1][1], fml_type):
            cond = _event_formula_matches(atom, parts[-1][1], j.update[:-1])
            if cond is None:
                raise RuleError(f"{label}: event update and formula do not align")
            return [Sequent(seq.gamma, PredGoal(cond)),
                    Sequent(seq.gamma, Judgment(j.update[:-1], None, _drop_last(parts)))]
        if len(parts) == 1 and isinstance(parts[0], fml_type) and len(j.update) == 1:
            cond = _event_formula_matches(atom, parts[0], ())
            if cond is None:
                raise RuleError(f"{label}: event update and formula do not align")
            return [Sequent(seq.gamma, PredGoal(cond))]
        raise RuleError(f"{label}: shape mismatch")

    return rule


def _rule_elim_update1(seq, args, ctx):
    j = _judgment(seq)
    if j.stmt is not None:
        raise RuleError("ElimUpdate1 applies after symbolic execution finished")
    if not j.update or not isinstance(j.update[-1], Elem) \
            or isinstance(j.update[-1].target, ResVar):
        raise RuleError("ElimUpdate1 expects a trailing elementary update")
    parts = flatten_chain(j.formula)
    if len(parts) < 2 or parts[-1][0] != ".." or not isinstance(parts[-1][1], StatePred):
        raise RuleError("ElimUpdate1 expects Phi .. [Q]")
    try:
        applied = apply_update_expr(j.update, parts[-1][1].pred)
    except UpdateApplicationError as e:
        raise RuleError(str(e)) from None
    return [Sequent(seq.gamma, Judgment(j.update[:-1], None, _drop_last(parts))),
            Sequent(seq.gamma, PredGoal(applied))]


def _atoms_outside(update: Update, exclude: frozenset) -> bool:
    for a in update:
        if isinstance(a, CallUpd):
            return False
        if isinstance(a, (StartUpd, FinishUpd)) and a.proc in exclude:
            return False
    return True


def _rule_subsume_updates(seq, args, ctx):
    j = _judgment(seq)
    if j.stmt is not None:
        raise RuleError("SubsumeUpdates applies after symbolic execution finished")
    parts = flatten_chain(j.formula)
    if len(parts) < 2 or parts[-1][0] != "**":
        raise RuleError("SubsumeUpdates expects a trailing chop gap")
    excl = is_psi(parts[-1][1])
    if excl is None:
        raise RuleError("SubsumeUpdates expects a trailing no-event gap")
    default_keep = 0
    for k, a in enumerate(j.update):
        if isinstance(a, (StartUpd, FinishUpd, CallUpd)):
            default_keep = k + 1
    keep = args.get("keep", default_keep)
    if not (0 <= keep <= len(j.update)):
        raise RuleError("keep out of range")
    dropped = j.update[keep:]
    if not _atoms_outside(dropped, excl):
        raise RuleError("dropped updates involve an excluded procedure")
    return [Sequent(seq.gamma, Judgment(j.update[:keep], None, _drop_last(parts)))]


def _rule_gap_axiom(seq, args, ctx):
    j = _judgment(seq)
    if j.stmt is not None:
        raise RuleError("GapAxiom applies after symbolic execution finished")
    excl = is_psi(j.formula)
    if excl is None:
        raise RuleError("GapAxiom expects a no-event gap formula")
    if not _atoms_outside(j.update, excl):
        raise RuleError("updates involve an excluded procedure")
    return []


# -- extension rules (suggestions; not part of the sound core) -------------

def _rule_prefix_ev(seq, args, ctx):
    j = _judgment(seq)
    if not j.update or not isinstance(j.update[0], (StartUpd, FinishUpd)):
        raise RuleError("PrefixEv expects a leading event update")
    parts = flatten_chain(j.formula)
    if len(parts) < 2:
        raise RuleError("PrefixEv expects ev ** Phi")
    head = parts[0]
    cond = _event_formula_matches(j.update[0], head, ())
    if cond is None:
        raise RuleError("PrefixEv: event update and formula do not align")
    verdict = fo.fo_valid(gamma_preds(seq), cond)
    if verdict.status != "valid":
        raise RuleError("PrefixEv: event arguments differ")
    return [Sequent(seq.gamma, Judgment(j.update[1:], j.stmt, _drop_first(parts)))]


def _rule_fte_prefix(seq, args, ctx):
    j = _judgment(seq)
    if not j.update or not isinstance(j.update[0], (StartUpd, FinishUpd)):
        raise RuleError("FiniteTraceEmptyPrefix expects a leading event update")
    parts = flatten_chain(j.formula)
    if len(parts) < 2:
        raise RuleError("FiniteTraceEmptyPrefix expects a leading gap")
    excl = is_psi(parts[0])
    if excl != frozenset({j.update[0].proc}):
        raise RuleError("gap exclusion must name the leading event's procedure")
    return [Sequent(seq.gamma, Judgment(j.update, j.stmt, _drop_first(parts)))]


def _rule_fte_postfix(seq, args, ctx):
    j = _judgment(seq)
    if j.stmt is not None:
        raise RuleError("FiniteTraceEmptyPostfix applies after execution finished")
    if not j.update or not isinstance(j.update[-1], (StartUpd, FinishUpd)):
        raise RuleError("FiniteTraceEmptyPostfix expects a trailing event update")
    parts = flatten_chain(j.formula)
    if len(parts) < 2 or parts[-1][0] != "**":
        raise RuleError("FiniteTraceEmptyPostfix expects a trailing gap")
    excl = is_psi(parts[-1][1])
    if excl != frozenset({j.update[-1].proc}):
        raise RuleError("gap exclusion must name the trailing event's procedure")
    return [Sequent(seq.gamma, Judgment(j.update, None, _drop_last(parts)))]


def _rule_composition(seq, args, ctx):
    j = _judgment(seq)
    k = args.get("at")
    fi = args.get("split")
    if k is None or fi is None:
        raise RuleError("Composition needs at=<update index> split=<chain index>")
    parts = flatten_chain(j.formula)
    if not (0 < fi < len(parts)) or parts[fi][0] != "**":
        raise RuleError("split must name a chop junction")
    if not (0 <= k <= len(j.update)):
        raise RuleError("update split out of range")
    phi1 = _rebuild(parts[:fi])
    phi2 = _rebuild([parts[fi][1]] + parts[fi + 1:])
    return [Sequent(seq.gamma, Judgment(j.update[:k], None, phi1)),
            Sequent(seq.gamma, Judgment(j.update[k:], j.stmt, phi2))]


CORE_RULES = {
    "Assign": _rule_assign,
    "Skip": _rule_skip,
    "Scope": _rule_scope,
    "VarDecl": _rule_var_decl,
    "Cond": _rule_cond,
    "Return": _rule_return,
    "Prestate": _rule_prestate,
    "Poststate": _rule_poststate,
    "EmptyUpdate": _rule_empty_update,
    "Unfold": _rule_unfold,
    "OrLeft": _rule_or("left"),
    "OrRight": _rule_or("right"),
    "AndSplit": _rule_and_split,
    "Close": _rule_close,
    "ProcedureContract": _rule_procedure_contract,
    "TrAbs": _rule_trabs,
    "ApplyUpdate": _rule_apply_update,
    "DropUpdate": _rule_drop_update,
    "DropResUpdate": _rule_drop_res_update,
    "ApplyEqRigid": _rule_apply_eq_rigid,
    "ElimStart": _rule_elim_event("start"),
    "ElimFinish": _rule_elim_event("finish"),
    "ElimUpdate1": _rule_elim_update1,
    "SubsumeUpdates": _rule_subsume_updates,
    "GapAxiom": _rule_gap_axiom,
}

EXTENSION_RULES = {
    "PrefixEv": _rule_prefix_ev,
    "FiniteTraceEmptyPrefix": _rule_fte_prefix,
    "FiniteTraceEmptyPostfix": _rule_fte_postfix,
    "Composition": _rule_composition,
}


def apply_rule(rule: str, seq: Sequent, args: Optional[dict],
               ctx: RuleContext) -> List[Sequent]:
    """Fully instantiated premises of one rule application.

    Rules that invent data (fresh witness symbols) record it in args, so
    the caller's dict is used in place when one is given.
    """
    handler = CORE_RULES.get(rule)
    if handler is None:
        if rule in EXTENSION_RULES:
            if not ctx.extensions:
                raise RuleError(f"rule {rule} requires --extensions")
            handler = EXTENSION_RULES[rule]
        else:
            raise RuleError(f"unknown rule {rule!r}")
    return handler(seq, args if args is not None else {}, ctx)


# ---------------------------------------------------------------------------
# Automated proving
# ---------------------------------------------------------------------------

class _Budget:
    def __init__(self, nodes: int):
        self.nodes = nodes

    def take(self) -> bool:
        self.nodes -= 1
        return self.nodes >= 0


def _attempt(rule: str, seq: Sequent, args: dict, ctx: RuleContext,
             budget: _Budget) -> ProofNode:
    try:
        premises = apply_rule(rule, seq, args, ctx)
    except RuleError:
        return ProofNode(seq)
    children = [_solve(p, ctx, budget) for p in premises]
    return ProofNode(seq, rule, args, children)


def _leading_pred(f: Formula) -> Optional[Expr]:
    parts = flatten_chain(f)
    head = parts[0]
    return head.pred if isinstance(head, StatePred) else None


def _solve(seq: Sequent, ctx: RuleContext, budget: _Budget) -> ProofNode:
    if not budget.take():
        return ProofNode(seq)
    goal = seq.goal

    if isinstance(goal, ContractGoal):
        return _attempt("ProcedureContract", seq, {}, ctx, budget)

    if isinstance(goal, PredGoal):
        try:
            apply_rule("Close", seq, {}, ctx)
            return ProofNode(seq, "Close", {}, [])
        except RuleError:
            return ProofNode(seq)

    j: Judgment = goal
    if j.stmt is not None:
        head, _ = stmt_head(j.stmt)
        if isinstance(head, While):
            raise UnsupportedConstruct("no calculus rule covers while loops")
        rule = {
            Skip: "Skip",
            Assign: "Assign",
            CallAssign: "Assign",
            If: "Cond",
            Return: "Return",
        }.get(type(head))
        if isinstance(head, Scope):
            rule = "VarDecl" if head.decls else "Scope"
        if rule is None:
            return ProofNode(seq)
        return _attempt(rule, seq, {}, ctx, budget)

    formula = j.formula
    has_call = any(isinstance(a, CallUpd) for a in j.update)

    if is_psi(formula) is not None:
        attempt = _attempt("GapAxiom", seq, {}, ctx, budget)
        if attempt.closed:
            return attempt
    if isinstance(formula, Mu) and not formula.params:
        formula = MuApp(formula, ())
    if isinstance(formula, MuApp):
        if has_call:
            step = _pre_call_simplification(seq, j)
            if step is not None:
                return _attempt(step[0], seq, step[1], ctx, budget)
        return _attempt("Unfold", seq, {}, ctx, budget)

    if isinstance(formula, Or):
        order = []
        left_pred = _leading_pred(formula.left)
        right_pred = _leading_pred(formula.right)
        preds = gamma_preds(seq)
        left_ok = left_pred is not None and bool(fo.fo_valid(preds, left_pred))
        right_ok = right_pred is not None and bool(fo.fo_valid(preds, right_pred))
        if left_ok and not right_ok:
            order = ["OrLeft"]
        elif right_ok and not left_ok:
            order = ["OrRight"]
        else:
            order = ["OrLeft", "OrRight"]
        first = None
        for rule in order:
            attempt = _attempt(rule, seq, {}, ctx, budget)
            if attempt.closed:
                return attempt
            first = first or attempt
        return first

    if isinstance(formula, And):
        return _attempt("AndSplit", seq, {}, ctx, budget)

    parts = flatten_chain(formula)
    has_occurrence = any(
        isinstance(p[1] if isinstance(p, tuple) else p, (MuApp, RecApp))
        for p in parts) and len(parts) > 1
    if has_call and has_occurrence:
        return _attempt("TrAbs", seq, {}, ctx, budget)

    if any(is_res_elem(a) for a in j.update):
        return _attempt("DropResUpdate", seq, {}, ctx, budget)

    if len(parts) == 1:
        lone = parts[0]
        if isinstance(lone, StatePred) and not j.update:
            return _attempt("EmptyUpdate", seq, {}, ctx, budget)
        if is_psi(lone) is not None:
            return _attempt("GapAxiom", seq, {}, ctx, budget)
        if isinstance(lone, StartEvF) and len(j.update) == 1:
            return _attempt("ElimStart", seq, {}, ctx, budget)
        if isinstance(lone, FinishEvF) and len(j.update) == 1:
            return _attempt("ElimFinish", seq, {}, ctx, budget)
        return ProofNode(seq)

    if isinstance(parts[0], StatePred) and parts[1][0] == "**":
        return _attempt("Prestate", seq, {}, ctx, budget)
    last_op, last = parts[-1]
    if isinstance(last, StatePred) and last_op == "**":
        return _attempt("Poststate", seq, {}, ctx, budget)
    if isinstance(last, StatePred) and last_op == ".." and j.update \
            and isinstance(j.update[-1], Elem) and not is_res_elem(j.update[-1]):
        return _attempt("ElimUpdate1", seq, {}, ctx, budget)
    if isinstance(last, FinishEvF) and j.update and isinstance(j.update[-1], FinishUpd):
        return _attempt("ElimFinish", seq, {}, ctx, budget)
    if isinstance(last, StartEvF) and j.update and isinstance(j.update[-1], StartUpd):
        return _attempt("ElimStart", seq, {}, ctx, budget)
    if is_psi(last) is not None and last_op == "**":
        return _attempt("SubsumeUpdates", seq, {}, ctx, budget)
    return ProofNode(seq)


def _pre_call_simplification(seq: Sequent, j: Judgment):
    """Normalize elementary updates before unfolding at a call goal."""
    for k, a in enumerate(j.update):
        if isinstance(a, Elem) and isinstance(a.target, Var):
            v = a.target.name
            e_vars = expr_vars(a.expr)
            if v in e_vars:
                continue
            read_later = False
            for later in j.update[k + 1:]:
                if v in update_reads(later):
                    read_later = True
                    break
                written = update_writes(later)
                if written == v or written in e_vars:
                    break
            if read_later:
                return ("ApplyUpdate", {"at": k})
    for k, a in enumerate(j.update):
        if isinstance(a, Elem) and isinstance(a.target, Var):
            v = a.target.name
            dead = False
            blocked = False
            for later in j.update[k + 1:]:
                if v in update_reads(later):
                    blocked = True
                    break
                if update_writes(later) == v:
                    dead = True
                    break
            if blocked:
                continue
            if not dead:
                if (j.stmt is not None and v in _stmt_names(j.stmt)) or \
                        v in _formula_names(j.formula):
                    continue
            return ("DropUpdate", {"at": k})
    return None


def prove_auto(seq: Sequent, ctx: RuleContext, max_nodes: int = 50_000) -> ProofNode:
    """Strategy-driven search; the returned tree may contain open goals."""
    return _solve(seq, ctx, _Budget(max_nodes))


def contract_goal(proc: str) -> Sequent:
    return Sequent((), ContractGoal(proc))


# ---------------------------------------------------------------------------
# Proof checking (independent replay)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InvalidStep:
    path: tuple
    reason: str

    def __str__(self):
        where = "/".join(str(p) for p in self.path) or "root"
        return f"invalid step at {where}: {self.reason}"


def check_proof(node: ProofNode, ctx: RuleContext,
                path: tuple = ()) -> Optional[InvalidStep]:
    """Replay every node via apply_rule; None means the proof is valid."""
    if node.rule is None:
        return InvalidStep(path, "open goal")
    try:
        premises = apply_rule(node.rule, node.sequent, node.args, ctx)
    except RuleError as e:
        return InvalidStep(path, f"{node.rule}: {e}")
    if len(premises) != len(node.children):
        return InvalidStep(path, f"{node.rule}: expected {len(premises)} premises, "
                                 f"recorded {len(node.children)}")
    for k, (premise, child) in enumerate(zip(premises, node.children)):
        if not sequent_equal(premise, child.sequent):
            return InvalidStep(path + (k,),
                               f"premise mismatch under {node.rule}: "
                               f"expected {premise!r}, recorded {child.sequent!r}")
        bad = check_proof(child, ctx, path + (k,))
        if bad is not None:
            return bad
    return None


# ---------------------------------------------------------------------------
# Concrete syntax for sequent components
# ---------------------------------------------------------------------------

def parse_update(text: str) -> Update:
    ts = TokenStream(tokenize(text))
    atoms: List[UpdateAtom] = []
    while ts.at_sym("{"):
        ts.next()
        tok = ts.peek()
        if tok.kind == "ident" and tok.text in ("startEv", "finishEv"):
            ts.next()
            ts.expect_sym("(")
            proc = ts.expect_ident().text
            ts.expect_sym(",")
            arg = parse_expr(ts, allow_res=True)
            ts.expect_sym(",")
            cid = parse_expr(ts, allow_res=True)
            ts.expect_sym(")")
            atoms.append(StartUpd(proc, arg, cid) if tok.text == "startEv"
                         else FinishUpd(proc, arg, cid))
        else:
            if tok.kind == "ident" and tok.text == "res":
                ts.next()
                ts.expect_sym("(")
                idx = parse_expr(ts, allow_res=True)
                ts.expect_sym(")")
                target: Union[Var, ResVar] = ResVar(idx)
            else:
                target = Var(ts.expect_ident().text)
            ts.expect_sym(":=")
            if ts.at_ident() and ts.peek().text not in ("res",) and \
                    ts.peek(1).kind == "sym" and ts.peek(1).text == "(":
                proc = ts.next().text
                ts.expect_sym("(")
                arg = parse_expr(ts, allow_res=True)
                ts.expect_sym(")")
                if not isinstance(target, Var):
                    raise ParseError("call updates assign to plain variables",
                                     tok.line, tok.col)
                atoms.append(CallUpd(target, proc, arg))
            else:
                atoms.append(Elem(target, parse_expr(ts, allow_res=True)))
        ts.expect_sym("}")
    if ts.peek().kind != "eof":
        ts.error("trailing input after update")
    return tuple(atoms)


def _parse_stmt_perm(ts: TokenStream) -> Stmt:
    """Permissive statement grammar for proof sequents (res targets etc.)."""
    items: List[Stmt] = []
    while True:
        tok = ts.peek()
        if tok.kind == "eof" or ts.at_sym("}"):
            break
        if ts.at_ident("skip"):
            ts.next()
            items.append(Skip())
        elif ts.at_ident("return"):
            ts.next()
            items.append(Return(parse_expr(ts, allow_res=True)))
        elif ts.at_ident("if") or ts.at_ident("while"):
            kw = ts.next().text
            ts.expect_sym("(")
            cond = parse_expr(ts, allow_res=True, allow_bool=True)
            ts.expect_sym(")")
            ts.expect_sym("{")
            body = _parse_stmt_perm(ts)
            ts.expect_sym("}")
            items.append(If(cond, body) if kw == "if" else While(cond, body))
        elif ts.at_sym("{"):
            ts.next()
            decls = []
            while ts.at_ident() and \
                    ts.peek().text not in ("skip", "if", "while", "return", "res") and \
                    ts.peek(1).kind == "sym" and ts.peek(1).text == ";":
                decls.append(ts.next().text)
                ts.next()
            body = _parse_stmt_perm(ts)
            ts.expect_sym("}")
            items.append(Scope(tuple(decls), body))
        elif tok.kind == "ident":
            if tok.text == "res":
                ts.next()
                ts.expect_sym("(")
                idx = parse_expr(ts, allow_res=True)
                ts.expect_sym(")")
                ts.expect_sym("=")
                items.append(Assign(ResVar(idx), parse_expr(ts, allow_res=True)))
            else:
                name = ts.next().text
                ts.expect_sym("=")
                if ts.at_ident() and ts.peek().text != "res" and \
                        ts.peek(1).kind == "sym" and ts.peek(1).text == "(":
                    proc = ts.next().text
                    ts.expect_sym("(")
                    arg = parse_expr(ts, allow_res=True)
                    ts.expect_sym(")")
                    items.append(CallAssign(Var(name), proc, arg))
                else:
                    items.append(Assign(Var(name), parse_expr(ts, allow_res=True)))
        else:
            ts.error(f"expected statement, found {tok.text!r}")
        if ts.at_sym(";"):
            while ts.at_sym(";"):
                ts.next()
        elif not (ts.at_sym("}") or ts.peek().kind == "eof"):
            ts.error("expected ';' between statements")
    if not items:
        return Skip()
    out = items[-1]
    for s in reversed(items[:-1]):
        out = Seq(s, out)
    return out


def parse_stmt_text(text: str) -> Stmt:
    ts = TokenStream(tokenize(text))
    s = _parse_stmt_perm(ts)
    if ts.peek().kind != "eof":
        ts.error("trailing input after statement")
    return s


def pretty_stmt_line(s: Stmt) -> str:
    return str(s)


# ---------------------------------------------------------------------------
# Proof serialization (.proof.json)
# ---------------------------------------------------------------------------

def assertion_to_json(a: Assertion):
    if isinstance(a, PredAssert):
        return {"pred": pretty_expr(a.pred)}
    return {"contract": a.proc}


def assertion_from_json(obj, ctx: RuleContext) -> Assertion:
    if "pred" in obj:
        ts = TokenStream(tokenize(obj["pred"]))
        pred = parse_expr(ts, allow_res=True, allow_bool=True)
        if ts.peek().kind != "eof":
            ts.error("trailing input in assertion")
        return PredAssert(pred)
    proc = obj["contract"]
    if proc not in ctx.contracts:
        raise RuleError(f"proof references unknown contract {proc!r}")
    return ctx.contracts[proc]


def goal_to_json(g: Goal):
    if isinstance(g, Judgment):
        return {"kind": "judgment",
                "update": pretty_update(g.update),
                "stmt": None if g.stmt is None else str(g.stmt),
                "formula": pretty_formula(g.formula)}
    if isinstance(g, PredGoal):
        return {"kind": "pred", "pred": pretty_expr(g.pred)}
    return {"kind": "contract", "proc": g.proc}


def goal_from_json(obj, ctx: RuleContext) -> Goal:
    kind = obj["kind"]
    if kind == "judgment":
        update = parse_update(obj["update"])
        stmt = None if obj["stmt"] is None else parse_stmt_text(obj["stmt"])
        formula = parse_formula(obj["formula"])
        return Judgment(update, stmt, formula)
    if kind == "pred":
        ts = TokenStream(tokenize(obj["pred"]))
        pred = parse_expr(ts, allow_res=True, allow_bool=True)
        return PredGoal(pred)
    return ContractGoal(obj["proc"])


def node_to_json(node: ProofNode):
    return {"sequent": {"gamma": [assertion_to_json(a) for a in node.sequent.gamma],
                        "goal": goal_to_json(node.sequent.goal)},
            "rule": node.rule,
            "args": node.args,
            "children": [node_to_json(c) for c in node.children]}


def node_from_json(obj, ctx: RuleContext) -> ProofNode:
    seq = Sequent(tuple(assertion_from_json(a, ctx) for a in obj["sequent"]["gamma"]),
                  goal_from_json(obj["sequent"]["goal"], ctx))
    children = [node_from_json(c, ctx) for c in obj["children"]]
    return ProofNode(seq, obj["rule"], obj.get("args") or {}, children)


def dump_proof(node: ProofNode, proc: str) -> str:
    doc = {"format": "tracelet-proof", "version": 1, "proc": proc,
           "closed": node.closed, "root": node_to_json(node)}
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def load_proof(text: str, ctx: RuleContext):
    doc = json.loads(text)
    if doc.get("format") != "tracelet-proof":
        raise RuleError("not a tracelet proof file")
    return doc.get("proc"), node_from_json(doc["root"], ctx)


# ---------------------------------------------------------------------------
# Proof scripts (.tps): one rule application per line
# ---------------------------------------------------------------------------

class ScriptError(Exception):
    pass


def parse_script(text: str):
    steps = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("//")[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 3 or parts[1] != "@":
            raise ScriptError(f"line {lineno}: expected 'rule @ goal-index [key=value ...]'")
        rule = parts[0]
        try:
            idx = int(parts[2])
        except ValueError:
            raise ScriptError(f"line {lineno}: goal index must be an integer") from None
        args = {}
        for kv in parts[3:]:
            if "=" not in kv:
                raise ScriptError(f"line {lineno}: malformed argument {kv!r}")
            key, val = kv.split("=", 1)
            try:
                args[key] = int(val)
            except ValueError:
                args[key] = val
        steps.append((lineno, rule, idx, args))
    return steps


def run_script(root_seq: Sequent, ctx: RuleContext, text: str) -> ProofNode:
    root = ProofNode(root_seq)
    for lineno, rule, idx, args in parse_script(text):
        goals = root.open_goals()
        if not (0 <= idx < len(goals)):
            raise ScriptError(f"line {lineno}: goal index {idx} out of range "
                              f"({len(goals)} open)")
        node = goals[idx]
        try:
            premises = apply_rule(rule, node.sequent, args, ctx)
        except RuleError as e:
            raise ScriptError(f"line {lineno}: {rule} failed: {e}\n"
                              f"  goal: {node.sequent!r}") from None
        node.rule = rule
        node.args = args
        node.children = [ProofNode(p) for p in premises]
    return root
