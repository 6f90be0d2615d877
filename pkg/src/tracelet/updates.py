"""Update atoms: explicit substitutions accumulated by symbolic execution.

An update is a sequence of atoms; the empty sequence is the identity.
Elementary atoms assign an expression (or a procedure call) to a
variable; event atoms record a startEv/finishEv occurrence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

from .lang import (Expr, ResVar, Var, expr_vars, fold_expr, subst_expr,
                   subst_res_expr)
from .traces import Ctx, MAIN_CTX, MalformedNesting


@dataclass(frozen=True)
class Elem:
    target: Union[Var, ResVar]
    expr: Expr

    def __repr__(self):
        return f"{{{self.target} := {self.expr}}}"


@dataclass(frozen=True)
class CallUpd:
    target: Var
    proc: str
    arg: Expr

    def __repr__(self):
        return f"{{{self.target} := {self.proc}({self.arg})}}"


@dataclass(frozen=True)
class StartUpd:
    proc: str
    arg: Expr
    call_id: Expr

    def __repr__(self):
        return f"{{startEv({self.proc},{self.arg},{self.call_id})}}"


@dataclass(frozen=True)
class FinishUpd:
    proc: str
    arg: Expr
    call_id: Expr

    def __repr__(self):
        return f"{{finishEv({self.proc},{self.arg},{self.call_id})}}"


UpdateAtom = Union[Elem, CallUpd, StartUpd, FinishUpd]
Update = Tuple[UpdateAtom, ...]


class UpdateApplicationError(Exception):
    pass


def is_res_elem(atom) -> bool:
    return isinstance(atom, Elem) and isinstance(atom.target, ResVar)


def apply_update_expr(update: Update, e: Expr, fold: bool = True) -> Expr:
    """Evaluate e under the state changes of the update, by substitution.

    Atoms apply from inner- to outermost (rightmost first).  Elementary
    res-assignments are runtime no-ops and are skipped; finishEv atoms
    bind their res-variable.  A call update whose target occurs in the
    expression cannot be substituted away.
    """
    for atom in reversed(update):
        if isinstance(atom, Elem):
            if isinstance(atom.target, ResVar):
                continue
            e = subst_expr(e, atom.target.name, atom.expr)
        elif isinstance(atom, CallUpd):
            if atom.target.name in expr_vars(e):
                raise UpdateApplicationError(
                    f"expression reads {atom.target.name!r}, assigned by a call update")
        elif isinstance(atom, FinishUpd):
            e = subst_res_expr(e, atom.call_id, atom.arg)
        # StartUpd: identity on expressions
    return fold_expr(e) if fold else e


def curr_ctx_update(update: Update) -> Ctx:
    """Innermost startEv not yet closed by its matching finishEv."""
    stack = []
    for atom in update:
        if isinstance(atom, StartUpd):
            stack.append(atom)
        elif isinstance(atom, FinishUpd):
            if not stack or stack[-1].proc != atom.proc or \
                    stack[-1].call_id != atom.call_id:
                raise MalformedNesting(
                    f"finishEv({atom.proc},_,{atom.call_id}) without matching startEv")
            stack.pop()
    if not stack:
        return MAIN_CTX
    top = stack[-1]
    return Ctx(top.proc, top.call_id)


def update_reads(atom) -> set:
    """Variable names an atom's right-hand side reads."""
    if isinstance(atom, Elem):
        return expr_vars(atom.expr) | expr_vars(atom.target.index) \
            if isinstance(atom.target, ResVar) else expr_vars(atom.expr)
    if isinstance(atom, CallUpd):
        return expr_vars(atom.arg)
    return expr_vars(atom.arg) | expr_vars(atom.call_id)


def update_writes(atom) -> Optional[str]:
    if isinstance(atom, (Elem, CallUpd)) and isinstance(atom.target, Var):
        return atom.target.name
    return None


def pretty_update(update: Update) -> str:
    return "".join(repr(a) for a in update)
