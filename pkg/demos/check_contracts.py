"""Trace membership in recursive contracts.

The contract template for a procedure m pins down every admissible
trace of a call: a base case without recursion, and a step case whose
recursive call is covered by the fixed-point variable.  Membership of a
concrete finite trace is decidable; this script checks the running
example's traces against its contract and the classic pre/post
weakening.
"""

from tracelet.interp import run
from tracelet.lang import Binary, IntLit, ResVar, Var, parse_program
from tracelet.logic import (Chop, ContractSpec, MuApp, StatePred, big_step_of,
                            make_contract, member, pretty_formula)
from tracelet.traces import Trace

SOURCE = """
m(k) {
  r;
  if (k != 0) { r = m(k - 1); r = r + 1 };
  return r
}

main { x; x = m(3) }
"""

# pre_base: n == 0, pre_step: n > 0, result n, recursive argument n - 1
spec = ContractSpec("m",
                    Binary("==", Var("n"), IntLit(0)),
                    Binary(">", Var("n"), IntLit(0)),
                    Var("n"),
                    Binary("-", Var("n"), IntLit(1)))
contract = make_contract(spec)
print("=== the contract ===")
print(pretty_formula(contract))

# the full claim: the call's trace satisfies the contract and leaves
# res_i equal to the computed function of n
claim = Chop(MuApp(contract, (Var("n"), Var("i"))),
             StatePred(Binary("==", ResVar(Var("i")), Var("n"))))

trace = run(parse_program(SOURCE))
core = Trace(trace.entries[:-1])  # drop main's trailing x-assignment

print("\n=== membership of the m(3) call trace ===")
for n in (3, 2, 4):
    verdict = member(core, claim, {"n": n, "i": 0})
    print(f"  n = {n}: {'member' if verdict else 'not a member'}")

print("\n=== the big-step weakening ===")
big = big_step_of(spec)
print(pretty_formula(big))
print(f"  n = 3: {'member' if member(core, big, {'n': 3, 'i': 0}) else 'not a member'}")
print("\nEvery trace in the recursive contract also satisfies the"
      "\npre/post weakening; the converse fails, because the weakening"
      "\nsays nothing about the recursive call structure.")
