"""Command-line surface: run, adequacy, check, gen-contract, prove,
check-proof, validate.

Exit codes are a total function of the verdict class:
  0 success / member / adequate / closed proof / validation pass
  1 usage or input error
  2 fuel exhausted
  3 trace is not a member
  4 proof has open goals
  5 validation failed
  6 trace inadequate
  7 proof rejected by the checker
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
from dataclasses import dataclass, field
from typing import List, Optional

from .calculus import (ContractAssumption, ProofNode, RuleContext, ScriptError,
                       UnsupportedConstruct, apply_rule, check_proof,
                       contract_goal, dump_proof, load_proof, prove_auto,
                       run_script, RuleError)
from .interp import DEFAULT_FUEL, FuelExhausted, RunError, initial_state, run
from .lang import (CallAssign, IntLit, ParseError, Program, Var,
                   parse_program, well_formed)
from .logic import (Chop, ContractSpec, LogicError, MuApp, StatePred,
                    applied, big_step_of, contract_file_text, flatten_chain,
                    is_psi, make_contract, member, parse_contract_file,
                    pretty_formula)
from .lang import Binary, ResVar, TokenStream, parse_expr, tokenize
from .traces import (State, Trace, dump_trace, eval_expr, is_adequate,
                     load_trace)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FUEL = 2
EXIT_NOT_MEMBER = 3
EXIT_OPEN_PROOF = 4
EXIT_VALIDATION_FAILED = 5
EXIT_INADEQUATE = 6
EXIT_PROOF_REJECTED = 7


class CliError(Exception):
    pass


def _read(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as e:
        raise CliError(str(e)) from None


def _write(path: str, text: str):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _load_program(path: str) -> Program:
    program = parse_program(_read(path))
    diags = well_formed(program)
    if diags:
        raise CliError("program is not well-formed:\n" +
                       "\n".join(f"  {d}" for d in diags))
    return program


def _parse_bindings(pairs: List[str]) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise CliError(f"binding {pair!r} is not name=value")
        name, value = pair.split("=", 1)
        try:
            out[name] = int(value)
        except ValueError:
            raise CliError(f"binding {pair!r}: value must be an integer") from None
    return out


def _fuel(args) -> int:
    if args.fuel is not None:
        return args.fuel
    env = os.environ.get("TRACELET_FUEL")
    if env:
        try:
            return int(env)
        except ValueError:
            raise CliError("TRACELET_FUEL must be an integer") from None
    return DEFAULT_FUEL


def _contracts_from_file(path: str):
    cf = parse_contract_file(_read(path))
    return cf


def _assumption(cf, proc: str) -> ContractAssumption:
    if proc not in cf.specs:
        raise CliError(f"contract file has no 'spec {proc} {{ ... }}' block; "
                       "proving and validation need the template fields")
    return ContractAssumption.from_spec(cf.specs[proc])


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    program = _load_program(args.program)
    overrides = _parse_bindings(args.state or [])
    try:
        state = initial_state(program, overrides)
    except RunError as e:
        raise CliError(str(e)) from None
    try:
        trace = run(program, state, fuel=_fuel(args))
    except FuelExhausted:
        print("fuel exhausted before termination", file=sys.stderr)
        return EXIT_FUEL
    except RunError as e:
        raise CliError(str(e)) from None
    text = dump_trace(trace)
    if args.output:
        _write(args.output, text)
        print(f"wrote {args.output} ({len(trace.entries)} entries)")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# adequacy
# ---------------------------------------------------------------------------

def cmd_adequacy(args) -> int:
    trace = load_trace(_read(args.trace))
    verdict = is_adequate(trace, strict=not args.lenient)
    if args.json:
        print(json.dumps({"adequate": verdict.adequate, "clause": verdict.clause,
                          "position": verdict.position, "reason": verdict.reason}))
    elif verdict:
        print("adequate")
    else:
        print(f"inadequate: clause {verdict.clause} at entry {verdict.position}: "
              f"{verdict.reason}")
    return EXIT_OK if verdict else EXIT_INADEQUATE


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------

def _explain_failure(trace: Trace, formula, env) -> str:
    parts = flatten_chain(formula)
    if len(parts) < 2:
        return f"trace is not in the denotation of {pretty_formula(formula)}"
    # walk the chop chain, tracking reachable shared-state positions
    from .logic import _Member
    checker = _Member(trace, 500_000)
    positions = {0}
    first = parts[0]
    labels = [pretty_formula(first)] + [pretty_formula(p) for _, p in parts[1:]]
    elems = [first] + [p for _, p in parts[1:]]
    from .traces import is_state
    n = len(trace.entries)
    for k, elem in enumerate(elems):
        reachable = set()
        is_last = k == len(elems) - 1
        for lo in positions:
            if is_last:
                if checker.sat(elem, lo, n, dict(env), {}):
                    reachable.add(n)
            else:
                for j in range(lo, n):
                    if not is_state(trace.entries[j]):
                        continue
                    if checker.sat(elem, lo, j + 1, dict(env), {}):
                        reachable.add(j)
        if not reachable:
            return f"no match for chain element #{k + 1}: {labels[k]}"
        positions = reachable
    return "all chain elements match individually but no global split works"


def cmd_check(args) -> int:
    trace = load_trace(_read(args.trace))
    cf = _contracts_from_file(args.formula)
    name = args.contract
    if name is None:
        if len(cf.contracts) == 1:
            name = next(iter(cf.contracts))
        else:
            raise CliError("multiple contracts in file; pick one with --contract")
    if name not in cf.contracts:
        raise CliError(f"no contract named {name!r} in {args.formula}")
    params, formula = cf.contracts[name]
    env = _parse_bindings(args.bind or [])
    missing = [p for p in params if p not in env]
    if missing:
        raise CliError(f"missing --bind for parameters: {', '.join(missing)}")
    formula = applied(formula, params)
    try:
        ok = member(trace, formula, env)
    except LogicError as e:
        raise CliError(str(e)) from None
    if args.json:
        print(json.dumps({"member": ok, "contract": name, "bindings": env}))
    elif ok:
        print("member")
    else:
        print("not a member: " + _explain_failure(trace, formula, env))
    return EXIT_OK if ok else EXIT_NOT_MEMBER


# ---------------------------------------------------------------------------
# gen-contract
# ---------------------------------------------------------------------------

def _parse_pred_arg(text: str):
    ts = TokenStream(tokenize(text))
    e = parse_expr(ts, allow_res=True, allow_bool=True)
    if ts.peek().kind != "eof":
        ts.error("trailing input in predicate")
    return e


def cmd_gen_contract(args) -> int:
    spec = ContractSpec(args.proc,
                        _parse_pred_arg(args.pre_base),
                        _parse_pred_arg(args.pre_step),
                        _parse_pred_arg(args.result),
                        _parse_pred_arg(args.step_inv))
    text = contract_file_text(spec, include_big_step=not args.no_big_step)
    if args.output:
        _write(args.output, text)
        print(f"wrote {args.output}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# prove
# ---------------------------------------------------------------------------

def _repl(root_seq, ctx) -> ProofNode:
    root = ProofNode(root_seq)
    print("interactive proof mode; commands: goals | show N | RULE @ N [k=v ...] "
          "| auto | done")
    while True:
        goals = root.open_goals()
        if not goals:
            print("proof closed.")
            return root
        try:
            line = input(f"[{len(goals)} open]> ").strip()
        except EOFError:
            return root
        if not line:
            continue
        if line in ("done", "quit", "exit"):
            return root
        if line == "goals":
            for k, g in enumerate(goals):
                print(f"  {k}: {g.sequent!r}")
            continue
        if line.startswith("show"):
            try:
                k = int(line.split()[1])
                print(repr(goals[k].sequent))
            except (IndexError, ValueError):
                print("usage: show N")
            continue
        if line == "auto":
            for g in goals:
                sub = prove_auto(g.sequent, ctx)
                if sub.closed:
                    g.rule, g.args, g.children = sub.rule, sub.args, sub.children
            continue
        try:
            steps = f"{line}"
            from .calculus import parse_script
            parsed = parse_script(steps)
            for _, rule, idx, rargs in parsed:
                node = root.open_goals()[idx]
                premises = apply_rule(rule, node.sequent, rargs, ctx)
                node.rule, node.args = rule, rargs
                node.children = [ProofNode(p) for p in premises]
        except (ScriptError, RuleError, IndexError) as e:
            print(f"error: {e}")


def cmd_prove(args) -> int:
    program = _load_program(args.program)
    cf = _contracts_from_file(args.contracts)
    proc = args.proc or (next(iter(cf.specs)) if len(cf.specs) == 1 else None)
    if proc is None:
        raise CliError("pick a procedure with --proc")
    assumptions = [ContractAssumption.from_spec(s) for s in cf.specs.values()]
    if proc not in {a.proc for a in assumptions}:
        raise CliError(f"no spec block for procedure {proc!r}")
    ctx = RuleContext.for_program(program, assumptions, extensions=args.extensions)
    goal = contract_goal(proc)
    try:
        if args.script:
            tree = run_script(goal, ctx, _read(args.script))
        elif args.repl:
            tree = _repl(goal, ctx)
        else:
            tree = prove_auto(goal, ctx, max_nodes=args.max_nodes)
    except UnsupportedConstruct as e:
        raise CliError(f"unsupported construct: {e}") from None
    except ScriptError as e:
        raise CliError(str(e)) from None
    out = args.output or f"{proc}.proof.json"
    _write(out, dump_proof(tree, proc))
    if tree.closed:
        print(f"closed proof ({tree.size()} nodes), wrote {out}")
        return EXIT_OK
    print(f"proof has {len(tree.open_goals())} open goals, wrote {out}")
    for g in tree.open_goals()[:10]:
        print(f"  open: {g.sequent!r}")
    return EXIT_OPEN_PROOF


def cmd_check_proof(args) -> int:
    program = _load_program(args.program)
    cf = _contracts_from_file(args.contracts)
    assumptions = [ContractAssumption.from_spec(s) for s in cf.specs.values()]
    ctx = RuleContext.for_program(program, assumptions, extensions=args.extensions)
    try:
        proc, tree = load_proof(_read(args.proof), ctx)
    except (RuleError, ParseError, LogicError, json.JSONDecodeError) as e:
        raise CliError(f"cannot load proof: {e}") from None
    bad = check_proof(tree, ctx)
    if bad is None:
        print(f"proof of {proc} is valid ({tree.size()} nodes)")
        return EXIT_OK
    print(f"proof rejected: {bad}")
    return EXIT_PROOF_REJECTED


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

@dataclass
class SampleResult:
    n: int
    seed: int
    verdict: str
    result_ok: bool
    member_ok: bool
    trace_file: Optional[str] = None


@dataclass
class ValidationReport:
    contract: str
    samples: List[SampleResult] = field(default_factory=list)
    overall: str = "pass"
    counterexample: Optional[dict] = None
    note: str = ""

    def to_json(self) -> dict:
        return {
            "contract": self.contract,
            "overall": self.overall,
            "note": self.note,
            "counterexample": self.counterexample,
            "samples": [
                {"n": s.n, "seed": s.seed, "verdict": s.verdict,
                 "result_ok": s.result_ok, "member_ok": s.member_ok,
                 "trace": s.trace_file}
                for s in self.samples
            ],
        }


def validate_contract(program: Program, assumption: ContractAssumption,
                      lo: int, hi: int, samples: int, seed: int,
                      fuel: int = DEFAULT_FUEL,
                      trace_dir: Optional[str] = None) -> ValidationReport:
    """Run the procedure concretely and check trace membership per sample."""
    report = ValidationReport(contract=assumption.proc)
    env_pre = lambda v: bool(eval_expr(State({}), assumption.pre, {"n": v}))
    candidates = [v for v in range(lo, hi + 1) if env_pre(v)]
    if not candidates:
        report.note = "no parameter value in range satisfies the precondition"
        return report
    if samples >= len(candidates):
        chosen = candidates
    else:
        rng = random.Random(seed)
        chosen = sorted(rng.sample(candidates, samples))
    phi = Chop(MuApp(assumption.phi, (Var("n"), Var("i"))),
               StatePred(Binary("==", ResVar(Var("i")), assumption.result)))
    for v in chosen:
        harness = Program(program.procs, ("x",),
                          CallAssign(Var("x"), assumption.proc, IntLit(v)))
        verdict = "pass"
        result_ok = member_ok = False
        trace_file = None
        try:
            trace = run(harness, fuel=fuel)
            expected = eval_expr(State({}), assumption.result, {"n": v})
            result_ok = trace.last().get("x") == expected
            core = Trace(trace.entries[:-1])
            member_ok = member(core, phi, {"n": v, "i": 0})
            if trace_dir:
                trace_file = os.path.join(trace_dir, f"{assumption.proc}_{v}.trace.json")
                _write(trace_file, dump_trace(trace))
        except FuelExhausted:
            verdict = "fuel-exhausted"
        if verdict == "pass" and not (result_ok and member_ok):
            verdict = "fail"
        report.samples.append(SampleResult(v, seed, verdict, result_ok,
                                           member_ok, trace_file))
        if verdict != "pass" and report.overall == "pass":
            report.overall = "fail"
            report.counterexample = {"program": assumption.proc, "n": v, "seed": seed}
    return report


def cmd_validate(args) -> int:
    program = _load_program(args.program)
    cf = _contracts_from_file(args.contracts)
    proc = args.proc or (next(iter(cf.specs)) if len(cf.specs) == 1 else None)
    if proc is None:
        raise CliError("pick a procedure with --proc")
    assumption = _assumption(cf, proc)
    if not args.no_proof:
        if not args.proof:
            raise CliError("validate needs --proof FILE (or --no-proof for a "
                           "purely semantic check)")
        assumptions = [ContractAssumption.from_spec(s) for s in cf.specs.values()]
        ctx = RuleContext.for_program(program, assumptions,
                                      extensions=args.extensions)
        _, tree = load_proof(_read(args.proof), ctx)
        bad = check_proof(tree, ctx)
        if bad is not None:
            print(f"proof rejected: {bad}")
            return EXIT_PROOF_REJECTED
    try:
        lo_s, hi_s = args.range.split("..")
        lo, hi = int(lo_s), int(hi_s)
    except ValueError:
        raise CliError("--range expects lo..hi") from None
    report = validate_contract(program, assumption, lo, hi, args.samples,
                               args.seed, fuel=_fuel(args),
                               trace_dir=args.trace_dir)
    if args.json:
        print(json.dumps(report.to_json(), indent=1, sort_keys=True))
    else:
        for s in report.samples:
            print(f"  n={s.n}: {s.verdict} (result {'ok' if s.result_ok else 'BAD'}, "
                  f"membership {'ok' if s.member_ok else 'BAD'})")
        print(f"overall: {report.overall}"
              + (f" counterexample: {report.counterexample}" if report.counterexample else "")
              + (f" ({report.note})" if report.note else ""))
    return EXIT_OK if report.overall == "pass" else EXIT_VALIDATION_FAILED


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tracelet",
                                 description="Trace-based contract toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a program and emit its trace")
    p.add_argument("program")
    p.add_argument("--state", action="append", metavar="x=0",
                   help="initial binding for a main-declared variable")
    p.add_argument("--fuel", type=int, default=None)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("adequacy", help="check trace adequacy")
    p.add_argument("trace")
    p.add_argument("--lenient", action="store_true",
                   help="check only the literal adequacy clauses")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_adequacy)

    p = sub.add_parser("check", help="check trace membership in a formula")
    p.add_argument("trace")
    p.add_argument("formula")
    p.add_argument("--contract", default=None)
    p.add_argument("--bind", action="append", metavar="n=1")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("gen-contract", help="emit the recursive-contract template")
    p.add_argument("proc")
    p.add_argument("--pre-base", required=True)
    p.add_argument("--pre-step", required=True)
    p.add_argument("--result", required=True)
    p.add_argument("--step-inv", required=True)
    p.add_argument("--no-big-step", action="store_true")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_gen_contract)

    p = sub.add_parser("prove", help="prove a procedure contract")
    p.add_argument("program")
    p.add_argument("contracts")
    p.add_argument("--proc", default=None)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--auto", action="store_true", default=True)
    mode.add_argument("--script", default=None)
    mode.add_argument("--repl", action="store_true")
    p.add_argument("--extensions", action="store_true")
    p.add_argument("--max-nodes", type=int, default=50_000)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_prove)

    p = sub.add_parser("check-proof", help="replay and verify a proof file")
    p.add_argument("proof")
    p.add_argument("--program", required=True)
    p.add_argument("--contracts", required=True)
    p.add_argument("--extensions", action="store_true")
    p.set_defaults(func=cmd_check_proof)

    p = sub.add_parser("validate", help="differential check of a proved contract")
    p.add_argument("program")
    p.add_argument("contracts")
    p.add_argument("--proc", default=None)
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--range", default="0..25")
    p.add_argument("--proof", default=None)
    p.add_argument("--no-proof", action="store_true")
    p.add_argument("--extensions", action="store_true")
    p.add_argument("--fuel", type=int, default=None)
    p.add_argument("--trace-dir", default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_validate)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ParseError, LogicError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
