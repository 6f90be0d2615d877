"""Parser, pretty printer, and well-formedness checks."""

import random

import pytest

from helpers import M0_SRC, RUNNING_SRC, random_terminating_program
from tracelet.lang import (Assign, CallAssign, If, IntLit, ParseError,
                           ProcDecl, Program, Return, Scope, Seq, Skip,
                           UnknownProcedure, Var, build_lookup, lookup,
                           parse_program, pretty_program, well_formed)


class TestParse:
    def test_running_example(self):
        p = parse_program(RUNNING_SRC)
        assert len(p.procs) == 1
        proc = p.procs[0]
        assert proc.name == "m" and proc.param == "k"
        assert proc.body.decls == ("r",)
        body = proc.body.body
        assert isinstance(body, Seq)
        assert isinstance(body.first, If)
        assert isinstance(body.second, Return)
        assert p.main_decls == ("x",)
        assert p.main_body == CallAssign(Var("x"), "m", IntLit(1))

    def test_smallest_program(self):
        p = parse_program("main { skip }")
        assert p.procs == () and p.main_body == Skip()

    def test_return_mid_body_rejected(self):
        src = "m(k) { r; return r; r = 1 }\nmain { skip }"
        with pytest.raises(ParseError, match="final statement"):
            parse_program(src)

    def test_return_in_main_rejected(self):
        with pytest.raises(ParseError, match="outside a procedure"):
            parse_program("main { x; return x }")

    def test_duplicate_procedure_rejected(self):
        src = "m(k) { return k }\nm(j) { return j }\nmain { skip }"
        with pytest.raises(ParseError, match="duplicate"):
            parse_program(src)

    def test_missing_return_rejected(self):
        with pytest.raises(ParseError, match="must end with return"):
            parse_program("m(k) { r; r = k }\nmain { skip }")

    def test_res_reserved(self):
        with pytest.raises(ParseError, match="reserved"):
            parse_program("main { x; x = res(0) }")

    def test_syntax_error_position(self):
        try:
            parse_program("main { x; x = }")
        except ParseError as e:
            assert e.line == 1 and e.col > 0
        else:
            pytest.fail("expected a syntax error")

    def test_sequence_right_associated(self):
        p = parse_program("main { x; x = 1; x = 2; x = 3 }")
        body = p.main_body
        assert isinstance(body, Seq)
        assert isinstance(body.first, Assign)
        assert isinstance(body.second, Seq)


class TestPretty:
    def test_roundtrip_fixtures(self):
        for src in (RUNNING_SRC, M0_SRC, "main { skip }",
                    "q(a) { b; while (a > 0) { a = a - 1 }; return b }\n"
                    "main { x; y; x = q(3); if (x == 0) { y = 1 } }"):
            p = parse_program(src)
            printed = pretty_program(p)
            again = parse_program(printed)
            assert again == p
            assert pretty_program(again) == printed

    def test_roundtrip_generated(self):
        rng = random.Random(20)
        for _ in range(60):
            p = random_terminating_program(rng)
            printed = pretty_program(p)
            assert parse_program(printed) == p


class TestWellFormed:
    def test_running_example_passes(self):
        assert well_formed(parse_program(RUNNING_SRC)) == []

    def test_fixture_programs_pass(self):
        assert well_formed(parse_program(M0_SRC)) == []

    def test_side_effect_diagnostic(self):
        # a procedure writing a variable it does not declare
        p = Program(
            (ProcDecl("m", "k", Scope((), Seq(Assign(Var("g"), IntLit(1)),
                                              Return(IntLit(0))))),),
            ("g",), Skip())
        codes = {d.code for d in well_formed(p)}
        assert "undeclared" in codes or "side-effect" in codes

    def test_param_write_flagged(self):
        src = "m(k) { k = k + 1; return k }\nmain { skip }"
        codes = {d.code for d in well_formed(parse_program(src))}
        assert "side-effect" in codes

    def test_duplicate_name_diagnostic(self):
        p = Program(
            (ProcDecl("m", "k", Scope((), Return(Var("k")))),
             ProcDecl("m", "j", Scope((), Return(Var("j")))),),
            (), Skip())
        codes = {d.code for d in well_formed(p)}
        assert "duplicate-procedure" in codes

    def test_undeclared_variable(self):
        codes = {d.code for d in well_formed(parse_program("main { x; x = y }"))}
        assert "undeclared" in codes

    def test_type_mismatch_condition(self):
        codes = {d.code
                 for d in well_formed(parse_program("main { x; if (x + 1) { x = 0 } }"))}
        assert "type" in codes

    def test_unknown_procedure_call(self):
        codes = {d.code for d in well_formed(parse_program("main { x; x = q(1) }"))}
        assert "unknown-procedure" in codes

    def test_generated_programs_pass(self):
        rng = random.Random(9)
        for _ in range(100):
            assert well_formed(random_terminating_program(rng)) == []


class TestLookup:
    def test_lookup_running(self):
        p = parse_program(RUNNING_SRC)
        table = build_lookup(p)
        assert lookup("m", table) is p.procs[0]

    def test_lookup_unknown(self):
        table = build_lookup(parse_program(RUNNING_SRC))
        with pytest.raises(UnknownProcedure):
            lookup("q", table)

    def test_lookup_roundtrip_generated(self):
        rng = random.Random(4)
        for _ in range(50):
            p = random_terminating_program(rng)
            table = build_lookup(p)
            for proc in p.procs:
                assert lookup(proc.name, table) is proc
