import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from gradebor.grades import INTERVAL, NAT, NAT_LEQ, STAR, frac_perm
from gradebor.parser import (
    SyntaxError_, parse_program, parse_term, parse_type, print_program,
    print_term, print_type,
)
from gradebor.syntax import (
    Abs, Amp, App, Box, ExistsT, FloatT, Forall, Fun, Join, LetPair, NatT,
    Pair, PermVar, Prod, Promote, ResT, Split, Uniq, UnitT, UnitVal, Var,
    WithBorrow, RefVal, Unborrow,
)

from test_syntax import random_user_term


def test_minimal_program():
    prog = parse_program("main : Unit -o Unit; main = \\u -> u;")
    assert prog.main.name == "main"
    assert prog.main.signature == Fun(UnitT(), UnitT())


def test_persimmon_listing_parses_to_borrow_forms():
    body = parse_term(r"\c -> withBorrow (\b -> let (x, y) = split b in join (observe x, y)) c")
    assert isinstance(body, Abs)
    wb = body.body
    assert isinstance(wb, WithBorrow)
    inner = wb.fn.body
    assert isinstance(inner, LetPair)
    assert isinstance(inner.rhs, Split)
    assert isinstance(inner.body, Join)


def test_unclosed_bracket_is_a_syntax_error():
    with pytest.raises(SyntaxError_) as exc:
        parse_term("let [x = t")
    assert exc.value.loc is not None


def test_pragma_selects_semiring():
    assert parse_program("#semiring nat\nmain : Unit; main = ();").semiring is NAT
    assert parse_program("#semiring interval\nmain : Unit; main = ();").semiring is INTERVAL
    assert parse_program("main : Unit; main = ();").semiring is NAT_LEQ
    with pytest.raises(SyntaxError_):
        parse_program("#semiring lattice\nmain : Unit; main = ();")


def test_type_syntax():
    assert parse_type("Unit [2]") == Box(NAT_LEQ.literal(2), UnitT())
    assert parse_type("& 1/2 Nat") == Amp(frac_perm(1, 2), NatT())
    assert parse_type("* Float") == Amp(STAR, FloatT())
    assert parse_type("Array i Float") == ResT("Array", "i", FloatT())
    assert parse_type("exists i . * (Ref i Float)") == ExistsT("i", Amp(STAR, ResT("Ref", "i", FloatT())))
    assert parse_type("A -o B * C") == Fun(parse_type("A"), Prod(parse_type("B"), parse_type("C")))
    got = parse_type("forall {p : Permission} . & p Nat -o & p Nat")
    assert isinstance(got, Forall) and got.binders == (("p", "Permission"),)
    assert got.body == Fun(Amp(PermVar("p"), NatT()), Amp(PermVar("p"), NatT()))


def test_interval_grades_parse():
    assert parse_type("Unit [0..1]", INTERVAL) == Box(INTERVAL.literal(0, 1), UnitT())
    with pytest.raises(Exception):
        parse_type("Unit [0..1]", NAT_LEQ)


def test_print_examples():
    assert print_term(Promote(UnitVal())) == "[()]"
    assert print_type(Amp(frac_perm(1, 2), NatT())) == "& 1/2 Nat"
    assert print_type(Amp(STAR, parse_type("A"))) == "* A"
    assert print_term(Uniq(Var("t"))) == "*t"
    assert print_term(Unborrow(Var("t"))) == "unborrow t"
    assert print_term(RefVal("ref3")) == "#ref3"


def test_parser_never_produces_runtime_forms():
    with pytest.raises(SyntaxError_):
        parse_term("#ref1")
    # `unborrow` is not surface syntax: it reads as an ordinary variable
    t = parse_term("unborrow t")
    assert t == App(Var("unborrow"), Var("t"))
    assert not isinstance(t, Unborrow)


def test_comments_and_whitespace():
    prog = parse_program("-- a comment\nmain : Unit; -- trailing\nmain = ();\n")
    assert prog.main.body == UnitVal()


@given(st.integers(min_value=0, max_value=10**9))
def test_roundtrip_random_terms(seed):
    rng = random.Random(seed)
    t = random_user_term(rng, 4)
    assert parse_term(print_term(t)) == t


def test_roundtrip_annotated_forms():
    src = r"let [x] : (Unit [2]) = [()] in (x, x)"
    assert parse_term(print_term(parse_term(src))) == parse_term(src)
    src = r"\x : & 1 (Ref i Float) -> x"
    assert parse_term(print_term(parse_term(src))) == parse_term(src)
    src = r"let *c = clone b as <j, k> in (c, c)"
    assert parse_term(print_term(parse_term(src))) == parse_term(src)


def test_program_print_roundtrip():
    src = """#semiring nat
observe : forall {p : Permission, i : Name} . & p (Ref i Float) -o & p (Ref i Float);
observe = \\x -> x;
main : Unit;
main = let () = () in ();
"""
    prog = parse_program(src)
    again = parse_program(print_program(prog))
    assert again.semiring is prog.semiring
    assert [d.name for d in again.definitions] == [d.name for d in prog.definitions]
    for a, b in zip(again.definitions, prog.definitions):
        assert a.signature == b.signature
        assert a.body == b.body
