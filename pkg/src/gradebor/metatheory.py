"""Executable soundness checkers over machine traces.

Each theorem of the calculus is realized as a checker that inspects concrete
configurations: heap compatibility, type preservation, progress, per-step
borrow safety, end-of-run uniqueness, and soundness of the equational laws.
All permission arithmetic is exact; there are no tolerances anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .grades import Grade, Semiring, grade_mul, grade_residual
from . import syntax as S
from .syntax import Amp, ExistsT, Pack, Pair, Permission, Term, Type, Uniq, refs_of
from .machine import Heap, Machine, EvalError, Trace
from .typecheck import (
    Checker, CheckError, Ctx, GradedEntry, RefEntry, Usage, runtime_ctx,
)


@dataclass
class Violation:
    prop: str
    step: Optional[int]
    message: str

    def __str__(self) -> str:
        at = f" at step {self.step}" if self.step is not None else ""
        return f"{self.prop}{at}: {self.message}"


@dataclass
class CompatJudgment:
    accepted: bool
    sketch: list[str] = field(default_factory=list)
    failure: Optional[str] = None


# ---------------------------------------------------------------------------
# Heap compatibility


def heap_compat(heap: Heap, ctx: Ctx, ring: Semiring) -> CompatJudgment:
    """Decide whether the heap can account for the context's demands.

    The derivation peels variable bindings from the right, accumulating the
    demands of stored values (scaled by the use made of the variable), then
    discharges reference entries and garbage-collects leftover resources.
    Variables the context never mentions are discharged without a typing
    premise, and leftover references are collectable only at permission 0.
    """
    sketch: list[str] = []
    checker = Checker(ring)
    rt = runtime_ctx(heap, ring)
    demands: dict[str, Grade] = {}
    for x, entry in ctx.vars.items():
        if isinstance(entry, GradedEntry):
            demands[x] = entry.grade
        else:
            demands[x] = ring.one
    ref_demands = set(ctx.refs)

    for x in reversed(list(heap.vars)):
        cell = heap.vars[x]
        s_x = demands.pop(x, ring.zero)
        if grade_residual(cell.grade, s_x) is None:
            return CompatJudgment(False, sketch, f"variable {x!r}: demand {s_x} exceeds heap grade {cell.grade}")
        if s_x == ring.zero:
            sketch.append(f"extGr0 {x}")
            continue
        entry = ctx.vars.get(x)
        want_ty = entry.ty if entry is not None else (cell.ty if cell.ty is not None else None)
        try:
            ty, usage, _ = checker.infer(rt, cell.value)
        except CheckError as e:
            return CompatJudgment(False, sketch, f"stored value of {x!r} fails to type: {e.msg}")
        if want_ty is not None and ty != want_ty:
            return CompatJudgment(False, sketch, f"stored value of {x!r} has type {ty!r}, context expects {want_ty!r}")
        for y, g in usage.graded.items():
            _acc(demands, y, grade_mul(s_x, g), ring)
        for y in usage.linear:
            _acc(demands, y, s_x, ring)
        ref_demands |= usage.refs
        sketch.append(f"extGr {x}")

    if demands:
        missing = ", ".join(sorted(demands))
        return CompatJudgment(False, sketch, f"context demands variables missing from the heap: {missing}")

    for ref in sorted(ref_demands):
        cell = heap.refs.get(ref)
        if cell is None:
            return CompatJudgment(False, sketch, f"context demands reference {ref} missing from the heap")
        if cell.ident not in heap.resources:
            return CompatJudgment(False, sketch, f"reference {ref} points to a deleted resource {cell.ident}")
        sketch.append(f"extRes {ref}")
    for ref, cell in heap.refs.items():
        if ref not in ref_demands and cell.perm != 0:
            return CompatJudgment(False, sketch, f"reference {ref} holds permission {cell.perm} but nothing demands it")
        if ref not in ref_demands:
            sketch.append(f"gcRef {ref}")
    for ident in heap.resources:
        sketch.append(f"gcArr {ident}")
    sketch.append("base")
    return CompatJudgment(True, sketch)


def _acc(demands: dict[str, Grade], y: str, g: Grade, ring: Semiring) -> None:
    from .grades import grade_add

    demands[y] = grade_add(demands[y], g) if y in demands else g


def _demand_ctx(heap: Heap, usage: Usage, s: Grade, ring: Semiring) -> Ctx:
    """The context `s . Gamma'` built from a synthesized usage."""
    rt = runtime_ctx(heap, ring)
    vars_ = {}
    for x, g in usage.graded.items():
        base = rt.vars.get(x)
        vars_[x] = GradedEntry(base.ty if base else None, grade_mul(s, g))
    for x in usage.linear:
        base = rt.vars.get(x)
        vars_[x] = GradedEntry(base.ty if base else None, s)
    refs = {r: rt.refs[r] for r in usage.refs if r in rt.refs}
    ctx = Ctx(ring, vars_, frozenset(), refs, lenient_names=True)
    return ctx


# ---------------------------------------------------------------------------
# Preservation and progress


def check_preservation(trace: Trace, main_type: Type, ring: Semiring, s: Grade) -> list[Violation]:
    """Re-infer the type after every step and check heap compatibility.

    The ambient context is empty, so compatibility is checked against the
    synthesized usage scaled by the reduction grade.
    """
    out: list[Violation] = []
    checker = Checker(ring)
    for k, (term, heap) in enumerate(trace.configurations()):
        rt = runtime_ctx(heap, ring)
        try:
            usage, _ = checker.check(rt, term, main_type)
        except CheckError as e:
            out.append(Violation("preservation", k, f"re-inference failed: [{e.kind}] {e.msg}"))
            continue
        judgment = heap_compat(heap, _demand_ctx(heap, usage, s, ring), ring)
        if not judgment.accepted:
            out.append(Violation("preservation", k, f"heap compatibility failed: {judgment.failure}"))
    return out


def check_progress(trace: Trace) -> list[Violation]:
    """On a completed trace, progress amounts to ending in a value."""
    if not S.is_value(trace.final_term):
        return [Violation("progress", len(trace.steps), f"run ended on a non-value: {trace.final_term!r}")]
    return []


def progress_step(ctx: Ctx, t: Term, heap: Heap, s: Grade, ring: Semiring) -> list[Violation]:
    """A well-typed term is a value or can take a step."""
    if S.is_value(t):
        return []
    m = Machine(ring)
    try:
        out = m.step(heap.snapshot(), t, s)
    except EvalError as e:
        return [Violation("progress", None, f"stuck: {e}")]
    if out is None:
        return [Violation("progress", None, "non-value refused to step")]
    return []


# ---------------------------------------------------------------------------
# Borrow safety


def reachable_refs(term: Term, heap: Heap) -> set[str]:
    """References the term can reach, following variables bound in the heap.

    The machine binds intermediate values in the heap rather than leaving
    them in the term, so the permission totals of the borrow-safety lemma
    must chase heap variables.
    """
    out = set(refs_of(term))
    seen: set[str] = set()
    todo = list(S.free_vars(term))
    while todo:
        x = todo.pop()
        if x in seen:
            continue
        seen.add(x)
        cell = heap.vars.get(x)
        if cell is None:
            continue
        out |= refs_of(cell.value)
        todo.extend(S.free_vars(cell.value))
    return out


def _perm_sums(term: Term, heap: Heap) -> dict[str, Fraction]:
    sums: dict[str, Fraction] = {}
    for ref in reachable_refs(term, heap):
        cell = heap.refs.get(ref)
        if cell is None:
            continue
        sums[cell.ident] = sums.get(cell.ident, Fraction(0)) + cell.perm
    return sums


def check_borrow_safety_step(
    pre_term: Term, pre_heap: Heap, post_term: Term, post_heap: Heap, step: Optional[int] = None
) -> list[Violation]:
    """Exact per-step conservation of term-reachable permission totals."""
    out: list[Violation] = []
    pre = _perm_sums(pre_term, pre_heap)
    post = _perm_sums(post_term, post_heap)
    for ident in pre_heap.resources:
        if pre.get(ident, Fraction(0)) == 1:
            after = post.get(ident, Fraction(0))
            if after not in (Fraction(0), Fraction(1)):
                out.append(
                    Violation(
                        "borrow-safety",
                        step,
                        f"resource {ident}: permission total went from 1 to {after}",
                    )
                )
    for ident in post_heap.resources:
        if ident in pre_heap.resources:
            continue
        touching = [r for r in reachable_refs(post_term, post_heap) if post_heap.refs.get(r) and post_heap.refs[r].ident == ident]
        if touching:
            total = sum((post_heap.refs[r].perm for r in touching), Fraction(0))
            if total != 1:
                out.append(
                    Violation(
                        "borrow-safety",
                        step,
                        f"fresh resource {ident}: referenced at total permission {total}, expected 1",
                    )
                )
    return out


def check_borrow_safety(trace: Trace) -> list[Violation]:
    out: list[Violation] = []
    for rec in trace.steps:
        out.extend(check_borrow_safety_step(rec.pre_term, rec.pre_heap, rec.post_term, rec.post_heap, rec.index))
    return out


# ---------------------------------------------------------------------------
# Uniqueness


def _strip_exists(ty: Type) -> Type:
    while isinstance(ty, ExistsT):
        ty = ty.body
    return ty


def uniqueness_applicable(final_type: Type) -> bool:
    inner = _strip_exists(final_type)
    return isinstance(inner, Amp) and isinstance(inner.perm, Permission) and inner.perm.is_star


def check_uniqueness(trace: Trace, final_type: Type) -> list[Violation]:
    """At the end of a run producing an owned value, ownership is one whole
    reference per live resource the result touches, and unique references
    present at the start remain unique."""
    if not uniqueness_applicable(final_type):
        return []
    out: list[Violation] = []
    configs = trace.configurations()
    t0, h0 = configs[0]
    v, hf = trace.final_term, trace.final_heap

    pre_sums = _perm_sums(t0, h0)
    for ident, total in pre_sums.items():
        if total == 1 and ident in hf.resources:
            whole = [r for r, c in hf.refs.items() if c.ident == ident and c.perm == 1]
            if len(whole) != 1:
                out.append(
                    Violation(
                        "uniqueness",
                        None,
                        f"resource {ident}: expected exactly one whole reference at the end, found {len(whole)}",
                    )
                )
    new_idents = {c.ident for r, c in hf.refs.items() if r in reachable_refs(v, hf)} - set(h0.resources)
    for ident in sorted(new_idents):
        whole = [r for r, c in hf.refs.items() if c.ident == ident and c.perm == 1]
        if len(whole) != 1:
            out.append(
                Violation(
                    "uniqueness",
                    None,
                    f"fresh resource {ident}: expected exactly one whole reference, found {len(whole)}",
                )
            )
    return out


# ---------------------------------------------------------------------------
# Equational soundness


def close_value(heap: Heap, t: Term, depth: int = 0) -> Term:
    """Substitute heap variables into a value until it is heap-closed."""
    if depth > 64:
        raise EvalError("value closure recursion exceeded")
    match t:
        case S.Var(x):
            cell = heap.vars.get(x)
            if cell is None:
                return t
            return close_value(heap, cell.value, depth + 1)
        case _:
            changes = {}
            for f in S.fields(t):
                v = getattr(t, f.name)
                if isinstance(v, Term):
                    changes[f.name] = close_value(heap, v, depth + 1)
            return S._rebuild(t, **changes) if changes else t


def readback(heap: Heap, t: Term, depth: int = 0):
    """Replace references by their resource contents, forgetting names."""
    if depth > 64:
        raise EvalError("readback recursion exceeded")
    match t:
        case S.RefVal(r):
            cell = heap.refs.get(r)
            if cell is None:
                return ("dangling",)
            res = heap.resources.get(cell.ident)
            if res is None:
                return ("deleted",)
            if res.is_array:
                return ("arr", tuple(sorted(res.items.items())))
            return ("refcell", readback(heap, res.value, depth + 1))
        case S.Var(x):
            cell = heap.vars.get(x)
            if cell is None:
                return ("freevar", x)
            return readback(heap, cell.value, depth + 1)
        case Uniq(w, p):
            return ("uniq", str(p), readback(heap, w, depth + 1))
        case Pair(l, r):
            return ("pair", readback(heap, l, depth + 1), readback(heap, r, depth + 1))
        case S.UnitVal():
            return ("unit",)
        case S.NatLit(v):
            return ("nat", v)
        case S.FloatLit(v):
            return ("float", v)
        case S.Promote(w, _):
            return ("box", readback(heap, w, depth + 1))
        case Pack(_, w):
            return ("pack", readback(heap, w, depth + 1))
        case S.Unborrow(w):
            return ("unborrow", readback(heap, w, depth + 1))
        case S.Abs():
            return ("fun", S.strip_meta(close_value(heap, t)))
        case S.Prim(n):
            return ("prim", n)
        case S.App():
            spine = S.prim_spine(t)
            if spine is not None:
                name, args = spine
                return ("papp", name, tuple(readback(heap, a, depth + 1) for a in args))
            return ("app", readback(heap, t.fn, depth + 1), readback(heap, t.arg, depth + 1))
        case _:
            return ("term", S.strip_meta(t))


def readback_eq(a, b) -> bool:
    if isinstance(a, Term) or isinstance(b, Term):
        return isinstance(a, Term) and isinstance(b, Term) and S.alpha_eq(a, b)
    if isinstance(a, tuple) and isinstance(b, tuple):
        return len(a) == len(b) and all(readback_eq(x, y) for x, y in zip(a, b))
    return a == b


@dataclass
class EquationalReport:
    equal: bool
    left: object
    right: object
    violations: list[Violation] = field(default_factory=list)


def check_equational(t1: Term, t2: Term, heap: Heap, ring: Semiring, fuel: int = 10000) -> EquationalReport:
    """Run both sides from copies of the heap and compare dereferenced values."""
    m = Machine(ring)
    h1, h2 = heap.snapshot(), heap.snapshot()
    try:
        v1, _ = m.eval(h1, t1, ring.one, fuel)
        v2, _ = m.eval(h2, t2, ring.one, fuel)
    except EvalError as e:
        return EquationalReport(False, None, None, [Violation("equational", None, f"evaluation failed: {e}")])
    r1 = readback(h1, v1)
    r2 = readback(h2, v2)
    if readback_eq(r1, r2):
        return EquationalReport(True, r1, r2)
    return EquationalReport(
        False, r1, r2, [Violation("equational", None, f"dereferenced values differ: {r1!r} vs {r2!r}")]
    )


# ---------------------------------------------------------------------------
# Property suites (generated programs, equational laws, algebra laws)


@dataclass
class SuiteResult:
    prop: str
    cases: int
    failures: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"property": self.prop, "cases": self.cases, "failures": self.failures}


def run_generated_suites(seed: int, cases: int, size: int = 6, mutate_split: bool = False, fuel: int = 10000) -> list[SuiteResult]:
    """Run progress, preservation, borrow safety, and uniqueness over a
    seed-fixed stream of generated programs.

    Grade 1 is always exercised; pure programs under the natural-number
    instances are additionally replayed at grade 2.
    """
    import random

    from .generator import generate_program
    from .typecheck import check_program
    from .grades import INTERVAL

    rng = random.Random(seed)
    suites = {
        name: SuiteResult(name, 0)
        for name in ("generator-soundness", "progress", "preservation", "borrow-safety", "uniqueness")
    }
    for i in range(cases):
        prog = generate_program(rng, size if i % 4 else 3)
        suites["generator-soundness"].cases += 1
        try:
            cp = check_program(prog)
        except CheckError as e:
            suites["generator-soundness"].failures.append(f"case {i}: rejected: [{e.kind}] {e.msg}")
            continue
        grades = [cp.ring.one]
        if cp.ring is not INTERVAL and not _uses_resources(cp.main_term):
            grades.append(cp.ring.literal(2))
        for s in grades:
            m = Machine(cp.ring, mutate_split=mutate_split)
            try:
                _, trace = m.eval(Heap(), cp.main_term, s, fuel)
            except EvalError as e:
                suites["progress"].cases += 1
                suites["progress"].failures.append(f"case {i} at grade {s}: {e}")
                continue
            for name, found in (
                ("progress", check_progress(trace)),
                ("preservation", check_preservation(trace, cp.main_type, cp.ring, s)),
                ("borrow-safety", check_borrow_safety(trace)),
                ("uniqueness", check_uniqueness(trace, cp.main_type)),
            ):
                suites[name].cases += 1
                suites[name].failures.extend(f"case {i} at grade {s}: {v}" for v in found)
    return list(suites.values())


def _uses_resources(t: Term) -> bool:
    from .generator import constructors_used

    used = constructors_used(t)
    return any(c.startswith("Prim:") for c in used)


def _seeded_array_heap(rng, perm: Fraction) -> tuple[Heap, str]:
    from .machine import ArrRes, RefCell

    heap = Heap()
    heap.resources["id1"] = ArrRes({k: round(rng.uniform(-4.0, 4.0), 2) for k in range(rng.randrange(0, 4))})
    heap.refs["ref1"] = RefCell(perm, "id1")
    heap.counter = 1
    return heap, "ref1"


def run_equational_suite(seed: int, cases: int, fuel: int = 10000) -> SuiteResult:
    """The borrowing laws: identity, composition, and the split/join
    isomorphism, instantiated over randomly seeded resources."""
    import random

    from .grades import NAT_LEQ, Permission, STAR
    from .syntax import Abs, App, FloatLit, Join, LetPair, NatLit, Pair, Prim, RefVal, Split, Var, WithBorrow

    ring = NAT_LEQ
    rng = random.Random(seed)
    result = SuiteResult("equational", 0)

    def write_fn(idx: int, val: float) -> Term:
        return Abs("w", App(App(App(Prim("writeArray"), Var("w")), NatLit(idx)), FloatLit(val)))

    for i in range(cases):
        # law 1: borrowing with the identity is a no-op
        heap, ref = _seeded_array_heap(rng, Fraction(1))
        owner = Uniq(RefVal(ref), STAR)
        result.cases += 1
        rep = check_equational(WithBorrow(Abs("x", Var("x")), owner), owner, heap, ring, fuel)
        if not rep.equal:
            result.failures.append(f"case {i}: unit law: {rep.violations[0] if rep.violations else rep.right}")

        # law 2: borrowing twice composes
        heap, ref = _seeded_array_heap(rng, Fraction(1))
        owner = Uniq(RefVal(ref), STAR)
        f = write_fn(rng.randrange(0, 3), round(rng.uniform(0, 9), 2))
        g = write_fn(rng.randrange(0, 3), round(rng.uniform(0, 9), 2))
        composed = WithBorrow(Abs("x", App(f, App(g, Var("x")))), owner)
        sequenced = WithBorrow(f, WithBorrow(g, owner))
        result.cases += 1
        rep = check_equational(composed, sequenced, heap, ring, fuel)
        if not rep.equal:
            result.failures.append(f"case {i}: composition law: {rep.violations[0] if rep.violations else rep.right}")

        # law 3: split then join is the identity (exact, no tolerance)
        frac = Permission(Fraction(1, 2 ** rng.randrange(0, 4)))
        heap, ref = _seeded_array_heap(rng, frac.frac)
        borrow = Uniq(RefVal(ref), frac)
        roundtrip = LetPair("x", "y", Split(borrow), Join(Pair(Var("x"), Var("y"))))
        result.cases += 1
        rep = check_equational(roundtrip, borrow, heap, ring, fuel)
        if not rep.equal:
            result.failures.append(f"case {i}: split/join law: {rep.violations[0] if rep.violations else rep.right}")

        # law 4: join then split restores the pair
        frac = Permission(Fraction(1, 2 ** rng.randrange(1, 4)))
        heap, _ = _seeded_array_heap(rng, frac.frac)
        from .machine import RefCell

        heap.refs["ref2"] = RefCell(frac.frac, "id1")
        heap.counter = 2
        u1, u2 = Uniq(RefVal("ref1"), frac), Uniq(RefVal("ref2"), frac)
        result.cases += 1
        rep = check_equational(Split(Join(Pair(u1, u2))), Pair(u1, u2), heap, ring, fuel)
        if not rep.equal:
            result.failures.append(f"case {i}: join/split law: {rep.violations[0] if rep.violations else rep.right}")
    return result


def run_algebra_suite(seed: int, cases: int) -> SuiteResult:
    """Semiring axioms and monotonicity for every shipped instance, plus the
    exact split/add identity for fractional permissions."""
    import random

    from .grades import Grade, NAT, NAT_LEQ, INTERVAL, Permission, grade_add, grade_leq, grade_mul, perm_add, perm_half

    rng = random.Random(seed)
    result = SuiteResult("algebra", 0)

    def sample(ring) -> Grade:
        if ring is INTERVAL:
            lo = rng.randrange(0, 12)
            return Grade(ring, (lo, lo + rng.randrange(0, 12)))
        return Grade(ring, rng.randrange(0, 24))

    for i in range(cases):
        for ring in (NAT, NAT_LEQ, INTERVAL):
            a, b, c, d = (sample(ring) for _ in range(4))
            result.cases += 1
            checks = [
                grade_add(a, grade_add(b, c)) == grade_add(grade_add(a, b), c),
                grade_add(a, b) == grade_add(b, a),
                grade_add(a, ring.zero) == a,
                grade_mul(a, ring.one) == a and grade_mul(ring.one, a) == a,
                grade_mul(a, grade_add(b, c)) == grade_add(grade_mul(a, b), grade_mul(a, c)),
                grade_mul(grade_add(b, c), a) == grade_add(grade_mul(b, a), grade_mul(c, a)),
                grade_mul(a, ring.zero) == ring.zero,
                grade_leq(a, a),
            ]
            if not all(checks):
                result.failures.append(f"case {i}: semiring axiom failed in {ring.name}")
            if grade_leq(a, b) and grade_leq(c, d):
                if not (grade_leq(grade_add(a, c), grade_add(b, d)) and grade_leq(grade_mul(a, c), grade_mul(b, d))):
                    result.failures.append(f"case {i}: monotonicity failed in {ring.name}")
            if grade_leq(a, b) and grade_leq(b, c) and not grade_leq(a, c):
                result.failures.append(f"case {i}: transitivity failed in {ring.name}")
        result.cases += 1
        f = Permission(Fraction(rng.randrange(1, 64), 64))
        if perm_add(perm_half(f), perm_half(f)) != f:
            result.failures.append(f"case {i}: half/add identity failed at {f}")
        half = perm_half(f)
        if not (half.frac > 0 and half.frac <= 1):
            result.failures.append(f"case {i}: half out of range at {f}")
    return result


def run_property_suites(
    seed: int, cases: int, size: int = 6, mutate_split: bool = False, fuel: int = 10000
) -> list[SuiteResult]:
    out = run_generated_suites(seed, cases, size, mutate_split, fuel)
    out.append(run_equational_suite(seed, max(cases // 4, 0), fuel))
    out.append(run_algebra_suite(seed, cases))
    return out
