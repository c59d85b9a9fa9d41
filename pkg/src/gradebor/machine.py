"""Call-by-value heap machine.

Configurations pair a three-sorted heap (variables, permission-annotated
references, resources) with a term under reduction. `step` applies exactly
one rule; the recorded rule name is the chain of congruences down to the
leaf, joined with '/'. Evaluation captures a full snapshot trace for the
metatheory checkers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .grades import Grade, Permission, STAR, WHOLE, Semiring, grade_mul, grade_residual, perm_add, perm_half
from . import grades as G
from . import syntax as S
from .syntax import (
    Abs, App, Clone, FloatLit, Join, LetBox, LetPair, LetUnit, NatLit, Pack,
    Pair, Prim, Promote, Pull, Push, RefVal, Share, Split, Term, Type, Unborrow,
    Uniq, UnitVal, Unpack, Var, WithBorrow, fresh_name, is_value, prim_spine,
    refs_of, rename_refs, subst, subst_names,
)


class EvalError(Exception):
    pass


class StuckTerm(EvalError):
    pass


class GradeUnderflow(EvalError):
    pass


class MissingResource(EvalError):
    pass


class FuelExhausted(EvalError):
    pass


@dataclass
class VarCell:
    grade: Grade
    value: Term
    ty: Optional[Type]


@dataclass
class RefCell:
    perm: Fraction  # heap annotations admit zero, unlike Permission
    ident: str


@dataclass
class ArrRes:
    items: dict[int, float] = field(default_factory=dict)
    is_array: bool = True

    def show(self) -> str:
        body = "".join(f"[{n}]={v}" for n, v in sorted(self.items.items()))
        return "init" + body


@dataclass
class RefRes:
    value: Term
    ty: Optional[Type]
    is_array: bool = False

    def show(self) -> str:
        from .parser import print_term, print_type

        ty = f" : {print_type(self.ty)}" if self.ty is not None else ""
        return f"|- {print_term(self.value)}{ty}"


@dataclass
class Heap:
    vars: dict[str, VarCell] = field(default_factory=dict)
    refs: dict[str, RefCell] = field(default_factory=dict)
    resources: dict[str, object] = field(default_factory=dict)
    counter: int = 0

    def fresh_ref(self) -> str:
        self.counter += 1
        return f"ref{self.counter}"

    def fresh_ident(self) -> str:
        self.counter += 1
        return f"id{self.counter}"

    def fresh_var(self, base: str) -> str:
        return fresh_name(base, set(self.vars))

    def snapshot(self) -> "Heap":
        return Heap(
            {x: VarCell(c.grade, c.value, c.ty) for x, c in self.vars.items()},
            {r: RefCell(c.perm, c.ident) for r, c in self.refs.items()},
            {
                i: (ArrRes(dict(c.items)) if c.is_array else RefRes(c.value, c.ty))
                for i, c in self.resources.items()
            },
            self.counter,
        )

    def names(self) -> set[str]:
        return set(self.vars) | set(self.refs) | set(self.resources)

    def to_json(self) -> list[dict]:
        from .parser import print_term, print_type

        out: list[dict] = []
        for x, c in self.vars.items():
            out.append(
                {
                    "sort": "var",
                    "name": x,
                    "grade": str(c.grade),
                    "value": print_term(c.value),
                    "type": print_type(c.ty) if c.ty is not None else None,
                }
            )
        for r, c in self.refs.items():
            out.append({"sort": "ref", "name": r, "perm": str(c.perm), "id": c.ident})
        for i, c in self.resources.items():
            out.append({"sort": "res", "name": i, "value": c.show()})
        return out


def heap_zero_perms(heap: Heap) -> Heap:
    """A copy of the heap with every reference annotation set to zero."""
    out = heap.snapshot()
    for cell in out.refs.values():
        cell.perm = Fraction(0)
    return out


def heap_copy(sub: Heap) -> tuple[Heap, dict[str, str], list[str]]:
    """Deep-copy a reference-closed heap fragment with fresh names.

    Returns the copied fragment, the reference renaming, and the fresh
    identifiers in the order their originals appear in `sub.resources`.
    New references carry the whole permission.
    """
    counter = sub.counter
    theta: dict[str, str] = {}
    ident_map: dict[str, str] = {}
    new_ids: list[str] = []
    fragment = Heap(counter=counter)
    for ident in sub.resources:
        counter += 1
        ident_map[ident] = f"id{counter}"
        new_ids.append(ident_map[ident])
    for ref, cell in sub.refs.items():
        if cell.ident not in ident_map:
            raise MissingResource(f"reference {ref} points outside the copied fragment")
        counter += 1
        theta[ref] = f"ref{counter}"
    for ident, res in sub.resources.items():
        if res.is_array:
            fragment.resources[ident_map[ident]] = ArrRes(dict(res.items))
        else:
            inner_refs = refs_of(res.value)
            missing = inner_refs - set(theta)
            if missing:
                raise MissingResource(f"copied value mentions uncopied references: {sorted(missing)}")
            fragment.resources[ident_map[ident]] = RefRes(
                rename_refs(theta, res.value),
                type_rename_idents(res.ty, ident_map) if res.ty is not None else None,
            )
    for ref, cell in sub.refs.items():
        fragment.refs[theta[ref]] = RefCell(Fraction(1), ident_map[cell.ident])
    fragment.counter = counter
    return fragment, theta, new_ids


def type_rename_idents(ty: Type, env: dict[str, str]) -> Type:
    return S.type_subst_names(ty, env)


# ---------------------------------------------------------------------------
# Array resource term operations


def arr_read(a: ArrRes, n: int) -> float:
    # unwritten indices read as zero; sizes are not tracked
    return a.items.get(n, 0.0)


def arr_write(a: ArrRes, n: int, v: float) -> ArrRes:
    a.items[n] = v
    return a


# ---------------------------------------------------------------------------
# Steps and traces


@dataclass
class StepRecord:
    index: int
    rule: str
    grade: str
    pre_term: Term
    pre_heap: Heap
    post_term: Term
    post_heap: Heap


@dataclass
class Trace:
    grade: Grade
    steps: list[StepRecord]
    final_term: Term
    final_heap: Heap

    def configurations(self) -> list[tuple[Term, Heap]]:
        if not self.steps:
            return [(self.final_term, self.final_heap)]
        out = [(self.steps[0].pre_term, self.steps[0].pre_heap)]
        out.extend((s.post_term, s.post_heap) for s in self.steps)
        return out

    def to_jsonl(self) -> str:
        from .parser import print_term

        lines = []
        for s in self.steps:
            lines.append(
                json.dumps(
                    {
                        "step": s.index,
                        "rule": s.rule,
                        "grade": s.grade,
                        "term": print_term(s.post_term),
                        "heap": s.post_heap.to_json(),
                    }
                )
            )
        lines.append(
            json.dumps(
                {
                    "step": len(self.steps),
                    "value": print_term(self.final_term),
                    "heap": self.final_heap.to_json(),
                }
            )
        )
        return "\n".join(lines)


class Machine:
    """Small-step reducer over configurations.

    `mutate_split` disables the permission halving performed by splitRef in
    the heap; it exists so the metatheory suites can demonstrate they detect
    a broken interpreter.
    """

    def __init__(self, ring: Semiring, mutate_split: bool = False):
        self.ring = ring
        self.mutate_split = mutate_split

    # -- public API -----------------------------------------------------------

    def step(self, heap: Heap, t: Term, s: Grade) -> Optional[tuple[Term, str]]:
        """Apply one reduction rule in place; None when t is a value."""
        if is_value(t):
            return None
        return self._step(heap, t, s)

    def eval(self, heap: Heap, t: Term, s: Grade, fuel: int = 10000, record: bool = True) -> tuple[Term, Trace]:
        steps: list[StepRecord] = []
        pre_heap = heap.snapshot() if record else None
        k = 0
        while not is_value(t):
            if fuel <= 0:
                raise FuelExhausted(f"no fuel left after {k} steps")
            fuel -= 1
            out = self._step(heap, t, s)
            t2, rule = out
            if record:
                post_heap = heap.snapshot()
                steps.append(StepRecord(k, rule, str(s), t, pre_heap, t2, post_heap))
                pre_heap = post_heap
            t = t2
            k += 1
        final_heap = heap.snapshot() if record else heap
        return t, Trace(s, steps, t, final_heap)

    # -- single-step dispatch ---------------------------------------------------

    def _step(self, heap: Heap, t: Term, s: Grade) -> tuple[Term, str]:
        match t:
            case Var(x):
                cell = heap.vars.get(x)
                if cell is None:
                    raise StuckTerm(f"variable {x!r} is not bound in the heap")
                residual = grade_residual(cell.grade, s)
                if residual is None:
                    raise GradeUnderflow(f"variable {x!r} has grade {cell.grade}, cannot consume {s}")
                cell.grade = residual
                return cell.value, "var"

            case App():
                spine = prim_spine(t)
                if spine is not None:
                    name, args = spine
                    if len(args) == S.PRIMITIVES[name] and all(is_value(a) for a in args):
                        return self._prim_step(heap, name, args)
                if not is_value(t.fn):
                    t2, rule = self._step(heap, t.fn, s)
                    return S._rebuild(t, fn=t2), f"appR/{rule}"
                if not is_value(t.arg):
                    t2, rule = self._step(heap, t.arg, s)
                    return S._rebuild(t, arg=t2), f"appL/{rule}"
                if isinstance(t.fn, Abs):
                    fresh = heap.fresh_var(t.fn.param)
                    heap.vars[fresh] = VarCell(s, t.arg, t.fn.ann)
                    return subst(t.fn.body, t.fn.param, Var(fresh)), "beta"
                raise StuckTerm(f"cannot apply {t.fn!r}")

            case Pair(l, r):
                if not is_value(l):
                    t2, rule = self._step(heap, l, s)
                    return S._rebuild(t, left=t2), f"congPairL/{rule}"
                t2, rule = self._step(heap, r, s)
                return S._rebuild(t, right=t2), f"congPairR/{rule}"

            case LetPair(x, y, rhs, body):
                if not is_value(rhs):
                    t2, rule = self._step(heap, rhs, s)
                    return S._rebuild(t, rhs=t2), f"congPairElim/{rule}"
                if not isinstance(rhs, Pair):
                    raise StuckTerm(f"let (x, y) scrutinee is not a pair: {rhs!r}")
                fx, fy = heap.fresh_var(x), heap.fresh_var(y)
                heap.vars[fx] = VarCell(s, rhs.left, t.lann)
                heap.vars[fy] = VarCell(s, rhs.right, t.rann)
                return subst(subst(body, x, Var(fx)), y, Var(fy)), "pairBeta"

            case LetUnit(rhs, body):
                if not is_value(rhs):
                    t2, rule = self._step(heap, rhs, s)
                    return S._rebuild(t, rhs=t2), f"congUnitElim/{rule}"
                if not isinstance(rhs, UnitVal):
                    raise StuckTerm(f"let () scrutinee is not unit: {rhs!r}")
                return body, "unitBeta"

            case Promote(body, grade):
                r = grade if grade is not None else self.ring.one
                t2, rule = self._step(heap, body, grade_mul(s, r))
                return S._rebuild(t, body=t2), f"congPromotion/{rule}"

            case LetBox(x, rhs, body, ann):
                if not is_value(rhs):
                    t2, rule = self._step(heap, rhs, s)
                    return S._rebuild(t, rhs=t2), f"congBoxElim/{rule}"
                if not isinstance(rhs, Promote):
                    raise StuckTerm(f"let [x] scrutinee is not a box: {rhs!r}")
                r = rhs.grade
                if r is None and ann is not None:
                    r = ann.grade
                if r is None:
                    r = self.ring.one
                fx = heap.fresh_var(x)
                heap.vars[fx] = VarCell(grade_mul(s, r), rhs.body, ann.body if ann is not None else None)
                return subst(body, x, Var(fx)), "betaBox"

            case Pack(i, body):
                t2, rule = self._step(heap, body, s)
                return S._rebuild(t, body=t2), f"congPack/{rule}"

            case Unpack(i, x, rhs, body):
                if not is_value(rhs):
                    t2, rule = self._step(heap, rhs, s)
                    return S._rebuild(t, rhs=t2), f"congUnpack/{rule}"
                if not isinstance(rhs, Pack):
                    raise StuckTerm(f"unpack scrutinee is not packed: {rhs!r}")
                fx = heap.fresh_var(x)
                ty = S.type_subst_names(t.bann, {i: rhs.ident}) if t.bann is not None else None
                heap.vars[fx] = VarCell(s, rhs.body, ty)
                body2 = subst_names(body, {i: rhs.ident})
                return subst(body2, x, Var(fx)), "existentialBeta"

            case WithBorrow(fn, arg):
                if not is_value(fn):
                    t2, rule = self._step(heap, fn, s)
                    return S._rebuild(t, fn=t2), f"congWithBorrowL/{rule}"
                if not is_value(arg):
                    t2, rule = self._step(heap, arg, s)
                    return S._rebuild(t, arg=t2), f"congWithBorrowR/{rule}"
                if not isinstance(fn, Abs):
                    raise StuckTerm(f"withBorrow function is not an abstraction: {fn!r}")
                if not isinstance(arg, Uniq):
                    raise StuckTerm(f"withBorrow argument is not a unique value: {arg!r}")
                borrowed = Uniq(arg.body, WHOLE)
                return Unborrow(subst(fn.body, fn.param, borrowed)), "withBorrowBeta"

            case Unborrow(body):
                if not is_value(body):
                    t2, rule = self._step(heap, body, s)
                    return S._rebuild(t, body=t2), f"congUnborrow/{rule}"
                if not isinstance(body, Uniq):
                    raise StuckTerm(f"unborrow applied to a non-borrow: {body!r}")
                return Uniq(body.body, STAR), "unborrowBorrow"

            case Share(body, grade):
                if not is_value(body):
                    t2, rule = self._step(heap, body, s)
                    return S._rebuild(t, body=t2), f"congShare/{rule}"
                if not isinstance(body, Uniq):
                    raise StuckTerm(f"share applied to a non-unique value: {body!r}")
                for ref in refs_of(body.body):
                    cell = heap.refs.get(ref)
                    if cell is None:
                        raise MissingResource(f"shared value references missing {ref}")
                    cell.perm = Fraction(0)
                return Promote(body.body, grade if grade is not None else self.ring.one), "share"

            case Clone(x, idents, rhs, body):
                if not is_value(rhs):
                    t2, rule = self._step(heap, rhs, s)
                    return S._rebuild(t, rhs=t2), f"congClone/{rule}"
                if not isinstance(rhs, Promote):
                    raise StuckTerm(f"clone applied to a non-box: {rhs!r}")
                return self._copy_beta(heap, t, rhs.body, s), "copyBeta"

            case Split(body):
                if not is_value(body):
                    t2, rule = self._step(heap, body, s)
                    return S._rebuild(t, body=t2), f"congSplit/{rule}"
                if not isinstance(body, Uniq):
                    raise StuckTerm(f"split applied to a non-borrow: {body!r}")
                if body.perm.is_star:
                    raise StuckTerm("split applied to an owned value")
                half = perm_half(body.perm)
                left, right = self._split_value(heap, body.body)
                rule = "splitRef" if isinstance(body.body, RefVal) else "splitPair"
                return Pair(Uniq(left, half), Uniq(right, half)), rule

            case Join(body):
                if not is_value(body):
                    t2, rule = self._step(heap, body, s)
                    return S._rebuild(t, body=t2), f"congJoin/{rule}"
                if not (isinstance(body, Pair) and isinstance(body.left, Uniq) and isinstance(body.right, Uniq)):
                    raise StuckTerm(f"join applied to a non-pair of borrows: {body!r}")
                try:
                    p = perm_add(body.left.perm, body.right.perm)
                except G.GradeError as e:
                    raise StuckTerm(f"join: {e}")
                joined = self._join_value(heap, body.left.body, body.right.body)
                rule = "joinRef" if isinstance(joined, RefVal) else "joinPair"
                return Uniq(joined, p), rule

            case Push(body):
                if not is_value(body):
                    t2, rule = self._step(heap, body, s)
                    return S._rebuild(t, body=t2), f"congPush/{rule}"
                if not (isinstance(body, Uniq) and isinstance(body.body, Pair)):
                    raise StuckTerm(f"push applied to a non-product: {body!r}")
                rule = "pushUnique" if body.perm.is_star else "pushBorrow"
                return Pair(Uniq(body.body.left, body.perm), Uniq(body.body.right, body.perm)), rule

            case Pull(body):
                if not is_value(body):
                    t2, rule = self._step(heap, body, s)
                    return S._rebuild(t, body=t2), f"congPull/{rule}"
                if not (isinstance(body, Pair) and isinstance(body.left, Uniq) and isinstance(body.right, Uniq)):
                    raise StuckTerm(f"pull applied to a non-pair of borrows: {body!r}")
                if body.left.perm != body.right.perm:
                    raise StuckTerm("pull on components at different permissions")
                rule = "pullUnique" if body.left.perm.is_star else "pullBorrow"
                return Uniq(Pair(body.left.body, body.right.body), body.left.perm), rule

            case _:
                raise StuckTerm(f"no rule applies to {t!r}")

    # -- resource primitives ----------------------------------------------------

    def _prim_step(self, heap: Heap, name: str, args: list[Term]) -> tuple[Term, str]:
        if name == "newArray":
            ident = heap.fresh_ident()
            ref = heap.fresh_ref()
            heap.resources[ident] = ArrRes()
            heap.refs[ref] = RefCell(Fraction(1), ident)
            return Pack(ident, Uniq(RefVal(ref), STAR)), "newArray"
        if name == "newRef":
            (v,) = args
            ident = heap.fresh_ident()
            ref = heap.fresh_ref()
            heap.resources[ident] = RefRes(v, self._type_of_value(heap, v))
            heap.refs[ref] = RefCell(Fraction(1), ident)
            return Pack(ident, Uniq(RefVal(ref), STAR)), "newRef"

        u = args[0]
        if not (isinstance(u, Uniq) and isinstance(u.body, RefVal)):
            raise StuckTerm(f"{name} applied to a non-reference: {u!r}")
        ref = u.body.ref
        cell = heap.refs.get(ref)
        if cell is None:
            raise MissingResource(f"{name}: reference {ref} is not in the heap")
        res = heap.resources.get(cell.ident)
        if res is None:
            raise MissingResource(f"{name}: resource {cell.ident} has been deleted")

        if name == "readArray":
            idx = _nat_arg(args[1], name)
            return Pair(FloatLit(arr_read(res, idx)), u), "readArray"
        if name == "writeArray":
            idx = _nat_arg(args[1], name)
            val = _float_arg(args[2], name)
            arr_write(res, idx, val)
            return u, "writeArray"
        if name == "deleteArray":
            del heap.refs[ref]
            del heap.resources[cell.ident]
            return UnitVal(), "deleteArray"
        if name == "readRef":
            if not isinstance(res.value, Promote):
                raise StuckTerm("readRef on a cell whose payload is not boxed")
            # mirror the static accounting in the stored type: each read
            # lowers the payload grade by one (the boxed value is unchanged)
            if isinstance(res.ty, S.Box):
                lowered = G.grade_minus_one(res.ty.grade)
                if lowered is not None:
                    res.ty = S.Box(lowered, res.ty.body)
            return Pair(res.value.body, u), "readRef"
        if name == "swapRef":
            old = res.value
            res.value = args[1]
            res.ty = self._type_of_value(heap, args[1])
            return Pair(old, u), "swapRef"
        if name == "deleteRef":
            del heap.refs[ref]
            del heap.resources[cell.ident]
            return res.value, "deleteRef"
        raise StuckTerm(f"unknown primitive {name}")

    # -- split/join on nested values ---------------------------------------------

    def _split_value(self, heap: Heap, w: Term) -> tuple[Term, Term]:
        match w:
            case RefVal(r):
                cell = heap.refs.pop(r, None)
                if cell is None:
                    raise MissingResource(f"split: reference {r} is not in the heap")
                half = cell.perm if self.mutate_split else cell.perm / 2
                r1, r2 = heap.fresh_ref(), heap.fresh_ref()
                heap.refs[r1] = RefCell(half, cell.ident)
                heap.refs[r2] = RefCell(half, cell.ident)
                return RefVal(r1), RefVal(r2)
            case Pair(a, b):
                a1, a2 = self._split_value(heap, a)
                b1, b2 = self._split_value(heap, b)
                return Pair(a1, b1), Pair(a2, b2)
            case _:
                raise StuckTerm(f"cannot split the value {w!r}")

    def _join_value(self, heap: Heap, w1: Term, w2: Term) -> Term:
        match (w1, w2):
            case (RefVal(r1), RefVal(r2)):
                c1 = heap.refs.pop(r1, None)
                c2 = heap.refs.pop(r2, None)
                if c1 is None or c2 is None:
                    raise MissingResource("join: reference is not in the heap")
                if c1.ident != c2.ident:
                    raise StuckTerm("join of references to different resources")
                r3 = heap.fresh_ref()
                heap.refs[r3] = RefCell(c1.perm + c2.perm, c1.ident)
                return RefVal(r3)
            case (Pair(a1, b1), Pair(a2, b2)):
                return Pair(self._join_value(heap, a1, a2), self._join_value(heap, b1, b2))
            case _:
                raise StuckTerm(f"cannot join the values {w1!r} and {w2!r}")

    # -- clone -------------------------------------------------------------------

    def _copy_beta(self, heap: Heap, t: Clone, w: Term, s: Grade) -> Term:
        # Close the fragment over references reachable through stored values.
        # Identifiers are discovered depth-first through each reference's
        # cell, mirroring the left-to-right walk of the payload type that
        # fixed the order of the surface binders.
        seen_refs: list[str] = []
        idents: list[str] = []

        def discover(value: Term) -> None:
            for ref in _ref_order(value):
                if ref in seen_refs:
                    continue
                seen_refs.append(ref)
                cell = heap.refs.get(ref)
                if cell is None:
                    raise MissingResource(f"clone: reference {ref} is not in the heap")
                res = heap.resources.get(cell.ident)
                if res is None:
                    raise MissingResource(f"clone: resource {cell.ident} has been deleted")
                if cell.ident not in idents:
                    idents.append(cell.ident)
                    if not res.is_array:
                        discover(res.value)

        discover(w)
        sub = Heap(counter=heap.counter)
        for ident in idents:
            sub.resources[ident] = heap.resources[ident]
        for ref in seen_refs:
            sub.refs[ref] = heap.refs[ref]
        fragment, theta, new_ids = heap_copy(sub)
        heap.counter = fragment.counter
        heap.resources.update(fragment.resources)
        heap.refs.update(fragment.refs)
        ident_map = {old: new for old, new in zip(idents, new_ids)}
        # surface identifiers map onto the fresh copies of the payload type's
        # identifiers; unelaborated terms fall back to discovery order
        olds = t.old_idents if t.old_idents is not None else tuple(idents)
        if len(t.idents) != len(olds):
            raise StuckTerm(f"clone binds {len(t.idents)} identifiers, the payload carries {len(olds)}")
        name_env = {}
        for surf, old in zip(t.idents, olds):
            if old in ident_map:
                name_env[surf] = ident_map[old]
            else:
                # a type-level identifier with no reachable resource in the
                # value (e.g. only mentioned by a stored function's domain)
                name_env[surf] = heap.fresh_ident()
        copied = Uniq(rename_refs(theta, w), STAR)
        fx = heap.fresh_var(t.binder)
        ty = t.bann
        if ty is not None:
            ty = S.type_subst_names(ty, name_env)
        heap.vars[fx] = VarCell(s, copied, ty)
        body = subst_names(t.body, name_env)
        return subst(body, t.binder, Var(fx))

    # -- helpers -----------------------------------------------------------------

    def _type_of_value(self, heap: Heap, v: Term) -> Optional[Type]:
        from .typecheck import Checker, CheckError, runtime_ctx

        try:
            ty, _, _ = Checker(self.ring).infer(runtime_ctx(heap, self.ring), v)
            return ty
        except CheckError:
            return None


def _ref_order(t: Term) -> list[str]:
    match t:
        case RefVal(r):
            return [r]
        case _:
            out: list[str] = []
            for c in S._children(t):
                for r in _ref_order(c):
                    if r not in out:
                        out.append(r)
            return out


def _nat_arg(t: Term, name: str) -> int:
    if not isinstance(t, NatLit):
        raise StuckTerm(f"{name} index is not a natural number: {t!r}")
    return t.value


def _float_arg(t: Term, name: str) -> float:
    if not isinstance(t, FloatLit):
        raise StuckTerm(f"{name} value is not a float: {t!r}")
    return t.value
