"""Usage-synthesizing typechecker.

Checking is bidirectional: `infer` synthesizes a type, `check` pushes an
expected type inward. Both return the exact per-variable usage, which binder
rules compare against declared grades, and an elaborated copy of the term in
which binder annotations and box grades have been filled in (the machine
needs those to run). Top-level definitions other than main must be closed
values and are inlined into use sites during elaboration.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Union

from . import grades as G
from .grades import Grade, Permission, Semiring, STAR, WHOLE, grade_add, grade_leq, grade_mul
from . import syntax as S
from .syntax import (
    Abs, Amp, App, Box, Clone, ExistsT, FloatLit, FloatT, Forall, Fun, Join,
    LetBox, LetPair, LetUnit, Loc, NameT, NatLit, NatT, Pack, Pair, PermExpr,
    PermVar, Prim, Prod, Promote, Pull, Push, RefVal, ResT, Share, Split,
    Term, Type, Unborrow, Uniq, UnitT, UnitVal, Unpack, Var, WithBorrow,
    free_vars, type_alpha_eq, type_free_names, type_free_perm_vars,
    type_subst_names, type_subst_perms, perm_expr_eq,
)

# TypeError kinds; every rejection names the violated rule via CheckError.rule.
LINEAR_REUSE = "LinearReuse"
LINEAR_UNUSED = "LinearUnused"
LINEAR_UNDER_PROMOTION = "LinearUnderPromotion"
GRADE_EXCEEDED = "GradeExceeded"
INSTANCE_MISMATCH = "InstanceMismatch"
PROMOTION_OF_ALLOCATOR = "PromotionOfAllocator"
PERMISSION_NOT_WRITABLE = "PermissionNotWritable"
STAR_NOT_DIVISIBLE = "StarNotDivisible"
PERMISSION_OVERFLOW = "PermissionOverflow"
ID_ESCAPES = "IdEscapes"
MISMATCH = "Mismatch"
UNBOUND_VARIABLE = "UnboundVariable"
STAR_NOT_ADDABLE = "StarNotAddable"


class CheckError(Exception):
    def __init__(self, kind: str, msg: str, loc: Optional[Loc] = None, rule: str = ""):
        self.kind = kind
        self.msg = msg
        self.loc = loc
        self.rule = rule or kind
        super().__init__(self.render("<input>"))

    def render(self, path: str) -> str:
        where = f"{path}:{self.loc}: " if self.loc else f"{path}: "
        return f"{where}[{self.kind}] {self.msg}"

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "rule": self.rule,
            "message": self.msg,
            "line": self.loc.line if self.loc else None,
            "col": self.loc.col if self.loc else None,
        }


# ---------------------------------------------------------------------------
# Contexts and usage


@dataclass(frozen=True)
class LinearEntry:
    ty: Type


@dataclass(frozen=True)
class GradedEntry:
    ty: Type
    grade: Grade


@dataclass(frozen=True)
class RefEntry:
    kind: str  # Array | Ref
    ident: str
    payload: Type


@dataclass
class Ctx:
    """A typing context: term variables, name identifiers, runtime references."""

    ring: Semiring
    vars: dict[str, Union[LinearEntry, GradedEntry]] = field(default_factory=dict)
    names: frozenset = frozenset()
    refs: dict[str, RefEntry] = field(default_factory=dict)
    perm_vars: frozenset = frozenset()
    name_vars: frozenset = frozenset()
    lenient_names: bool = False  # runtime contexts treat identifiers as global

    def bind(self, name: str, entry) -> "Ctx":
        if name in self.vars:
            raise CheckError(MISMATCH, f"variable {name!r} bound twice", rule="context")
        return replace(self, vars={**self.vars, name: entry})

    def bind_name(self, ident: str) -> "Ctx":
        return replace(self, names=self.names | {ident})

    def has_name(self, ident: str) -> bool:
        return self.lenient_names or ident in self.names or ident in self.name_vars


def _is_structural(ty: Type) -> bool:
    # numeric base types may be duplicated and discarded freely
    return isinstance(ty, (NatT, FloatT))


@dataclass
class Usage:
    """Per-variable synthesized usage plus referenced names and references."""

    linear: dict[str, bool] = field(default_factory=dict)  # var -> structural?
    graded: dict[str, Grade] = field(default_factory=dict)
    names: set[str] = field(default_factory=set)
    refs: set[str] = field(default_factory=set)

    def without(self, *names: str) -> "Usage":
        return Usage(
            {k: v for k, v in self.linear.items() if k not in names},
            {k: v for k, v in self.graded.items() if k not in names},
            set(self.names) - set(names),
            set(self.refs),
        )


def ctx_add(u1: Usage, u2: Usage, loc: Optional[Loc] = None) -> Usage:
    linear = dict(u1.linear)
    for x, structural in u2.linear.items():
        if x in linear and not (structural and linear[x]):
            raise CheckError(LINEAR_REUSE, f"linear variable {x!r} used more than once", loc, rule="context-add")
        linear[x] = structural and linear.get(x, True)
    graded = dict(u1.graded)
    for x, g in u2.graded.items():
        graded[x] = grade_add(graded[x], g) if x in graded else g
    return Usage(linear, graded, u1.names | u2.names, u1.refs | u2.refs)


def ctx_scale(r: Grade, u: Usage, loc: Optional[Loc] = None) -> Usage:
    hard = [x for x, structural in u.linear.items() if not structural]
    if hard:
        raise CheckError(
            LINEAR_UNDER_PROMOTION,
            f"cannot scale a context with linear assumptions ({', '.join(sorted(hard))})",
            loc,
            rule="promotion",
        )
    graded = {x: grade_mul(r, g) for x, g in u.graded.items()}
    # structural uses survive scaling unchanged; names and refs are preserved
    return Usage(dict(u.linear), graded, set(u.names), set(u.refs))


# ---------------------------------------------------------------------------
# The resource-allocator predicate


def resource_allocator(t: Term) -> bool:
    """Whether newArray/newRef occurs in reduction position.

    Abstractions never count regardless of body, since reduction does not
    go under a lambda; the bare allocation primitives count, and every
    other compound form is the disjunction over its immediate subterms.
    """
    match t:
        case Var() | NatLit() | FloatLit() | UnitVal() | RefVal():
            return False
        case Abs():
            return False
        case Prim(name):
            return name in ("newArray", "newRef")
        case _:
            return any(resource_allocator(c) for c in S._children(t))


# ---------------------------------------------------------------------------
# Type utilities


def types_equal(a: Type, b: Type) -> bool:
    return type_alpha_eq(a, b)


def _arg_type_fits(actual: Type, expected: Type) -> bool:
    """Structural equality, with grade approximation at a top-level box."""
    if isinstance(actual, Box) and isinstance(expected, Box):
        try:
            return grade_leq(actual.grade, expected.grade) and types_equal(actual.body, expected.body)
        except G.InstanceMismatch:
            return False
    return types_equal(actual, expected)


def unify(pattern: Type, concrete: Type, bindable: set[str], sol: dict) -> bool:
    """One-way unification binding quantified permission/name variables."""
    match (pattern, concrete):
        case (Fun(d1, c1), Fun(d2, c2)):
            return unify(d1, d2, bindable, sol) and unify(c1, c2, bindable, sol)
        case (Prod(l1, r1), Prod(l2, r2)):
            return unify(l1, l2, bindable, sol) and unify(r1, r2, bindable, sol)
        case (UnitT(), UnitT()) | (NatT(), NatT()) | (FloatT(), FloatT()):
            return True
        case (Box(g1, t1), Box(g2, t2)):
            return g1 == g2 and unify(t1, t2, bindable, sol)
        case (Amp(p1, t1), Amp(p2, t2)):
            if isinstance(p1, PermVar) and p1.name in bindable:
                if p1.name in sol:
                    if not perm_expr_eq(sol[p1.name], p2):
                        return False
                else:
                    sol[p1.name] = p2
                return unify(t1, t2, bindable, sol)
            return perm_expr_eq(p1, p2) and unify(t1, t2, bindable, sol)
        case (ExistsT(i1, t1), ExistsT(i2, t2)):
            # rename to a common fresh marker so binders do not interfere
            mark = f"!u{len(sol)}"
            return unify(type_subst_names(t1, {i1: mark}), type_subst_names(t2, {i2: mark}), bindable, sol)
        case (ResT(k1, i1, t1), ResT(k2, i2, t2)):
            if k1 != k2:
                return False
            if i1 in bindable:
                if i1 in sol:
                    if sol[i1] != i2:
                        return False
                else:
                    sol[i1] = i2
            elif i1 != i2:
                return False
            return unify(t1, t2, bindable, sol)
        case (NameT(i1), NameT(i2)):
            if i1 in bindable:
                if i1 in sol and sol[i1] != i2:
                    return False
                sol[i1] = i2
                return True
            return i1 == i2
        case _:
            return False


def apply_solution(ty: Type, binders: tuple[tuple[str, str], ...], sol: dict) -> Type:
    perm_env = {v: sol[v] for v, k in binders if k == "Permission" and v in sol}
    name_env = {v: sol[v] for v, k in binders if k == "Name" and v in sol}
    return type_subst_perms(type_subst_names(ty, name_env), perm_env)


def apply_solution_term(t: Term, binders: tuple[tuple[str, str], ...], sol: dict) -> Term:
    name_env = {v: sol[v] for v, k in binders if k == "Name" and v in sol}
    out = S.subst_names(t, name_env)
    perm_env = {v: sol[v] for v, k in binders if k == "Permission" and v in sol}
    if perm_env:
        out = _subst_perms_term(out, perm_env)
    return out


def _subst_perms_term(t: Term, env: dict) -> Term:
    changes = {}
    for f in S.fields(t):
        v = getattr(t, f.name)
        if isinstance(v, Term):
            changes[f.name] = _subst_perms_term(v, env)
        elif isinstance(v, Type):
            changes[f.name] = type_subst_perms(v, env)
    return S._rebuild(t, **changes) if changes else t


# ---------------------------------------------------------------------------
# The checker


@dataclass
class GlobalDef:
    signature: Type
    body: Term  # elaborated


class Checker:
    def __init__(self, ring: Semiring, globals_: Optional[dict[str, GlobalDef]] = None):
        self.ring = ring
        self.globals = globals_ or {}

    # Binders that shadow an in-scope variable (or identifier) are renamed on
    # the fly, so contexts never bind a name twice; the elaborated term keeps
    # the fresh names.

    def _freshen_var(self, x: str, ctx: Ctx, *bodies: Term) -> tuple[str, tuple[Term, ...]]:
        if x not in ctx.vars:
            return x, bodies
        avoid = set(ctx.vars)
        for b in bodies:
            avoid |= free_vars(b)
        x2 = S.fresh_name(x, avoid)
        return x2, tuple(S.subst(b, x, Var(x2)) for b in bodies)

    def _freshen_name(self, i: str, ctx: Ctx, *bodies: Term) -> tuple[str, tuple[Term, ...]]:
        if i not in ctx.names and i not in ctx.name_vars:
            return i, bodies
        i2 = S.fresh_name(i, set(ctx.names) | set(ctx.name_vars))
        return i2, tuple(S.subst_names(b, {i: i2}) for b in bodies)

    # -- entry points --------------------------------------------------------

    def infer(self, ctx: Ctx, t: Term) -> tuple[Type, Usage, Term]:
        match t:
            case Var(n):
                if n in ctx.vars:
                    entry = ctx.vars[n]
                    if isinstance(entry, LinearEntry):
                        return entry.ty, Usage(linear={n: _is_structural(entry.ty)}), t
                    return entry.ty, Usage(graded={n: self.ring.one}), t
                if n in self.globals:
                    g = self.globals[n]
                    return g.signature, Usage(), g.body
                raise CheckError(UNBOUND_VARIABLE, f"unbound variable {n!r}", t.loc, rule="var")
            case NatLit():
                return NatT(), Usage(), t
            case FloatLit():
                return FloatT(), Usage(), t
            case UnitVal():
                return UnitT(), Usage(), t
            case Pair(l, r):
                tl, ul, el = self.infer(ctx, l)
                tr, ur, er = self.infer(ctx, r)
                return Prod(tl, tr), ctx_add(ul, ur, t.loc), S._rebuild(t, left=el, right=er)
            case Abs(p, body, ann):
                if ann is None:
                    raise CheckError(MISMATCH, "cannot infer the type of an unannotated function", t.loc, rule="abs")
                self._check_wf(ann, ctx, t.loc)
                p, (body,) = self._freshen_var(p, ctx, body)
                ctx2 = ctx.bind(p, LinearEntry(ann))
                tb, ub, eb = self.infer(ctx2, body)
                ub = self._pop_linear(ub, p, ann, t.loc)
                return Fun(ann, tb), ub, S._rebuild(t, param=p, body=eb)
            case App():
                return self._infer_app(ctx, t)
            case LetPair(x, y, rhs, body):
                tr, ur, er = self.infer(ctx, rhs)
                if not isinstance(tr, Prod):
                    raise CheckError(MISMATCH, f"let (x, y) scrutinee has type {tr!r}, not a product", t.loc, rule="pair-elim")
                x, (body,) = self._freshen_var(x, ctx, body)
                ctx2 = ctx.bind(x, LinearEntry(tr.left))
                y, (body,) = self._freshen_var(y, ctx2, body)
                ctx2 = ctx2.bind(y, LinearEntry(tr.right))
                tb, ub, eb = self.infer(ctx2, body)
                ub = self._pop_linear(ub, x, tr.left, t.loc)
                ub = self._pop_linear(ub, y, tr.right, t.loc)
                return tb, ctx_add(ur, ub, t.loc), S._rebuild(t, left=x, right=y, rhs=er, body=eb, lann=tr.left, rann=tr.right)
            case LetUnit(rhs, body):
                tr, ur, er = self.infer(ctx, rhs)
                if not isinstance(tr, UnitT):
                    raise CheckError(MISMATCH, f"let () scrutinee has type {tr!r}, not Unit", t.loc, rule="unit-elim")
                tb, ub, eb = self.infer(ctx, body)
                return tb, ctx_add(ur, ub, t.loc), S._rebuild(t, rhs=er, body=eb)
            case Promote(body, grade):
                if grade is None:
                    raise CheckError(MISMATCH, "cannot infer the grade of a promotion; annotate the binding", t.loc, rule="promotion")
                # elaborated boxes record their grade, so runtime terms re-infer
                if resource_allocator(body):
                    raise CheckError(PROMOTION_OF_ALLOCATOR, "cannot promote a resource allocator", t.loc, rule="promotion")
                tb, ub, eb = self.infer(ctx, body)
                ub = ctx_scale(grade, ub, t.loc)
                return Box(grade, tb), ub, S._rebuild(t, body=eb)
            case LetBox(x, rhs, body, ann):
                if ann is not None:
                    self._check_wf(ann, ctx, t.loc)
                    if not isinstance(ann, Box):
                        raise CheckError(MISMATCH, f"let [x] annotation {ann!r} is not a box type", t.loc, rule="box-elim")
                    ur, er = self.check(ctx, rhs, ann)
                    tr = ann
                else:
                    tr, ur, er = self.infer(ctx, rhs)
                    if not isinstance(tr, Box):
                        raise CheckError(MISMATCH, f"let [x] scrutinee has type {tr!r}, not a box", t.loc, rule="box-elim")
                x, (body,) = self._freshen_var(x, ctx, body)
                ctx2 = ctx.bind(x, GradedEntry(tr.body, tr.grade))
                tb, ub, eb = self.infer(ctx2, body)
                ub = self._pop_graded(ub, x, tr.grade, t.loc)
                return tb, ctx_add(ur, ub, t.loc), S._rebuild(t, binder=x, rhs=er, body=eb, ann=tr)
            case Pack(i, body):
                if not ctx.has_name(i):
                    raise CheckError(UNBOUND_VARIABLE, f"unknown identifier {i!r} in pack", t.loc, rule="pack")
                tb, ub, eb = self.infer(ctx, body)
                ub = Usage(ub.linear, ub.graded, ub.names | {i}, ub.refs)
                return ExistsT(i, tb), ub, S._rebuild(t, body=eb)
            case Unpack():
                return self._unpack(ctx, t, expected=None)
            case WithBorrow():
                return self._with_borrow(ctx, t, expected=None)
            case Split(body):
                tb, ub, eb = self.infer(ctx, body)
                if not isinstance(tb, Amp):
                    raise CheckError(MISMATCH, f"split expects a borrowed value, got {tb!r}", t.loc, rule="split")
                p = tb.perm
                if not isinstance(p, Permission) or p.is_star:
                    raise CheckError(
                        STAR_NOT_DIVISIBLE,
                        "split is defined only for fractional permissions",
                        t.loc,
                        rule="split",
                    )
                half = G.perm_half(p)
                return Prod(Amp(half, tb.body), Amp(half, tb.body)), ub, S._rebuild(t, body=eb)
            case Join(body):
                tb, ub, eb = self.infer(ctx, body)
                if not (isinstance(tb, Prod) and isinstance(tb.left, Amp) and isinstance(tb.right, Amp)):
                    raise CheckError(MISMATCH, f"join expects a pair of borrows, got {tb!r}", t.loc, rule="join")
                if not types_equal(tb.left.body, tb.right.body):
                    raise CheckError(
                        MISMATCH,
                        "join requires both borrows to reference the same value type",
                        t.loc,
                        rule="join",
                    )
                p, q = tb.left.perm, tb.right.perm
                if not (isinstance(p, Permission) and isinstance(q, Permission)):
                    raise CheckError(MISMATCH, "join is not defined at abstract permissions", t.loc, rule="join")
                try:
                    total = G.perm_add(p, q)
                except G.StarNotAddable as e:
                    raise CheckError(STAR_NOT_ADDABLE, str(e), t.loc, rule="join")
                except G.PermissionOverflow as e:
                    raise CheckError(PERMISSION_OVERFLOW, str(e), t.loc, rule="join")
                return Amp(total, tb.left.body), ub, S._rebuild(t, body=eb)
            case Push(body):
                tb, ub, eb = self.infer(ctx, body)
                if not (isinstance(tb, Amp) and isinstance(tb.body, Prod)):
                    raise CheckError(MISMATCH, f"push expects a borrowed product, got {tb!r}", t.loc, rule="push")
                return Prod(Amp(tb.perm, tb.body.left), Amp(tb.perm, tb.body.right)), ub, S._rebuild(t, body=eb)
            case Pull(body):
                tb, ub, eb = self.infer(ctx, body)
                if not (isinstance(tb, Prod) and isinstance(tb.left, Amp) and isinstance(tb.right, Amp)):
                    raise CheckError(MISMATCH, f"pull expects a pair of borrows, got {tb!r}", t.loc, rule="pull")
                if not perm_expr_eq(tb.left.perm, tb.right.perm):
                    raise CheckError(
                        MISMATCH,
                        "pull requires both components at the same permission",
                        t.loc,
                        rule="pull",
                    )
                return Amp(tb.left.perm, Prod(tb.left.body, tb.right.body)), ub, S._rebuild(t, body=eb)
            case Share():
                raise CheckError(MISMATCH, "cannot infer the grade of share; annotate the use site", t.loc, rule="share")
            case Clone():
                return self._clone(ctx, t, expected=None)
            case Prim(name):
                if name == "newArray":
                    return self._prim_result_type("newArray", [], t.loc), Usage(), t
                raise CheckError(MISMATCH, f"primitive {name} must be applied to its resource argument", t.loc, rule="prim")
            case Uniq(body, perm):
                tb, ub, eb = self.infer(ctx, body)
                return Amp(perm, tb), ub, S._rebuild(t, body=eb)
            case Unborrow(body):
                tb, ub, eb = self.infer(ctx, body)
                if not (isinstance(tb, Amp) and isinstance(tb.perm, Permission) and tb.perm == WHOLE):
                    raise CheckError(MISMATCH, f"unborrow expects a whole borrow, got {tb!r}", t.loc, rule="unborrow")
                return Amp(STAR, tb.body), ub, S._rebuild(t, body=eb)
            case RefVal(r):
                if r not in ctx.refs:
                    raise CheckError(UNBOUND_VARIABLE, f"unknown reference {r!r}", t.loc, rule="ref")
                e = ctx.refs[r]
                return ResT(e.kind, e.ident, e.payload), Usage(refs={r}), t
            case _:
                raise CheckError(MISMATCH, f"cannot infer a type for {t!r}", t.loc, rule="infer")

    def check(self, ctx: Ctx, t: Term, expected: Type) -> tuple[Usage, Term]:
        match t:
            case Abs(p, body, ann):
                if not isinstance(expected, Fun):
                    raise CheckError(MISMATCH, f"function given non-function type {expected!r}", t.loc, rule="abs")
                if ann is not None and not types_equal(ann, expected.dom):
                    raise CheckError(MISMATCH, f"annotation {ann!r} conflicts with expected domain {expected.dom!r}", t.loc, rule="abs")
                p, (body,) = self._freshen_var(p, ctx, body)
                ctx2 = ctx.bind(p, LinearEntry(expected.dom))
                ub, eb = self.check(ctx2, body, expected.cod)
                ub = self._pop_linear(ub, p, expected.dom, t.loc)
                return ub, S._rebuild(t, param=p, body=eb, ann=expected.dom)
            case Pair(l, r) if isinstance(expected, Prod):
                ul, el = self.check(ctx, l, expected.left)
                ur, er = self.check(ctx, r, expected.right)
                return ctx_add(ul, ur, t.loc), S._rebuild(t, left=el, right=er)
            case Promote(body):
                if not isinstance(expected, Box):
                    raise CheckError(MISMATCH, f"promotion given non-box type {expected!r}", t.loc, rule="promotion")
                if resource_allocator(body):
                    raise CheckError(
                        PROMOTION_OF_ALLOCATOR,
                        "cannot promote a resource allocator",
                        t.loc,
                        rule="promotion",
                    )
                ub, eb = self.check(ctx, body, expected.body)
                ub = ctx_scale(expected.grade, ub, t.loc)
                return ub, S._rebuild(t, body=eb, grade=expected.grade)
            case Share(body):
                if not isinstance(expected, Box):
                    raise CheckError(MISMATCH, f"share produces a box, but {expected!r} was expected", t.loc, rule="share")
                ub, eb = self.check(ctx, body, Amp(STAR, expected.body))
                return ub, S._rebuild(t, body=eb, grade=expected.grade)
            case Pack(i, body) if isinstance(expected, ExistsT):
                if not ctx.has_name(i):
                    raise CheckError(UNBOUND_VARIABLE, f"unknown identifier {i!r} in pack", t.loc, rule="pack")
                inner = type_subst_names(expected.body, {expected.binder: i})
                ub, eb = self.check(ctx, body, inner)
                ub = Usage(ub.linear, ub.graded, ub.names | {i}, ub.refs)
                return ub, S._rebuild(t, body=eb)
            case LetPair(x, y, rhs, body):
                tr, ur, er = self.infer(ctx, rhs)
                if not isinstance(tr, Prod):
                    raise CheckError(MISMATCH, f"let (x, y) scrutinee has type {tr!r}, not a product", t.loc, rule="pair-elim")
                x, (body,) = self._freshen_var(x, ctx, body)
                ctx2 = ctx.bind(x, LinearEntry(tr.left))
                y, (body,) = self._freshen_var(y, ctx2, body)
                ctx2 = ctx2.bind(y, LinearEntry(tr.right))
                ub, eb = self.check(ctx2, body, expected)
                ub = self._pop_linear(ub, x, tr.left, t.loc)
                ub = self._pop_linear(ub, y, tr.right, t.loc)
                return ctx_add(ur, ub, t.loc), S._rebuild(t, left=x, right=y, rhs=er, body=eb, lann=tr.left, rann=tr.right)
            case LetUnit(rhs, body):
                ur, er = self.check(ctx, rhs, UnitT())
                ub, eb = self.check(ctx, body, expected)
                return ctx_add(ur, ub, t.loc), S._rebuild(t, rhs=er, body=eb)
            case LetBox(x, rhs, body, ann):
                if ann is not None:
                    self._check_wf(ann, ctx, t.loc)
                    if not isinstance(ann, Box):
                        raise CheckError(MISMATCH, f"let [x] annotation {ann!r} is not a box type", t.loc, rule="box-elim")
                    ur, er = self.check(ctx, rhs, ann)
                    tr = ann
                else:
                    tr, ur, er = self.infer(ctx, rhs)
                    if not isinstance(tr, Box):
                        raise CheckError(MISMATCH, f"let [x] scrutinee has type {tr!r}, not a box", t.loc, rule="box-elim")
                x, (body,) = self._freshen_var(x, ctx, body)
                ctx2 = ctx.bind(x, GradedEntry(tr.body, tr.grade))
                ub, eb = self.check(ctx2, body, expected)
                ub = self._pop_graded(ub, x, tr.grade, t.loc)
                return ctx_add(ur, ub, t.loc), S._rebuild(t, binder=x, rhs=er, body=eb, ann=tr)
            case Unpack():
                _, u, e = self._unpack(ctx, t, expected)
                return u, e
            case WithBorrow():
                _, u, e = self._with_borrow(ctx, t, expected)
                return u, e
            case Clone():
                _, u, e = self._clone(ctx, t, expected)
                return u, e
            case App():
                ty, u, e = self._infer_app(ctx, t, expected)
                if not _arg_type_fits(ty, expected):
                    raise CheckError(MISMATCH, f"expected {expected!r} but found {ty!r}", t.loc, rule="app")
                return u, e
            case Uniq(body, perm) if isinstance(expected, Amp):
                if not perm_expr_eq(perm, expected.perm):
                    raise CheckError(MISMATCH, f"wrapper permission {perm} does not match {expected.perm}", t.loc, rule="nec")
                ub, eb = self.check(ctx, body, expected.body)
                return ub, S._rebuild(t, body=eb)
            case Unborrow(body):
                if not (isinstance(expected, Amp) and isinstance(expected.perm, Permission) and expected.perm.is_star):
                    raise CheckError(MISMATCH, f"unborrow produces an owned value, but {expected!r} was expected", t.loc, rule="unborrow")
                ub, eb = self.check(ctx, body, Amp(WHOLE, expected.body))
                return ub, S._rebuild(t, body=eb)
            case _:
                ty, u, e = self.infer(ctx, t)
                if not _arg_type_fits(ty, expected):
                    raise CheckError(MISMATCH, f"expected {expected!r} but found {ty!r}", t.loc, rule="check")
                return u, e

    # -- composite rules ------------------------------------------------------

    def _infer_app(self, ctx: Ctx, t: App, expected: Optional[Type] = None) -> tuple[Type, Usage, Term]:
        spine = S.prim_spine(t)
        if spine is not None:
            return self._prim_app(ctx, t, spine, expected)
        fn, arg = t.fn, t.arg
        if isinstance(fn, Abs):
            # beta-redex: learn the argument type first
            if fn.ann is not None:
                self._check_wf(fn.ann, ctx, t.loc)
                ua, ea = self.check(ctx, arg, fn.ann)
                ta = fn.ann
            else:
                ta, ua, ea = self.infer(ctx, arg)
            param, (fbody,) = self._freshen_var(fn.param, ctx, fn.body)
            ctx2 = ctx.bind(param, LinearEntry(ta))
            if expected is not None:
                ub, eb = self.check(ctx2, fbody, expected)
                tb = expected
            else:
                tb, ub, eb = self.infer(ctx2, fbody)
            ub = self._pop_linear(ub, param, ta, t.loc)
            efn = S._rebuild(fn, param=param, body=eb, ann=ta)
            return tb, ctx_add(ub, ua, t.loc), S._rebuild(t, fn=efn, arg=ea)
        tf, uf, ef = self.infer(ctx, fn)
        if isinstance(tf, Forall):
            ta, ua, ea = self.infer(ctx, arg)
            tf2, ef = self._instantiate(tf, ef, ta, expected, t.loc)
            if not isinstance(tf2, Fun):
                raise CheckError(MISMATCH, f"applied a non-function of type {tf2!r}", t.loc, rule="app")
            if not _arg_type_fits(ta, tf2.dom):
                raise CheckError(MISMATCH, f"argument type {ta!r} does not match domain {tf2.dom!r}", t.loc, rule="app")
            return tf2.cod, ctx_add(uf, ua, t.loc), S._rebuild(t, fn=ef, arg=ea)
        if not isinstance(tf, Fun):
            raise CheckError(MISMATCH, f"applied a non-function of type {tf!r}", t.loc, rule="app")
        ua, ea = self.check(ctx, arg, tf.dom)
        return tf.cod, ctx_add(uf, ua, t.loc), S._rebuild(t, fn=ef, arg=ea)

    def _instantiate(self, tf: Forall, ef: Term, arg_ty: Type, expected: Optional[Type], loc) -> tuple[Type, Term]:
        if not isinstance(tf.body, Fun):
            raise CheckError(MISMATCH, "quantified definition is not a function", loc, rule="app")
        bindable = {v for v, _ in tf.binders}
        sol: dict = {}
        if not unify(tf.body.dom, arg_ty, bindable, sol):
            raise CheckError(
                MISMATCH,
                f"cannot instantiate {tf!r} at argument type {arg_ty!r}",
                loc,
                rule="app",
            )
        if expected is not None and len(sol) < len(bindable):
            unify(tf.body.cod, expected, bindable, sol)
        missing = bindable - set(sol)
        if missing:
            raise CheckError(MISMATCH, f"cannot determine {', '.join(sorted(missing))} at this call site", loc, rule="app")
        ty = apply_solution(tf.body, tf.binders, sol)
        return ty, apply_solution_term(ef, tf.binders, sol)

    def _prim_app(self, ctx: Ctx, t: App, spine, expected: Optional[Type]) -> tuple[Type, Usage, Term]:
        name, args = spine
        arity = S.PRIMITIVES[name]
        if len(args) > arity:
            raise CheckError(MISMATCH, f"{name} applied to too many arguments", t.loc, rule=name)
        usage = Usage()
        elabs: list[Term] = []
        tys: list[Type] = []
        for i, a in enumerate(args):
            if name == "newRef" and i == 0 and isinstance(expected, ExistsT):
                # the expected existential fixes the payload type, so the
                # stored value may be checked rather than inferred
                inner = expected.body
                if (
                    isinstance(inner, Amp)
                    and isinstance(inner.perm, Permission)
                    and inner.perm.is_star
                    and isinstance(inner.body, ResT)
                    and inner.body.kind == "Ref"
                    and expected.binder not in type_free_names(inner.body.payload)
                ):
                    ua, ea = self.check(ctx, a, inner.body.payload)
                    usage = ctx_add(usage, ua, t.loc)
                    elabs.append(ea)
                    tys.append(inner.body.payload)
                    continue
            ta, ua, ea = self.infer(ctx, a)
            usage = ctx_add(usage, ua, t.loc)
            elabs.append(ea)
            tys.append(ta)
        ty = self._prim_result_type(name, tys, t.loc)
        # rebuild the spine with elaborated arguments
        out: Term = Prim(name, loc=t.loc)
        for ea in elabs:
            out = App(out, ea, loc=t.loc)
        return ty, usage, out

    def _prim_result_type(self, name: str, args: list[Type], loc) -> Type:
        if len(args) > S.PRIMITIVES[name]:
            raise CheckError(MISMATCH, f"{name} applied to too many arguments", loc, rule=name)
        return self._prim_result_type_full(name, args, loc)

    def _prim_result_type_full(self, name: str, args: list[Type], loc) -> Type:
        n = len(args)
        if name == "newArray":
            if n >= 1 and not types_equal(args[0], NatT()):
                raise CheckError(MISMATCH, f"newArray expects a Nat size, got {args[0]!r}", loc, rule=name)
            result = ExistsT("id", Amp(STAR, ResT("Array", "id", FloatT())))
            return result if n == 1 else Fun(NatT(), result)
        if name == "newRef":
            if n == 0:
                raise CheckError(MISMATCH, "newRef must be applied to its initial value", loc, rule=name)
            return ExistsT("id", Amp(STAR, ResT("Ref", "id", args[0])))
        if name in ("readArray", "writeArray", "deleteArray"):
            if n == 0:
                raise CheckError(MISMATCH, f"{name} must be applied to its array argument", loc, rule=name)
            ta = args[0]
            if not (isinstance(ta, Amp) and isinstance(ta.body, ResT) and ta.body.kind == "Array"):
                raise CheckError(MISMATCH, f"{name} expects an array reference, got {ta!r}", loc, rule=name)
            p, res = ta.perm, ta.body
            if name == "readArray":
                if n >= 2 and not types_equal(args[1], NatT()):
                    raise CheckError(MISMATCH, f"readArray index must be a Nat, got {args[1]!r}", loc, rule=name)
                result = Prod(FloatT(), Amp(p, res))
                return result if n == 2 else Fun(NatT(), result)
            if name == "writeArray":
                if not (isinstance(p, Permission) and G.perm_is_writable(p)):
                    raise CheckError(
                        PERMISSION_NOT_WRITABLE,
                        f"writing requires permission 1 or *, found {p}",
                        loc,
                        rule=name,
                    )
                if n >= 2 and not types_equal(args[1], NatT()):
                    raise CheckError(MISMATCH, f"writeArray index must be a Nat, got {args[1]!r}", loc, rule=name)
                if n >= 3 and not types_equal(args[2], FloatT()):
                    raise CheckError(MISMATCH, f"writeArray value must be a Float, got {args[2]!r}", loc, rule=name)
                result = Amp(p, res)
                if n == 3:
                    return result
                rest = Fun(FloatT(), result)
                return rest if n == 2 else Fun(NatT(), rest)
            # deleteArray
            if not (isinstance(p, Permission) and p.is_star):
                raise CheckError(MISMATCH, f"deleteArray consumes a uniquely owned array, found permission {p}", loc, rule=name)
            return UnitT()
        if name in ("readRef", "swapRef", "deleteRef"):
            if n == 0:
                raise CheckError(MISMATCH, f"{name} must be applied to its reference argument", loc, rule=name)
            ta = args[0]
            if not (isinstance(ta, Amp) and isinstance(ta.body, ResT) and ta.body.kind == "Ref"):
                raise CheckError(MISMATCH, f"{name} expects a Ref, got {ta!r}", loc, rule=name)
            p, res = ta.perm, ta.body
            if name == "readRef":
                if not isinstance(res.payload, Box):
                    raise CheckError(
                        MISMATCH,
                        f"readRef needs a graded payload to account for the extra use, got {res.payload!r}",
                        loc,
                        rule=name,
                    )
                lowered = G.grade_minus_one(res.payload.grade)
                if lowered is None:
                    raise CheckError(
                        GRADE_EXCEEDED,
                        f"readRef needs payload grade at least 1, found {res.payload.grade}",
                        loc,
                        rule=name,
                    )
                return Prod(res.payload.body, Amp(p, ResT("Ref", res.ident, Box(lowered, res.payload.body))))
            if name == "swapRef":
                if not (isinstance(p, Permission) and G.perm_is_writable(p)):
                    raise CheckError(
                        PERMISSION_NOT_WRITABLE,
                        f"swapping requires permission 1 or *, found {p}",
                        loc,
                        rule=name,
                    )
                if n >= 2 and not types_equal(args[1], res.payload):
                    raise CheckError(MISMATCH, f"swapRef value must have type {res.payload!r}, got {args[1]!r}", loc, rule=name)
                result = Prod(res.payload, Amp(p, res))
                return result if n == 2 else Fun(res.payload, result)
            # deleteRef
            if not (isinstance(p, Permission) and p.is_star):
                raise CheckError(MISMATCH, f"deleteRef consumes a uniquely owned reference, found permission {p}", loc, rule=name)
            return res.payload
        raise CheckError(MISMATCH, f"unknown primitive {name}", loc, rule="prim")

    def _unpack(self, ctx: Ctx, t: Unpack, expected: Optional[Type]) -> tuple[Type, Usage, Term]:
        tr, ur, er = self.infer(ctx, t.rhs)
        if not isinstance(tr, ExistsT):
            raise CheckError(MISMATCH, f"unpack scrutinee has type {tr!r}, not an existential", t.loc, rule="unpack")
        ident, (body,) = self._freshen_name(t.ident, ctx, t.body)
        binder, (body,) = self._freshen_var(t.binder, ctx, body)
        payload = type_subst_names(tr.body, {tr.binder: ident})
        ctx2 = ctx.bind_name(ident).bind(binder, LinearEntry(payload))
        if expected is not None:
            ub, eb = self.check(ctx2, body, expected)
            tb = expected
        else:
            tb, ub, eb = self.infer(ctx2, body)
        if ident in type_free_names(tb):
            raise CheckError(ID_ESCAPES, f"identifier {ident!r} escapes in the result type {tb!r}", t.loc, rule="unpack")
        ub = self._pop_linear(ub, binder, payload, t.loc)
        ub = ub.without(ident)
        return tb, ctx_add(ur, ub, t.loc), S._rebuild(t, ident=ident, binder=binder, rhs=er, body=eb, bann=payload)

    def _with_borrow(self, ctx: Ctx, t: WithBorrow, expected: Optional[Type]) -> tuple[Type, Usage, Term]:
        ta, ua, ea = self.infer(ctx, t.arg)
        if not (isinstance(ta, Amp) and isinstance(ta.perm, Permission) and ta.perm.is_star):
            raise CheckError(MISMATCH, f"withBorrow needs a uniquely owned value, got {ta!r}", t.loc, rule="withBorrow")
        inner = ta.body
        out_body: Optional[Type] = None
        if expected is not None:
            if not (isinstance(expected, Amp) and isinstance(expected.perm, Permission) and expected.perm.is_star):
                raise CheckError(MISMATCH, f"withBorrow produces an owned value, but {expected!r} was expected", t.loc, rule="withBorrow")
            out_body = expected.body
        fn = t.fn
        if isinstance(fn, Abs) and fn.ann is None:
            param, (fbody,) = self._freshen_var(fn.param, ctx, fn.body)
            ctx2 = ctx.bind(param, LinearEntry(Amp(WHOLE, inner)))
            if out_body is not None:
                ub, eb = self.check(ctx2, fbody, Amp(WHOLE, out_body))
                tb = Amp(WHOLE, out_body)
            else:
                tb, ub, eb = self.infer(ctx2, fbody)
                if not (isinstance(tb, Amp) and isinstance(tb.perm, Permission) and tb.perm == WHOLE):
                    raise CheckError(MISMATCH, f"the borrowing function must return a whole borrow, got {tb!r}", t.loc, rule="withBorrow")
            ub = self._pop_linear(ub, param, Amp(WHOLE, inner), t.loc)
            efn = S._rebuild(fn, param=param, body=eb, ann=Amp(WHOLE, inner))
            return Amp(STAR, tb.body), ctx_add(ub, ua, t.loc), S._rebuild(t, fn=efn, arg=ea)
        tf, uf, ef = self.infer(ctx, fn)
        if isinstance(tf, Forall):
            want = Fun(Amp(WHOLE, inner), Amp(WHOLE, out_body) if out_body is not None else Amp(WHOLE, inner))
            bindable = {v for v, _ in tf.binders}
            sol: dict = {}
            if not unify(tf.body, want, bindable, sol) or len(sol) < len(bindable):
                raise CheckError(MISMATCH, f"cannot instantiate {tf!r} as a borrowing function", t.loc, rule="withBorrow")
            binders = tf.binders
            tf = apply_solution(tf.body, binders, sol)
            ef = apply_solution_term(ef, binders, sol)
        if not (
            isinstance(tf, Fun)
            and isinstance(tf.dom, Amp)
            and isinstance(tf.cod, Amp)
            and isinstance(tf.dom.perm, Permission)
            and isinstance(tf.cod.perm, Permission)
            and tf.dom.perm == WHOLE
            and tf.cod.perm == WHOLE
        ):
            raise CheckError(MISMATCH, f"withBorrow needs a function between whole borrows, got {tf!r}", t.loc, rule="withBorrow")
        if not types_equal(tf.dom.body, inner):
            raise CheckError(MISMATCH, f"borrowing function domain {tf.dom.body!r} does not match {inner!r}", t.loc, rule="withBorrow")
        if out_body is not None and not types_equal(tf.cod.body, out_body):
            raise CheckError(MISMATCH, f"borrowing function returns {tf.cod.body!r}, expected {out_body!r}", t.loc, rule="withBorrow")
        return Amp(STAR, tf.cod.body), ctx_add(uf, ua, t.loc), S._rebuild(t, fn=ef, arg=ea)

    def _clone(self, ctx: Ctx, t: Clone, expected: Optional[Type]) -> tuple[Type, Usage, Term]:
        tr, ur, er = self.infer(ctx, t.rhs)
        if not isinstance(tr, Box):
            raise CheckError(MISMATCH, f"clone expects a shared (boxed) value, got {tr!r}", t.loc, rule="clone")
        if not grade_leq(self.ring.one, tr.grade):
            raise CheckError(GRADE_EXCEEDED, f"clone needs one use of the box, but its grade is {tr.grade}", t.loc, rule="clone")
        old_ids = _names_in_order(tr.body)
        if len(old_ids) != len(t.idents):
            raise CheckError(
                MISMATCH,
                f"clone binds {len(t.idents)} identifiers but the value carries {len(old_ids)}",
                t.loc,
                rule="clone",
            )
        body = t.body
        idents = []
        ctx2 = ctx
        for i in t.idents:
            i2, (body,) = self._freshen_name(i, ctx2, body)
            idents.append(i2)
            ctx2 = ctx2.bind_name(i2)
        binder, (body,) = self._freshen_var(t.binder, ctx2, body)
        renaming = dict(zip(old_ids, idents))
        fresh_ty = Amp(STAR, type_subst_names(tr.body, renaming))
        ctx2 = ctx2.bind(binder, LinearEntry(fresh_ty))
        if expected is not None:
            ub, eb = self.check(ctx2, body, expected)
            tb = expected
        else:
            tb, ub, eb = self.infer(ctx2, body)
        escaped = set(idents) & type_free_names(tb)
        if escaped:
            raise CheckError(ID_ESCAPES, f"cloned identifiers escape in the result type: {', '.join(sorted(escaped))}", t.loc, rule="clone")
        ub = self._pop_linear(ub, binder, fresh_ty, t.loc)
        ub = ub.without(*idents)
        return tb, ctx_add(ur, ub, t.loc), S._rebuild(
            t, binder=binder, idents=tuple(idents), rhs=er, body=eb, bann=fresh_ty, old_idents=tuple(old_ids)
        )

    # -- binder bookkeeping ---------------------------------------------------

    def _pop_linear(self, u: Usage, x: str, ty: Type, loc) -> Usage:
        if x in u.linear:
            return u.without(x)
        if _is_structural(ty):
            return u.without(x)
        raise CheckError(LINEAR_UNUSED, f"linear variable {x!r} is never used", loc, rule="linear")

    def _pop_graded(self, u: Usage, x: str, declared: Grade, loc) -> Usage:
        if x in u.linear:
            used = self.ring.one
        else:
            used = u.graded.get(x, self.ring.zero)
        try:
            ok = grade_leq(used, declared)
        except G.InstanceMismatch as e:
            raise CheckError(INSTANCE_MISMATCH, str(e), loc, rule="box-elim")
        if not ok:
            raise CheckError(
                GRADE_EXCEEDED,
                f"variable {x!r} used {used} times, which the declared grade {declared} does not cover",
                loc,
                rule="approx",
            )
        return u.without(x)

    def _check_wf(self, ty: Type, ctx: Ctx, loc) -> None:
        for n in type_free_names(ty):
            if not ctx.has_name(n):
                raise CheckError(UNBOUND_VARIABLE, f"unknown identifier {n!r} in type {ty!r}", loc, rule="type")
        for p in type_free_perm_vars(ty):
            if p not in ctx.perm_vars:
                raise CheckError(UNBOUND_VARIABLE, f"unknown permission variable {p!r} in type {ty!r}", loc, rule="type")
        _check_array_payloads(ty, loc)


def _check_array_payloads(ty: Type, loc) -> None:
    match ty:
        case ResT("Array", _, payload):
            if not isinstance(payload, FloatT):
                raise CheckError(MISMATCH, "arrays hold floats only", loc, rule="type")
        case Fun(d, c):
            _check_array_payloads(d, loc)
            _check_array_payloads(c, loc)
        case Prod(l, r):
            _check_array_payloads(l, loc)
            _check_array_payloads(r, loc)
        case Box(_, t) | Amp(_, t) | ExistsT(_, t) | ResT(_, _, t) | Forall(_, t):
            _check_array_payloads(t, loc)
        case _:
            pass


def _names_in_order(ty: Type) -> list[str]:
    """Free name identifiers of a type in first-occurrence order."""
    out: list[str] = []

    def go(ty: Type, bound: frozenset):
        match ty:
            case Fun(d, c):
                go(d, bound)
                go(c, bound)
            case Prod(l, r):
                go(l, bound)
                go(r, bound)
            case Box(_, b) | Amp(_, b):
                go(b, bound)
            case ExistsT(i, b):
                go(b, bound | {i})
            case ResT(_, i, b):
                if i not in bound and i not in out:
                    out.append(i)
                go(b, bound)
            case NameT(i):
                if i not in bound and i not in out:
                    out.append(i)
            case _:
                pass

    go(ty, frozenset())
    return out


# ---------------------------------------------------------------------------
# Whole programs


@dataclass
class CheckedProgram:
    ring: Semiring
    main_type: Type
    main_term: Term  # elaborated, with globals inlined
    def_types: dict[str, Type]


def check_program(prog) -> CheckedProgram:
    """Check every definition in order; returns main's type and elaborated body.

    Raises CheckError on the first rejected definition.
    """
    ring = prog.semiring
    checker = Checker(ring)
    def_types: dict[str, Type] = {}
    main_entry = None
    for d in prog.definitions:
        sig = d.signature
        if isinstance(sig, Forall):
            perm_vs = frozenset(v for v, k in sig.binders if k == "Permission")
            name_vs = frozenset(v for v, k in sig.binders if k == "Name")
            inner = sig.body
        else:
            perm_vs, name_vs, inner = frozenset(), frozenset(), sig
        ctx = Ctx(ring, perm_vars=perm_vs, name_vars=name_vs)
        checker._check_wf(inner, ctx, d.loc)
        try:
            usage, elab = checker.check(ctx, d.body, inner)
        except G.GradeError as e:
            raise CheckError(type(e).__name__, str(e), d.loc, rule="algebra")
        if d.name == "main":
            if isinstance(sig, Forall):
                raise CheckError(MISMATCH, "main must be monomorphic", d.loc, rule="main")
            main_entry = (inner, elab)
        else:
            if not S.is_value(d.body):
                raise CheckError(MISMATCH, f"definition {d.name!r} must be a value", d.loc, rule="def")
            if resource_allocator(d.body):
                raise CheckError(PROMOTION_OF_ALLOCATOR, f"definition {d.name!r} allocates resources", d.loc, rule="def")
            checker.globals[d.name] = GlobalDef(sig, elab)
        def_types[d.name] = sig
    if main_entry is None:
        raise CheckError(MISMATCH, "program has no main definition", None, rule="main")
    main_type, main_term = main_entry
    return CheckedProgram(ring, main_type, main_term, def_types)


def check_program_errors(prog) -> tuple[Optional[CheckedProgram], list[CheckError]]:
    """Collect per-definition errors instead of stopping at the first."""
    errors: list[CheckError] = []
    try:
        return check_program(prog), errors
    except CheckError as e:
        errors.append(e)
        return None, errors


# ---------------------------------------------------------------------------
# Runtime contexts (used by the machine and the metatheory checkers)


def runtime_ctx(heap, ring: Semiring) -> Ctx:
    """Build a typing context from a heap: graded entries for variables and
    reference entries for every live resource reference."""
    ctx = Ctx(ring)
    refs = {}
    for ref, cell in heap.refs.items():
        res = heap.resources.get(cell.ident)
        if res is None:
            continue
        if res.is_array:
            refs[ref] = RefEntry("Array", cell.ident, FloatT())
        else:
            refs[ref] = RefEntry("Ref", cell.ident, res.ty)
    vars_: dict[str, Union[LinearEntry, GradedEntry]] = {}
    for x, cell in heap.vars.items():
        if cell.ty is not None:
            vars_[x] = GradedEntry(cell.ty, cell.grade)
    ctx.vars = vars_
    ctx.refs = refs
    ctx.names = frozenset(heap.resources.keys())
    ctx.lenient_names = True
    return ctx
