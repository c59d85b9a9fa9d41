"""Grade and permission algebras.

Grades are elements of a pluggable pre-ordered semiring and annotate the box
modality; permissions grade the borrowing modality and are either whole
ownership (star) or an exact rational fraction in (0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Union


class GradeError(Exception):
    """Base class for algebra-level failures."""


class InstanceMismatch(GradeError):
    pass


class BadGrade(GradeError):
    pass


class BadPermission(GradeError):
    pass


class StarNotDivisible(GradeError):
    pass


class StarNotAddable(GradeError):
    pass


class PermissionOverflow(GradeError):
    pass


NatPayload = int
IntervalPayload = tuple[int, int]
Payload = Union[NatPayload, IntervalPayload]


class Semiring:
    """A pre-ordered semiring: (elements, *, 1, +, 0, leq).

    Addition and multiplication must be monotone with respect to leq; the
    shipped instances are property-tested for this.
    """

    name: str

    def add(self, a: Payload, b: Payload) -> Payload:
        raise NotImplementedError

    def mul(self, a: Payload, b: Payload) -> Payload:
        raise NotImplementedError

    def leq(self, a: Payload, b: Payload) -> bool:
        raise NotImplementedError

    @property
    def zero(self) -> "Grade":
        return Grade(self, self.zero_payload())

    @property
    def one(self) -> "Grade":
        return Grade(self, self.one_payload())

    def zero_payload(self) -> Payload:
        raise NotImplementedError

    def one_payload(self) -> Payload:
        raise NotImplementedError

    def literal(self, lo: int, hi: Optional[int] = None) -> "Grade":
        """Build a grade from a surface literal `lo` or `lo..hi`."""
        raise NotImplementedError

    def residual(self, r: Payload, s: Payload) -> Optional[Payload]:
        """Solve s + r' = r for r', or None when no residual exists."""
        raise NotImplementedError

    def show(self, a: Payload) -> str:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"<semiring {self.name}>"


class _NatBase(Semiring):
    def add(self, a, b):
        return a + b

    def mul(self, a, b):
        return a * b

    def zero_payload(self):
        return 0

    def one_payload(self):
        return 1

    def literal(self, lo, hi=None):
        if hi is not None:
            raise BadGrade(f"interval literal {lo}..{hi} not valid in semiring {self.name}")
        if lo < 0:
            raise BadGrade(f"negative grade {lo}")
        return Grade(self, lo)

    def residual(self, r, s):
        return r - s if r >= s else None

    def show(self, a):
        return str(a)


class NatDiscrete(_NatBase):
    """Natural numbers with the discrete ordering: no approximation."""

    name = "nat"

    def leq(self, a, b):
        return a == b


class NatOrdered(_NatBase):
    """Natural numbers under <=, so grades are upper bounds on usage."""

    name = "nat-leq"

    def leq(self, a, b):
        return a <= b


class NatInterval(Semiring):
    """Intervals lo..hi of naturals; leq is interval inclusion."""

    name = "interval"

    def _check(self, a):
        lo, hi = a
        if not (0 <= lo <= hi):
            raise BadGrade(f"malformed interval {lo}..{hi}")
        return a

    def add(self, a, b):
        return (a[0] + b[0], a[1] + b[1])

    def mul(self, a, b):
        return (a[0] * b[0], a[1] * b[1])

    def leq(self, a, b):
        # a included in b
        return b[0] <= a[0] and a[1] <= b[1]

    def zero_payload(self):
        return (0, 0)

    def one_payload(self):
        return (1, 1)

    def literal(self, lo, hi=None):
        if hi is None:
            hi = lo
        if lo < 0 or hi < lo:
            raise BadGrade(f"malformed interval {lo}..{hi}")
        return Grade(self, (lo, hi))

    def residual(self, r, s):
        # interval subtraction, clamping the lower end at zero
        hi = r[1] - s[1]
        if hi < 0:
            return None
        lo = max(r[0] - s[0], 0)
        if lo > hi:
            return None
        return (lo, hi)

    def show(self, a):
        return f"{a[0]}..{a[1]}"


NAT = NatDiscrete()
NAT_LEQ = NatOrdered()
INTERVAL = NatInterval()

SEMIRINGS: dict[str, Semiring] = {r.name: r for r in (NAT, NAT_LEQ, INTERVAL)}


@dataclass(frozen=True)
class Grade:
    """An element of a specific semiring instance."""

    ring: Semiring
    payload: Payload

    def __str__(self) -> str:
        return self.ring.show(self.payload)

    def __repr__(self) -> str:
        return f"Grade({self.ring.name}, {self})"


def _same_ring(a: Grade, b: Grade) -> Semiring:
    if a.ring is not b.ring:
        raise InstanceMismatch(f"grade instances differ: {a.ring.name} vs {b.ring.name}")
    return a.ring


def grade_add(a: Grade, b: Grade) -> Grade:
    ring = _same_ring(a, b)
    return Grade(ring, ring.add(a.payload, b.payload))


def grade_mul(a: Grade, b: Grade) -> Grade:
    ring = _same_ring(a, b)
    return Grade(ring, ring.mul(a.payload, b.payload))


def grade_leq(a: Grade, b: Grade) -> bool:
    ring = _same_ring(a, b)
    return ring.leq(a.payload, b.payload)


def grade_residual(r: Grade, s: Grade) -> Optional[Grade]:
    """The grade r' with s + r' = r (clamped for intervals), if any."""
    ring = _same_ring(r, s)
    out = ring.residual(r.payload, s.payload)
    return None if out is None else Grade(ring, out)


def grade_minus_one(g: Grade) -> Optional[Grade]:
    return grade_residual(g, g.ring.one)


@dataclass(frozen=True)
class Permission:
    """Star (unique ownership) or an exact fraction in (0, 1].

    The fraction is stored as an arbitrary-precision rational in lowest
    terms; zero is not representable here (heap annotations, which admit
    zero, are plain Fractions on the interpreter side).
    """

    frac: Optional[Fraction] = None  # None encodes star

    def __post_init__(self):
        if self.frac is not None:
            if not isinstance(self.frac, Fraction):
                object.__setattr__(self, "frac", Fraction(self.frac))
            if not (0 < self.frac <= 1):
                raise BadPermission(f"fraction {self.frac} outside (0, 1]")

    @property
    def is_star(self) -> bool:
        return self.frac is None

    def __str__(self) -> str:
        if self.is_star:
            return "*"
        if self.frac.denominator == 1:
            return str(self.frac.numerator)
        return f"{self.frac.numerator}/{self.frac.denominator}"

    def __repr__(self) -> str:
        return f"Permission({self})"


STAR = Permission(None)
WHOLE = Permission(Fraction(1))


def frac_perm(num: int, den: int = 1) -> Permission:
    return Permission(Fraction(num, den))


def perm_half(p: Permission) -> Permission:
    if p.is_star:
        raise StarNotDivisible("the star permission cannot be split")
    return Permission(p.frac / 2)


def perm_add(p: Permission, q: Permission) -> Permission:
    if p.is_star or q.is_star:
        raise StarNotAddable("the star permission cannot be joined")
    total = p.frac + q.frac
    if total > 1:
        raise PermissionOverflow(f"joined permissions sum to {total} > 1")
    return Permission(total)


def perm_is_writable(p: Permission) -> bool:
    return p.is_star or p.frac == 1
