"""Reaction kinetics of the signalling model and their admissibility checks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .laws import Bump, FieldLaw, RateLaw


@dataclass(frozen=True)
class ReactionLaw:
    """Bulk reaction ``F(c)``.

    ``linear``: ``f0 - lam*c``. ``logistic``: ``lam*c*(1 - c/cmax)`` for
    ``c >= 0`` and ``lam*c`` below zero (a globally Lipschitz continuation).
    """

    kind: str = "linear"
    f0: float = 0.0
    lam: float = 0.0
    cmax: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "logistic"):
            raise ValidationError(f"unknown reaction law {self.kind!r}")
        if self.kind == "logistic" and not self.cmax > 0:
            raise ValidationError("logistic reaction needs cmax > 0")

    def __call__(self, c):
        c = np.asarray(c, float)
        if self.kind == "linear":
            return self.f0 - self.lam * c
        return np.where(c >= 0, self.lam * c * (1.0 - c / self.cmax), self.lam * c)

    def derivative(self, c):
        c = np.asarray(c, float)
        if self.kind == "linear":
            return np.full_like(c, -self.lam)
        return np.where(c >= 0, self.lam * (1.0 - 2.0 * c / self.cmax), self.lam)

    def lipschitz(self, c_bound):
        if self.kind == "linear":
            return abs(self.lam)
        return abs(self.lam) * max(1.0, abs(2.0 * c_bound / self.cmax - 1.0))

    def sup_positive(self):
        """``sup_{c >= 0} F(c)``, or ``inf`` if unbounded."""
        if self.kind == "linear":
            return self.f0 if self.lam >= 0 else np.inf
        return self.lam * self.cmax / 4.0 if self.lam > 0 else 0.0

    @property
    def is_zero(self):
        return (self.kind == "linear" and self.f0 == 0 and self.lam == 0) or (self.kind == "logistic" and self.lam == 0)

    def to_dict(self):
        return {"kind": self.kind, "f0": self.f0, "lam": self.lam, "cmax": self.cmax}


@dataclass(frozen=True)
class ProductionLaw:
    """Receptor production ``p(r_b)``: ``saturating`` ``p0 r/(1+r)`` or ``affine`` ``p0 + p1 r``."""

    kind: str = "saturating"
    p0: float = 0.0
    p1: float = 0.0

    def __post_init__(self):
        if self.kind not in ("saturating", "affine"):
            raise ValidationError(f"unknown production law {self.kind!r}")

    def __call__(self, r):
        r = np.asarray(r, float)
        if self.kind == "saturating":
            # odd continuation keeps the law Lipschitz for negative arguments
            return self.p0 * r / (1.0 + np.abs(r))
        return self.p0 + self.p1 * r

    def lipschitz(self):
        return abs(self.p0) if self.kind == "saturating" else abs(self.p1)

    def to_dict(self):
        return {"kind": self.kind, "p0": self.p0, "p1": self.p1}


@dataclass(frozen=True)
class KineticsSpec:
    """Coefficients of the signalling model.

    Rates ``alpha``, ``beta`` and the receptor initial data are products of a
    macroscopic field and a cell factor on the centered cell.
    """

    A: float = 1.0
    d_f: float = 0.0
    d_b: float = 0.0
    F: ReactionLaw = field(default_factory=ReactionLaw)
    p: ProductionLaw = field(default_factory=ProductionLaw)
    alpha: RateLaw = field(default_factory=RateLaw)
    beta: RateLaw = field(default_factory=RateLaw)
    c0: FieldLaw = field(default_factory=lambda: FieldLaw("constant", 1.0))
    rf0_1: FieldLaw = field(default_factory=lambda: FieldLaw("constant", 0.0))
    rf0_2: Bump = field(default_factory=Bump)
    rb0_1: FieldLaw = field(default_factory=lambda: FieldLaw("constant", 0.0))
    rb0_2: Bump = field(default_factory=Bump)

    def validate(self, lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)):
        """Check the admissibility conditions on the box ``[lo, hi]``."""
        if not self.A > 0:
            raise ValidationError(f"A must be positive (uniform ellipticity), got {self.A}")
        if self.d_f < 0 or self.d_b < 0:
            raise ValidationError("decay rates d_f, d_b must be non-negative")
        if self.F.kind == "linear" and self.F.f0 < 0:
            # F(c) c <= C c^2 for c < 0 fails near zero when F(0) < 0
            raise ValidationError("linear reaction needs f0 >= 0 so that F(c)c <= C|c|^2 for c < 0")
        if self.p.kind == "saturating" and self.p.p0 < 0:
            raise ValidationError("production p must be non-negative for non-negative r_b (p0 >= 0)")
        if self.p.kind == "affine" and (self.p.p0 < 0 or self.p.p1 < 0):
            raise ValidationError("production p must be non-negative for non-negative r_b (p0, p1 >= 0)")
        for name in ("alpha", "beta"):
            low, _ = getattr(self, name).amplitude.bounds(lo, hi)
            if low < 0:
                raise ValidationError(f"{name} must be non-negative")
        for name in ("c0", "rf0_1", "rb0_1"):
            low, _ = getattr(self, name).bounds(lo, hi)
            if low < 0:
                raise ValidationError(f"initial datum {name} must be non-negative")
        return self

    def receptor_bound(self, T, lo=(0, 0, 0), hi=(1, 1, 1)):
        """Upper bound of ``r_f + r_b`` on ``[0, T]`` from the summed receptor equations."""
        s0 = self.rf0_1.bounds(lo, hi)[1] + self.rb0_1.bounds(lo, hi)[1]
        if self.p.kind == "saturating":
            return s0 + max(self.p.p0, 0.0) * T
        if self.p.p1 == 0:
            return s0 + self.p.p0 * T
        q = self.p.p0 / self.p.p1
        return (s0 + q) * np.exp(self.p.p1 * T) - q

    def to_dict(self):
        return {"A": self.A, "d_f": self.d_f, "d_b": self.d_b, "F": self.F.to_dict(), "p": self.p.to_dict(),
                "alpha": self.alpha.to_dict(), "beta": self.beta.to_dict(), "c0": self.c0.to_dict(),
                "rf0_1": self.rf0_1.to_dict(), "rf0_2": self.rf0_2.to_dict(),
                "rb0_1": self.rb0_1.to_dict(), "rb0_2": self.rb0_2.to_dict()}


def surface_density(spec):
    """Largest fiber area per unit fluid volume, ``max 2 pi rho a / theta``."""
    _, rho_hi = spec.radius_bounds
    ra = rho_hi * spec.a
    return 2 * np.pi * ra / (1.0 - np.pi * ra * ra)


def barrier_constants(kinetics, spec, T, mu=None):
    """Constants ``(M1, M2)`` of the barrier ``M1 exp(M2 t)``.

    ``M1 = sup c0``. ``M1 M2`` is at least ``|F(0)| + |F(1)| + mu sup(beta) R_b``
    and large enough that the barrier is a supersolution of
    ``c' = F(c) + mu sup(beta) R_b`` for ``c >= M1``. The default ``mu`` is the
    largest fiber surface per fluid volume, the factor that turns the scaled
    surface source into a volume source.
    """
    lo, hi = spec.omega.bounds()
    M1 = float(kinetics.c0.bounds(lo, hi)[1])
    if M1 <= 0:
        return 0.0, 0.0
    if mu is None:
        mu = surface_density(spec)
    Rb = kinetics.receptor_bound(T, lo, hi)
    src = mu * kinetics.beta.sup(lo, hi) * Rb
    F = kinetics.F
    stated = (abs(float(F(0.0))) + abs(float(F(1.0))) + src) / M1
    if F.kind == "linear":
        comparison = (max(F.f0, 0.0) + src) / M1 + max(-F.lam, 0.0)
    else:
        comparison = min(max(F.lam, 0.0) + src / M1, (F.sup_positive() + src) / M1)
    return M1, float(max(stated, comparison))


def kinetic_lipschitz(kinetics, c_bound, spec):
    """Rate bound of the explicitly treated kinetic terms (per unit time)."""
    lo, hi = spec.omega.bounds()
    a = kinetics.alpha.sup(lo, hi)
    b = kinetics.beta.sup(lo, hi)
    return max(kinetics.F.lipschitz(c_bound),
               a * c_bound + kinetics.d_f + kinetics.p.lipschitz(),
               b + kinetics.d_b)


def kinetics_battery():
    """Named admissible kinetics used by the structural and convergence checks."""
    const = lambda v: FieldLaw("constant", float(v))  # noqa: E731
    smooth_c0 = FieldLaw("cosine", 1.0, amp=0.5, freq=(1.0, 0.0, 1.0))
    return {
        "zero": KineticsSpec(c0=smooth_c0),
        "decay": KineticsSpec(F=ReactionLaw("linear", 0.0, 1.0), d_f=0.5, d_b=0.5,
                              alpha=RateLaw(const(1.0), Bump("cos2")), beta=RateLaw(const(0.5), Bump("flat")),
                              c0=smooth_c0, rf0_1=const(1.0), rf0_2=Bump("flat"), rb0_1=const(0.5),
                              rb0_2=Bump("flat")),
        "logistic": KineticsSpec(F=ReactionLaw("logistic", lam=1.0, cmax=2.0), p=ProductionLaw("saturating", 0.5),
                                 d_f=0.1, d_b=0.1, alpha=RateLaw(const(1.0), Bump("cos2")),
                                 beta=RateLaw(const(0.5), Bump("axial")), c0=smooth_c0,
                                 rf0_1=const(1.0), rf0_2=Bump("flat"), rb0_1=const(0.5), rb0_2=Bump("cos2")),
        "affine": KineticsSpec(F=ReactionLaw("linear", 0.5, 2.0), p=ProductionLaw("affine", 0.1, 0.2),
                               d_f=0.3, d_b=0.2,
                               alpha=RateLaw(FieldLaw("affine", 1.0, grad=(0.5, 0.0, 0.0)), Bump("axial")),
                               beta=RateLaw(FieldLaw("cosine", 1.0, amp=0.5, freq=(0.0, 1.0, 0.0)), Bump("flat")),
                               c0=FieldLaw("cosine", 0.5, amp=0.5, freq=(1.0, 1.0, 1.0)),
                               rf0_1=const(0.5), rf0_2=Bump("cos2"), rb0_1=const(0.0), rb0_2=Bump("flat")),
    }
