"""Closed families of coefficient laws.

Every spatially varying input of the model is one of a small set of
parametric laws with analytic derivatives, so configurations stay
serializable and the shear entry of the lattice transform can be evaluated
exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

ANGLE_KINDS = ("constant", "linear", "sinusoidal")
FIELD_KINDS = ("constant", "affine", "cosine")
BUMP_KINDS = ("flat", "cos2", "axial")


def _vec3(v, name):
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.size != 3:
        raise ValidationError(f"{name} must have three components, got {arr.size}")
    return tuple(float(t) for t in arr)


@dataclass(frozen=True)
class AngleLaw:
    """Fiber angle as a function of depth.

    ``constant``: ``c0``; ``linear``: ``c0 + c1*x3``;
    ``sinusoidal``: ``c0 + c1*sin(pi*x3)``.
    """

    kind: str = "constant"
    c0: float = 0.0
    c1: float = 0.0

    def __post_init__(self):
        if self.kind not in ANGLE_KINDS:
            raise ValidationError(f"unknown angle law {self.kind!r}; expected one of {ANGLE_KINDS}")

    def __call__(self, x3):
        x3 = np.asarray(x3, dtype=float)
        if self.kind == "constant":
            return np.full_like(x3, self.c0)
        if self.kind == "linear":
            return self.c0 + self.c1 * x3
        return self.c0 + self.c1 * np.sin(np.pi * x3)

    def derivative(self, x3):
        x3 = np.asarray(x3, dtype=float)
        if self.kind == "constant":
            return np.zeros_like(x3)
        if self.kind == "linear":
            return np.full_like(x3, self.c1)
        return self.c1 * np.pi * np.cos(np.pi * x3)

    def second_derivative(self, x3):
        x3 = np.asarray(x3, dtype=float)
        if self.kind == "sinusoidal":
            return -self.c1 * np.pi**2 * np.sin(np.pi * x3)
        return np.zeros_like(x3)

    @property
    def is_constant(self):
        return self.kind == "constant" or self.c1 == 0.0

    def to_dict(self):
        return {"kind": self.kind, "c0": self.c0, "c1": self.c1}


@dataclass(frozen=True)
class RadiusLaw:
    """Affine radius factor ``rho(x) = value + grad . x`` (constant when grad = 0)."""

    value: float = 1.0
    grad: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "grad", _vec3(self.grad, "rho.grad"))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.value + x @ np.asarray(self.grad)

    def gradient(self):
        return np.asarray(self.grad)

    @property
    def is_constant(self):
        return not any(self.grad)

    def to_dict(self):
        return {"value": self.value, "grad": list(self.grad)}


@dataclass(frozen=True)
class FieldLaw:
    """Smooth macroscopic scalar field.

    ``constant``: ``value``; ``affine``: ``value + grad . x``;
    ``cosine``: ``value + amp * prod_i cos(pi * freq_i * x_i)``.
    The cosine family satisfies homogeneous Neumann conditions on the unit box.
    """

    kind: str = "constant"
    value: float = 0.0
    grad: tuple = (0.0, 0.0, 0.0)
    amp: float = 0.0
    freq: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise ValidationError(f"unknown field law {self.kind!r}; expected one of {FIELD_KINDS}")
        object.__setattr__(self, "grad", _vec3(self.grad, "grad"))
        object.__setattr__(self, "freq", _vec3(self.freq, "freq"))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full(x.shape[:-1], self.value)
        if self.kind == "affine":
            return self.value + x @ np.asarray(self.grad)
        arg = np.pi * x * np.asarray(self.freq)
        return self.value + self.amp * np.prod(np.cos(arg), axis=-1)

    def bounds(self, lo, hi):
        """Lower and upper bound of the field over the box ``[lo, hi]``."""
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        if self.kind == "constant":
            return self.value, self.value
        if self.kind == "affine":
            g = np.asarray(self.grad)
            corners = np.array(np.meshgrid(*zip(lo, hi), indexing="ij")).reshape(3, -1).T
            vals = self.value + corners @ g
            return float(vals.min()), float(vals.max())
        return self.value - abs(self.amp), self.value + abs(self.amp)

    def to_dict(self):
        return {"kind": self.kind, "value": self.value, "grad": list(self.grad),
                "amp": self.amp, "freq": list(self.freq)}


@dataclass(frozen=True)
class Bump:
    """Cell factor ``B(y)`` on the centered cell ``(-1/2, 1/2)^3``, zero outside.

    ``cos2`` is the C1 product ``prod_i cos^2(pi y_i)``; ``axial`` keeps only
    the factor along the fiber axis; ``flat`` is the indicator of the cell
    (used where spatially uniform periodic rates are wanted).
    """

    kind: str = "flat"

    def __post_init__(self):
        if self.kind not in BUMP_KINDS:
            raise ValidationError(f"unknown bump {self.kind!r}; expected one of {BUMP_KINDS}")

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        inside = np.all(np.abs(y) < 0.5, axis=-1)
        if self.kind == "flat":
            val = np.ones(y.shape[:-1])
        elif self.kind == "axial":
            val = np.cos(np.pi * y[..., 0]) ** 2
        else:
            val = np.prod(np.cos(np.pi * y) ** 2, axis=-1)
        return np.where(inside, val, 0.0)

    def to_dict(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class RateLaw:
    """Separable two-scale rate ``alpha(x, y) = amplitude(x) * bump(y)``."""

    amplitude: FieldLaw = field(default_factory=FieldLaw)
    bump: Bump = field(default_factory=Bump)

    def __call__(self, x, y):
        return self.amplitude(x) * self.bump(y)

    def sup(self, lo, hi):
        return max(abs(v) for v in self.amplitude.bounds(lo, hi))

    def to_dict(self):
        return {"amplitude": self.amplitude.to_dict(), "bump": self.bump.to_dict()}
