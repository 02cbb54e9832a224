"""The closed set of coordinatewise nonlinearities.

Programs may only use maps from this module: clipping, the identity, or a
scalar map registered by name with :func:`register_nonlin`.  Each map carries
its breakpoints (points where it is not smooth) so that Gaussian moments can
be integrated accurately.  All maps are assumed pseudo-Lipschitz; this is not
checked.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NegativeClip


@dataclass(frozen=True)
class NonlinFn:
    name: str
    func: Callable[..., np.ndarray] = field(compare=False)
    arity: int = 1
    breakpoints: tuple[float, ...] = ()

    def __call__(self, *args):
        return self.func(*args)


def clip(t, C: float):
    """``max(-C, min(t, C))`` elementwise."""
    return np.clip(t, -C, C)


def clip_fn(C: float) -> NonlinFn:
    if C < 0:
        raise NegativeClip(f"clip constant must be >= 0, got {C}")
    C = float(C)
    return NonlinFn(f"clip({C!r})", lambda t: np.clip(t, -C, C), 1, (-C, C) if C > 0 else (0.0,))


IDENTITY = NonlinFn("identity", lambda t: np.asarray(t, dtype=float), 1, ())

_REGISTRY: dict[str, NonlinFn] = {"identity": IDENTITY}


def register_nonlin(name: str, func, arity: int = 1, breakpoints=()) -> NonlinFn:
    """Register a vectorized scalar map under ``name``.

    ``breakpoints`` only matter for unary maps used in moment quadrature.
    """
    fn = NonlinFn(name, func, arity, tuple(float(b) for b in breakpoints))
    _REGISTRY[name] = fn
    return fn


def get_nonlin(name: str) -> NonlinFn:
    if name.startswith("clip(") and name.endswith(")"):
        return clip_fn(float(name[5:-1]))
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown nonlinearity {name!r}") from None
