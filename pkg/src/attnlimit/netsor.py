"""Netsor programs: initial vectors, MatMul and Nonlin with weight sharing.

A program is an ordered list of nodes.  Node ``k`` is either an initial
vector, ``W @ h[j]`` for some earlier ``j``, or a coordinatewise map of
earlier vectors.  :func:`sample_finite` draws every vector at a finite width
with weights ``W_ab ~ N(0, sigma_sq / fan_in)`` and the initial vectors'
coordinates i.i.d. from ``N(0, initial_cov)``.

Weights are materialized explicitly here, so this sampler is the dense
reference; the attention module has a reduced-form sampler for large sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

import numpy as np

from .errors import CyclicProgram, MissingHeadDim, NonPsdCovariance, ShareKeyMismatch
from .nonlin import NonlinFn
from .seeding import rng_for

VectorId = int

_JITTERS = (0.0, 1e-14, 1e-13, 1e-12, 1e-11, 1e-10)
# rows of W generated per block when a matrix is streamed
_ROW_BLOCK = 256
# matrices up to this many entries are cached within one sample_finite call
_CACHE_ENTRIES = 1 << 22


class DimRole(str, Enum):
    FULL = "full"
    HEAD = "head"


@dataclass(frozen=True)
class WeightSpec:
    share_key: str
    sigma_sq: float = 1.0
    out_dim_role: DimRole = DimRole.FULL
    in_dim_role: DimRole = DimRole.FULL

    def __post_init__(self):
        if not self.sigma_sq > 0:
            raise ValueError(f"sigma_sq must be > 0 (key {self.share_key!r})")


@dataclass(frozen=True)
class Initial:
    pass


@dataclass(frozen=True)
class MatMul:
    weight: WeightSpec
    input: VectorId


@dataclass(frozen=True)
class Nonlin:
    function: NonlinFn
    inputs: tuple[VectorId, ...]


NodeDef = Union[Initial, MatMul, Nonlin]


@dataclass(frozen=True)
class NetsorProgram:
    nodes: tuple[NodeDef, ...]
    initial_cov: np.ndarray
    roles: tuple[DimRole, ...]
    weight_keys: tuple[str, ...]

    @property
    def initial_ids(self) -> list[VectorId]:
        return [k for k, node in enumerate(self.nodes) if isinstance(node, Initial)]

    @property
    def uses_head_dim(self) -> bool:
        return DimRole.HEAD in self.roles


def psd_factor(cov: np.ndarray, error: type[Exception] = NonPsdCovariance) -> np.ndarray:
    """Return ``L`` with ``L @ L.T == cov`` for a symmetric PSD ``cov``.

    Tries a plain Cholesky factorization first.  If that fails, the matrix
    must still admit one with at most 1e-10 added to the diagonal (else
    ``error`` is raised), and the factor is taken from the eigendecomposition
    with rounding-level negative eigenvalues clamped to zero, so a singular
    covariance gives exactly degenerate draws.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise error(f"covariance must be square, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, atol=1e-10, rtol=0.0):
        raise error("covariance is not symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(cov.shape[0])
    for jitter in _JITTERS[1:]:
        try:
            np.linalg.cholesky(cov + jitter * eye)
            break
        except np.linalg.LinAlgError:
            continue
    else:
        raise error("covariance is not positive semidefinite")
    w, v = np.linalg.eigh(0.5 * (cov + cov.T))
    return v * np.sqrt(np.clip(w, 0.0, None))


def build_program(nodes: Sequence[NodeDef], initial_cov) -> NetsorProgram:
    nodes = tuple(nodes)
    cov = np.atleast_2d(np.asarray(initial_cov, dtype=float))
    n_init = sum(isinstance(node, Initial) for node in nodes)
    if n_init == 0:
        raise ValueError("a program needs at least one Initial node")
    if cov.shape != (n_init, n_init):
        raise ValueError(f"initial_cov has shape {cov.shape}, expected ({n_init}, {n_init})")
    psd_factor(cov)

    roles: list[DimRole] = []
    keys: dict[str, WeightSpec] = {}
    for k, node in enumerate(nodes):
        if isinstance(node, Initial):
            roles.append(DimRole.FULL)
            continue
        inputs = (node.input,) if isinstance(node, MatMul) else tuple(node.inputs)
        for j in inputs:
            if not 0 <= j < k:
                raise CyclicProgram(f"node {k} references vector {j}, which is not defined before it")
        if isinstance(node, MatMul):
            w = node.weight
            seen = keys.setdefault(w.share_key, w)
            if (seen.sigma_sq, seen.out_dim_role, seen.in_dim_role) != (
                w.sigma_sq, w.out_dim_role, w.in_dim_role,
            ):
                raise ShareKeyMismatch(f"weight {w.share_key!r} declared twice with different parameters")
            if roles[node.input] != w.in_dim_role:
                raise ValueError(
                    f"node {k}: weight {w.share_key!r} expects {w.in_dim_role.value} input, "
                    f"got {roles[node.input].value}"
                )
            roles.append(w.out_dim_role)
        elif isinstance(node, Nonlin):
            if len(inputs) != node.function.arity:
                raise ValueError(f"node {k}: {node.function.name} takes {node.function.arity} inputs")
            in_roles = {roles[j] for j in inputs}
            if len(in_roles) != 1:
                raise ValueError(f"node {k}: Nonlin inputs have mixed dimensions")
            roles.append(in_roles.pop())
        else:
            raise TypeError(f"unknown node type {type(node).__name__}")
    return NetsorProgram(nodes, cov, tuple(roles), tuple(keys))


def _dim(role: DimRole, width: int, head_dim: int | None) -> int:
    return width if role is DimRole.FULL else head_dim


def _matvec(rng: np.random.Generator, rows: int, cols: int, scale: float, x: np.ndarray) -> np.ndarray:
    out = np.empty(rows)
    for r0 in range(0, rows, _ROW_BLOCK):
        r1 = min(rows, r0 + _ROW_BLOCK)
        out[r0:r1] = rng.standard_normal((r1 - r0, cols)) @ x
    return scale * out


def sample_finite(
    program: NetsorProgram, width: int, head_dim: int | None = None, seed: int = 0
) -> dict[VectorId, np.ndarray]:
    """Draw every vector of ``program`` at the given width.

    Stream 0 of ``seed`` feeds the initial vectors; weight ``share_key``
    number ``m`` (in order of first use) owns stream ``m + 1`` and is
    regenerated from it on every use, so shared weights are the same
    realization and results do not depend on evaluation order.
    """
    if width < 1:
        raise ValueError("width must be positive")
    if program.uses_head_dim and head_dim is None:
        raise MissingHeadDim("program uses head-dimension weights but head_dim is None")
    if head_dim is not None and head_dim < 1:
        raise ValueError("head_dim must be positive")

    init_ids = program.initial_ids
    L = psd_factor(program.initial_cov)
    z = rng_for(seed, 0).standard_normal((width, len(init_ids)))
    init = z @ L.T

    stream = {key: m + 1 for m, key in enumerate(program.weight_keys)}
    cache: dict[str, np.ndarray] = {}
    out: dict[VectorId, np.ndarray] = {}
    for k, node in enumerate(program.nodes):
        if isinstance(node, Initial):
            out[k] = init[:, init_ids.index(k)].copy()
        elif isinstance(node, MatMul):
            w = node.weight
            rows = _dim(w.out_dim_role, width, head_dim)
            cols = _dim(w.in_dim_role, width, head_dim)
            scale = np.sqrt(w.sigma_sq / cols)
            x = out[node.input]
            if rows * cols <= _CACHE_ENTRIES:
                if w.share_key not in cache:
                    cache[w.share_key] = rng_for(seed, stream[w.share_key]).standard_normal((rows, cols))
                out[k] = scale * (cache[w.share_key] @ x)
            else:
                out[k] = _matvec(rng_for(seed, stream[w.share_key]), rows, cols, scale, x)
        else:
            out[k] = np.asarray(node.function(*(out[j] for j in node.inputs)), dtype=float)
    return out
