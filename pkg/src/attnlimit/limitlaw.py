"""The infinite-width law of a multi-head attention layer.

In the limit every head contributes an independent Gaussian score vector
``p_ring[a]`` (over pairs ``(i, j)``) and an independent Gaussian value
vector ``z_v[a]`` (over positions ``j``), and

    z_y[i] = sum_a sum_j softmax_j(p_ring[a, i, :]) * z_v[a, j].

Conditional on the scores the output is Gaussian; unconditionally it is a
scale mixture with heavier tails.  The covariances are

    Cov(z_v[a, j], z_v[a, j'])                = s_O^2 s_V^2 Sx[j, j']
    Cov(p_ring[a, i, j], p_ring[a, i', j'])   = s_Q^2 s_K^2 Sx[i, i'] Sx[j, j']

and zero across heads, with ``Sx[i, i'] = E[x^i x^i']`` the second moments
of the limiting inputs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy.linalg import block_diag
from scipy.special import erf, ndtr

from .attention import AttentionConfig, ScalingRule, sample_seed, softmax
from .errors import AsymmetricInput, FactorizationFailure, NegativeClip, NonPsdCovariance
from .netsor import psd_factor
from .nonlin import NonlinFn, clip_fn
from .parallel import chunk_bounds, map_ordered
from .seeding import KeyedStream
from .stats import Provenance, SampleSet

_SQRT2PI = np.sqrt(2.0 * np.pi)
# standard-normal mass beyond this many standard deviations is below 1e-32
_TAIL = 12.0
# panels per piece between breakpoints, so no panel is wider than 2
_PANELS = 12


def clip_second_moment(C: float) -> float:
    """``E[clip(Z, C)^2]`` for ``Z ~ N(0, 1)``.

    Equals ``2 C^2 (1 - Phi(C)) - 2 C phi(C) + 2 Phi(C) - 1``, written with
    ``ndtr(-C)`` and ``erf`` so that no cancellation occurs for large C.
    """
    if C < 0:
        raise NegativeClip(f"clip constant must be >= 0, got {C}")
    C = float(C)
    if np.isinf(C):
        return 1.0
    pdf = np.exp(-0.5 * C * C) / _SQRT2PI
    return float(2.0 * C * C * ndtr(-C) - 2.0 * C * pdf + erf(C / np.sqrt(2.0)))


# -- Gaussian quadrature ------------------------------------------------------


def _normal_rules(breaks: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise nodes and weights with ``sum(w[r] * f(z[r])) ~ E[f(Z)]``, ``Z ~ N(0, 1)``.

    ``breaks`` has shape ``(R, m)``: row ``r`` lists the points where the
    integrand of rule ``r`` is not smooth.  Without breakpoints this is plain
    Gauss-Hermite.  Otherwise ``[-12, 12]`` is cut at the (clamped)
    breakpoints and each of the ``m + 1`` pieces is split into 12 equal
    panels integrated by Gauss-Legendre against the normal density, so kinks
    always sit on panel edges.  Every row has the same number of nodes.
    """
    breaks = np.atleast_2d(np.asarray(breaks, dtype=float))
    R = breaks.shape[0]
    if breaks.shape[1] == 0:
        z, w = hermegauss(order)
        return np.broadcast_to(z, (R, order)), np.broadcast_to(w / _SQRT2PI, (R, order))
    inner = np.sort(np.clip(breaks, -_TAIL, _TAIL), axis=1)
    edges = np.concatenate([np.full((R, 1), -_TAIL), inner, np.full((R, 1), _TAIL)], axis=1)
    frac = np.linspace(0.0, 1.0, _PANELS + 1)
    lo, hi = edges[:, :-1, None], edges[:, 1:, None]
    cuts = (lo + (hi - lo) * frac).reshape(R, -1, _PANELS + 1)
    half = 0.5 * (cuts[..., 1:] - cuts[..., :-1])
    mid = 0.5 * (cuts[..., 1:] + cuts[..., :-1])
    t, tw = leggauss(order)
    z = (mid[..., None] + half[..., None] * t).reshape(R, -1)
    w = (half[..., None] * tw).reshape(R, -1) * np.exp(-0.5 * z * z) / _SQRT2PI
    return z, w


def _normal_rule(breakpoints, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Single rule; pieces get ``ceil(length / 2)`` panels instead of 12."""
    bps = np.asarray(breakpoints, dtype=float).ravel()
    if bps.size == 0:
        z, w = _normal_rules(np.empty((1, 0)), order)
        return z[0], w[0]
    edges = np.unique(np.concatenate([[-_TAIL, _TAIL], np.clip(bps, -_TAIL, _TAIL)]))
    cuts = np.unique(np.concatenate([
        np.linspace(lo, hi, max(1, int(np.ceil((hi - lo) / 2.0))) + 1)
        for lo, hi in zip(edges[:-1], edges[1:])
    ]))
    half = 0.5 * np.diff(cuts)[:, None]
    mid = 0.5 * (cuts[1:] + cuts[:-1])[:, None]
    t, tw = leggauss(order)
    z = (mid + half * t).ravel()
    w = (half * tw).ravel() * np.exp(-0.5 * z * z) / _SQRT2PI
    return z, w


def _scaled_breaks(fn: NonlinFn, scale: float, shift=0.0) -> np.ndarray:
    """Breakpoints of ``z -> fn(shift + scale * z)`` in z, one row per shift."""
    shift = np.atleast_1d(np.asarray(shift, dtype=float))[:, None]
    if scale == 0 or not fn.breakpoints:
        return np.empty((shift.shape[0], 0))
    return (np.asarray(fn.breakpoints) - shift) / scale


def _as_nonlin(f) -> NonlinFn:
    if isinstance(f, NonlinFn):
        return f
    return NonlinFn(getattr(f, "__name__", "map"), f)


def _check_cov2(cov2) -> np.ndarray:
    c = np.asarray(cov2, dtype=float)
    if c.shape != (2, 2) or not np.all(np.isfinite(c)):
        raise NonPsdCovariance("cov2 must be a finite 2x2 matrix")
    tol = 1e-10 * max(1.0, np.abs(c).max())
    if abs(c[0, 1] - c[1, 0]) > tol:
        raise NonPsdCovariance("cov2 is not symmetric")
    if c[0, 0] < -tol or c[1, 1] < -tol or c[0, 0] * c[1, 1] - c[0, 1] ** 2 < -tol * max(1.0, np.abs(c).max()):
        raise NonPsdCovariance("cov2 is not positive semidefinite")
    return c


def nonlin_second_moment(f, g, cov2, order: int = 32) -> float:
    """``E[f(U) g(V)]`` for centered Gaussian ``(U, V)`` with covariance ``cov2``.

    Writes ``U = l11 z1`` and ``V = l21 z1 + l22 z2`` (lower-triangular
    factor) and integrates z2 inside z1.  The inner rule is rebuilt at each
    outer node so that the kinks of ``g`` stay on panel edges.
    """
    if order < 16:
        raise ValueError("order must be >= 16")
    f, g = _as_nonlin(f), _as_nonlin(g)
    c = _check_cov2(cov2)
    c11, c22 = max(c[0, 0], 0.0), max(c[1, 1], 0.0)
    c12 = 0.5 * (c[0, 1] + c[1, 0])

    l11 = np.sqrt(c11)
    if l11 == 0.0:
        z, w = _normal_rule(_scaled_breaks(g, np.sqrt(c22)), order)
        return float(f(np.zeros(1))[0] * np.dot(w, g(np.sqrt(c22) * z)))
    l21 = c12 / l11
    rest = c22 - l21 * l21
    l22 = np.sqrt(rest) if rest > 1e-24 * max(c22, 1e-300) else 0.0

    outer_breaks = np.concatenate([_scaled_breaks(f, l11), _scaled_breaks(g, l21)], axis=1)
    z1, w1 = _normal_rule(outer_breaks, order)
    fu = f(l11 * z1)
    if l22 == 0.0:
        return float(np.dot(w1, fu * g(l21 * z1)))
    if l21 == 0.0:
        z2, w2 = _normal_rule(_scaled_breaks(g, l22), order)
        return float(np.dot(w1, fu) * np.dot(w2, g(l22 * z2)))
    # the inner integral smooths each kink of g over a width l22/|l21| in z1;
    # grade the outer panels towards those points when the width is small
    width = l22 / abs(l21)
    if width < 1.0 and g.breakpoints:
        centers = _scaled_breaks(g, l21)[0]
        steps = width * np.array([1.0, 4.0, 16.0, 64.0])
        steps = steps[steps < 2.0]
        graded = (centers[:, None] + np.concatenate([steps, -steps])).ravel()
        z1, w1 = _normal_rule(np.concatenate([outer_breaks[0], graded]), order)
        fu = f(l11 * z1)
    z2, w2 = _normal_rules(_scaled_breaks(g, l22, l21 * z1), order)
    inner = np.sum(w2 * g(l21 * z1[:, None] + l22 * z2), axis=1)
    return float(np.dot(w1, fu * inner))


def fourth_moment_isserlis(cov4) -> float:
    """``E[Z1 Z2 Z3 Z4]`` for a centered Gaussian vector: c12 c34 + c13 c24 + c14 c23."""
    c = np.asarray(cov4, dtype=float)
    if c.shape != (4, 4):
        raise ValueError(f"cov4 must be 4x4, got {c.shape}")
    if not np.allclose(c, c.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(c).max())):
        raise AsymmetricInput("cov4 is not symmetric")
    return float(c[0, 1] * c[2, 3] + c[0, 2] * c[1, 3] + c[0, 3] * c[1, 2])


# -- limit specification ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LimitLawSpec:
    """Covariance blocks of the limit law.

    ``v_blocks[a]`` (s x s) and ``p_blocks[a]`` (s^2 x s^2, pair ``(i, j)``
    at row ``i * s + j``) are the per-head blocks; the full block-diagonal
    matrices are available as :attr:`sigma_v` and :attr:`sigma_p`.
    """

    spatial_dim: int
    heads: int
    sigma_x: np.ndarray
    v_blocks: np.ndarray
    p_blocks: np.ndarray

    def __post_init__(self):
        s, H = self.spatial_dim, self.heads
        for name, shape in (("sigma_x", (s, s)), ("v_blocks", (H, s, s)), ("p_blocks", (H, s * s, s * s))):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def sigma_v(self) -> np.ndarray:
        return block_diag(*self.v_blocks)

    @property
    def sigma_p(self) -> np.ndarray:
        return block_diag(*self.p_blocks)

    def digest(self) -> str:
        h = hashlib.sha256(np.array([self.spatial_dim, self.heads], dtype="<i8").tobytes())
        for arr in (self.sigma_x, self.v_blocks, self.p_blocks):
            h.update(arr.astype("<f8").tobytes())
        return h.hexdigest()[:16]

    @cached_property
    def factors(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-head square roots of the p and v blocks."""
        return _block_factors(self.p_blocks), _block_factors(self.v_blocks)


def _block_factors(blocks: np.ndarray) -> np.ndarray:
    out = np.empty_like(blocks)
    seen: dict[bytes, np.ndarray] = {}
    for a, blk in enumerate(blocks):
        key = blk.tobytes()
        if key not in seen:
            seen[key] = psd_factor(blk, FactorizationFailure)
        out[a] = seen[key]
    return out


def input_second_moments(config: AttentionConfig, order: int = 32) -> np.ndarray:
    """``E[x^i x^i']`` in the limit, for ``x^i = clip(h^i, C)``.

    The pre-activations ``h^i`` are independent ``N(0, tau^2)`` with
    ``tau^2 = sigma_input^2 * h_var``.
    """
    s = config.spatial_dim
    tau_sq = config.sigma_input_sq * config.h_var
    if tau_sq == 0:
        return np.zeros((s, s))
    tau = np.sqrt(tau_sq)
    clip = clip_fn(config.clip_C)
    diag = tau_sq * clip_second_moment(config.clip_C / tau)
    off = nonlin_second_moment(clip, clip, [[tau_sq, 0.0], [0.0, tau_sq]], order)
    sx = np.full((s, s), off)
    np.fill_diagonal(sx, diag)
    return sx


def score_block(sigma_x: np.ndarray, sigma_q_sq: float, sigma_k_sq: float) -> np.ndarray:
    """One head's score covariance, each entry a Gaussian fourth moment.

    ``p[i, j]`` is the limit of ``q^i . k^j / sqrt(n)``; queries and keys use
    different matrices, so ``q`` and ``k`` coordinates are uncorrelated.
    """
    s = sigma_x.shape[0]
    blk = np.empty((s * s, s * s))
    cov4 = np.zeros((4, 4))  # order: q^i, k^j, q^i', k^j'
    for i in range(s):
        for j in range(s):
            for i2 in range(s):
                for j2 in range(s):
                    cov4[0, 0], cov4[2, 2] = sigma_q_sq * sigma_x[i, i], sigma_q_sq * sigma_x[i2, i2]
                    cov4[1, 1], cov4[3, 3] = sigma_k_sq * sigma_x[j, j], sigma_k_sq * sigma_x[j2, j2]
                    cov4[0, 2] = cov4[2, 0] = sigma_q_sq * sigma_x[i, i2]
                    cov4[1, 3] = cov4[3, 1] = sigma_k_sq * sigma_x[j, j2]
                    blk[i * s + j, i2 * s + j2] = fourth_moment_isserlis(cov4)
    return blk


def build_limit_spec(config: AttentionConfig, order: int = 32) -> LimitLawSpec:
    """Limit-law covariances for ``config`` (width only enters via scaling).

    Under 1/n scaling the scores vanish in the limit, so the score blocks
    are zero and every head averages its values uniformly.
    """
    s, H = config.spatial_dim, config.heads
    sx = input_second_moments(config, order)
    v = config.sigma_o_sq * config.sigma_v_sq * sx
    if config.scaling is ScalingRule.INV_WIDTH:
        p = np.zeros((s * s, s * s))
    else:
        p = score_block(sx, config.sigma_q_sq, config.sigma_k_sq)
    return LimitLawSpec(s, H, sx, np.broadcast_to(v, (H, s, s)), np.broadcast_to(p, (H, s * s, s * s)))


# -- sampling ----------------------------------------------------------------


@dataclass(frozen=True)
class LimitSample:
    p_ring: np.ndarray  # (H, s, s)
    z_v: np.ndarray  # (H, s)
    z_y: np.ndarray  # (s,)


def _limit_chunk(spec: LimitLawSpec, seeds, frozen_scores=None):
    s, H = spec.spatial_dim, spec.heads
    Lp, Lv = spec.factors
    stream = KeyedStream()
    n_p = H * s * s
    z = np.stack([stream.rng(seed, 0).standard_normal(n_p + H * s) for seed in seeds])
    B = z.shape[0]
    if frozen_scores is None:
        p = np.einsum("hkl,bhl->bhk", Lp, z[:, :n_p].reshape(B, H, s * s)).reshape(B, H, s, s)
    else:
        p = np.broadcast_to(np.asarray(frozen_scores, dtype=float).reshape(1, H, s, s), (B, H, s, s))
    zv = np.einsum("hkl,bhl->bhk", Lv, z[:, n_p:].reshape(B, H, s))
    weights = softmax(p, axis=-1)
    zy = np.einsum("bhij,bhj->bi", weights, zv)
    return p, zv, zy


def draw_limit(spec: LimitLawSpec, seed: int, frozen_scores=None) -> LimitSample:
    """One draw of ``(p_ring, z_v, z_y)`` from the stream keyed by ``seed``."""
    p, zv, zy = _limit_chunk(spec, [seed], frozen_scores)
    return LimitSample(np.array(p[0]), zv[0], zy[0])


def _limit_task(spec, master_seed, start, stop, frozen_scores, full):
    seeds = [sample_seed(master_seed, k) for k in range(start, stop)]
    p, zv, zy = _limit_chunk(spec, seeds, frozen_scores)
    if full:
        return np.array(p), zv, zy
    return zy


def _check_frozen(spec, frozen_scores):
    if frozen_scores is None:
        return None
    fs = np.asarray(frozen_scores, dtype=float)
    if fs.size != spec.heads * spec.spatial_dim**2:
        raise ValueError("frozen_scores must have shape (H, s, s)")
    return fs.reshape(spec.heads, spec.spatial_dim, spec.spatial_dim)


def sample_limit_draws(spec: LimitLawSpec, master_seed: int, count: int, workers: int = 1, frozen_scores=None):
    """Arrays ``(p_ring, z_v, z_y)`` of ``count`` limit draws."""
    if count < 1:
        raise ValueError("count must be >= 1")
    spec.factors  # factor once before any fan-out
    fs = _check_frozen(spec, frozen_scores)
    tasks = [(spec, master_seed, a, b, fs, True) for a, b in chunk_bounds(count)]
    parts = map_ordered(_limit_task, tasks, workers)
    return tuple(np.concatenate([part[m] for part in parts]) for m in range(3))


def sample_limit(
    spec: LimitLawSpec,
    master_seed: int,
    count: int,
    index: int = 0,
    workers: int = 1,
    frozen_scores=None,
) -> SampleSet:
    """``count`` draws of ``z_y[index]``.

    Draw ``k`` uses ``sample_seed(master_seed, k)``.  With ``frozen_scores``
    the scores are held fixed and only the values are redrawn, which gives
    the conditional law of the output.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if not 0 <= index < spec.spatial_dim:
        raise ValueError(f"index {index} out of range")
    spec.factors
    fs = _check_frozen(spec, frozen_scores)
    tasks = [(spec, master_seed, a, b, fs, False) for a, b in chunk_bounds(count)]
    zy = np.concatenate(map_ordered(_limit_task, tasks, workers))
    source = f"limit:z_y[{index}]" + ("|frozen" if fs is not None else "")
    return SampleSet(zy[:, index], Provenance(source, int(master_seed), count, spec.digest()))


__all__ = [
    "LimitLawSpec",
    "LimitSample",
    "build_limit_spec",
    "clip_second_moment",
    "draw_limit",
    "fourth_moment_isserlis",
    "input_second_moments",
    "nonlin_second_moment",
    "sample_limit",
    "sample_limit_draws",
    "score_block",
]
