"""Finite-width multi-head attention at random initialization.

The layer follows the setup used for all experiments: an initial vector
``h`` with i.i.d. ``N(0, h_var)`` coordinates, inputs
``x^i = clip(W^i h, C)`` for ``i < s``, and per head ``a``

    p[a, i, j] = scale * (W^{Q,a} x^i) . (W^{K,a} x^j)
    y^i        = sum_a sum_j softmax_j(p[a, i, :]) * W^{O,a} W^{V,a} x^j

with the value vector indexed by the attended position ``j``.

Two samplers produce draws with the same law.

``method="exact"`` (default) never materializes a weight matrix.  Given the
inputs, the rows of ``W X^T`` are i.i.d. ``N(0, sigma^2/n * G)`` with
``G = X X^T``, so ``Q = Z1 A^T`` with ``A A^T = sigma_Q^2/n * G``.  The
score matrix is then ``A (Z1^T Z2) A^T`` up to constants, and ``Z1^T Z2``
(``d x s`` Gaussian factors) has the law of ``T N`` where ``T`` is the
Bartlett factor of a ``Wishart_s(d, I)`` matrix and ``N`` is ``s x s``
standard normal.  The requested rows of ``W^{O,a} V`` are handled the same
way.  Likewise ``W^i h`` has i.i.d. ``N(0, sigma^2 |h|^2 / n)`` coordinates
given ``h``.  A draw costs ``O(s n + H s^3)`` instead of ``O(H n^2)``.

``method="dense"`` builds the layer as a Netsor program and multiplies
explicit Gaussian matrices.  It is slow and exists as a reference.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from enum import Enum
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import netsor
from .errors import InvalidConfig, MissingHeadDim, NonFiniteScore
from .nonlin import clip_fn
from .parallel import chunk_bounds, map_ordered
from .seeding import KeyedStream, derive_seed, rng_for
from .stats import Provenance, SampleSet


class ScalingRule(str, Enum):
    INV_SQRT_WIDTH = "inv_sqrt_width"
    INV_WIDTH = "inv_width"
    INV_SQRT_HEAD = "inv_sqrt_head"


@dataclass(frozen=True)
class AttentionConfig:
    width: int
    spatial_dim: int = 4
    heads: int = 1
    scaling: ScalingRule = ScalingRule.INV_SQRT_WIDTH
    head_dim: int | None = None
    sigma_q_sq: float = 1.0
    sigma_k_sq: float = 1.0
    sigma_v_sq: float = 1.0
    sigma_o_sq: float = 1.0
    sigma_input_sq: float = 1.0
    clip_C: float = 100.0
    # variance of the coordinates of the initial vector h; 0 gives h == 0
    h_var: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "scaling", ScalingRule(self.scaling))
        for name in ("width", "spatial_dim", "heads"):
            if int(getattr(self, name)) < 1:
                raise InvalidConfig(f"{name} must be a positive integer")
        for name in ("sigma_q_sq", "sigma_k_sq", "sigma_v_sq", "sigma_o_sq", "sigma_input_sq", "clip_C"):
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"{name} must be > 0")
        if self.h_var < 0:
            raise InvalidConfig("h_var must be >= 0")
        if self.scaling is ScalingRule.INV_SQRT_HEAD:
            if self.head_dim is None:
                raise MissingHeadDim("inv_sqrt_head scaling needs head_dim")
            if self.head_dim < 1 or self.width != self.heads * self.head_dim:
                raise InvalidConfig(
                    f"low-rank layout needs width == heads * head_dim, got "
                    f"{self.width} != {self.heads} * {self.head_dim}"
                )
        elif self.head_dim is not None:
            raise InvalidConfig("head_dim is only used with inv_sqrt_head scaling")

    @property
    def low_rank(self) -> bool:
        return self.scaling is ScalingRule.INV_SQRT_HEAD

    @property
    def proj_dim(self) -> int:
        """Output dimension of W^Q, W^K, W^V (n, or n_H when low rank)."""
        return self.head_dim if self.low_rank else self.width

    @property
    def score_scale(self) -> float:
        if self.scaling is ScalingRule.INV_SQRT_WIDTH:
            return self.width**-0.5
        if self.scaling is ScalingRule.INV_WIDTH:
            return 1.0 / self.width
        return self.head_dim**-0.5

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scaling"] = self.scaling.value
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class AttentionSample:
    scores: np.ndarray  # (H, s, s)
    attn_weights: np.ndarray  # (H, s, s)
    coords: tuple[tuple[int, int], ...]
    outputs: np.ndarray  # aligned with coords

    def output(self, i: int, alpha: int) -> float:
        return float(self.outputs[self.coords.index((i, alpha))])


def softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-subtracted softmax along ``axis``."""
    scores = np.asarray(scores, dtype=float)
    if not np.all(np.isfinite(scores)):
        raise NonFiniteScore("scores must be finite")
    e = np.exp(scores - scores.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax_row(scores) -> np.ndarray:
    return softmax(np.asarray(scores, dtype=float).reshape(-1))


# -- reduced-form sampler ---------------------------------------------------


@dataclass(frozen=True)
class _Layout:
    """Where each variate of one reduced-form draw sits in the flat arrays.

    Per draw, one ``chisquare`` call fills ``chi`` and one
    ``standard_normal`` call fills ``z``, in the order listed here.
    """

    n: int
    s: int
    H: int
    d: int
    k: int

    @property
    def qk_bartlett(self) -> bool:
        return self.d >= self.s

    @property
    def row_bartlett(self) -> bool:
        return self.d >= self.k

    def chi_dofs(self) -> np.ndarray:
        parts = [np.array([float(self.n)])]
        if self.qk_bartlett:
            parts.append(np.tile(self.d - np.arange(self.s, dtype=float), self.H))
        if self.row_bartlett:
            parts.append(np.tile(self.d - np.arange(self.k, dtype=float), self.H))
        return np.concatenate(parts)

    def z_sizes(self) -> tuple[int, int, int]:
        s, H, d, k = self.s, self.H, self.d, self.k
        qk = H * (s * (s - 1) // 2 + s * s) if self.qk_bartlett else 2 * H * d * s
        rows = H * (k * (k - 1) // 2 + k * s) if self.row_bartlett else H * (k * d + d * s)
        return s * self.n, qk, rows


def _layout(cfg: AttentionConfig, n_alpha: int) -> _Layout:
    return _Layout(cfg.width, cfg.spatial_dim, cfg.heads, cfg.proj_dim, n_alpha)


@lru_cache(maxsize=64)
def _draw_shape(lay: _Layout) -> tuple[np.ndarray, int]:
    return lay.chi_dofs(), sum(lay.z_sizes())


def _raw_draw(cfg: AttentionConfig, seed: int, n_alpha: int, rng_source=None):
    """All random variates of one reduced-form draw as two flat arrays."""
    dofs, nz = _draw_shape(_layout(cfg, n_alpha))
    rng = rng_source.rng(seed, 0) if rng_source is not None else rng_for(seed, 0)
    chi = rng.chisquare(dofs)
    z = rng.standard_normal(nz)
    return chi, z


@lru_cache(maxsize=None)
def _tril(dim: int):
    return np.tril_indices(dim, -1)


def _bartlett(diag_chi: np.ndarray, lower: np.ndarray, dim: int) -> np.ndarray:
    """Lower factors T, T T^T ~ Wishart(dof, I), from chi-square diagonals and normals."""
    T = np.zeros(diag_chi.shape[:-1] + (dim, dim))
    ii = np.arange(dim)
    T[..., ii, ii] = np.sqrt(diag_chi)
    lo = _tril(dim)
    T[..., lo[0], lo[1]] = lower
    return T


def _split_raw(lay: _Layout, chi: np.ndarray, z: np.ndarray):
    """Batched (h_sq / h_var, z_in, cross, rows) from stacked raw arrays.

    ``cross`` has the law of Z1^T Z2 for independent d x s standard normal
    factors; ``rows`` that of R Z for standard normal R (k x d), Z (d x s).
    """
    B = chi.shape[0]
    s, H, d, k = lay.s, lay.H, lay.d, lay.k
    n_in, n_qk, _ = lay.z_sizes()
    z_in = z[:, :n_in].reshape(B, s, lay.n)
    z_qk = z[:, n_in : n_in + n_qk]
    z_rows = z[:, n_in + n_qk :]
    c = 1
    if lay.qk_bartlett:
        diag = chi[:, c : c + H * s].reshape(B, H, s)
        c += H * s
        m = s * (s - 1) // 2
        zz = z_qk.reshape(B, H, m + s * s)
        cross = _bartlett(diag, zz[..., :m], s) @ zz[..., m:].reshape(B, H, s, s)
    else:
        zz = z_qk.reshape(B, H, 2, d, s)
        cross = np.swapaxes(zz[:, :, 0], -1, -2) @ zz[:, :, 1]
    if lay.row_bartlett:
        diag = chi[:, c : c + H * k].reshape(B, H, k)
        m = k * (k - 1) // 2
        zz = z_rows.reshape(B, H, m + k * s)
        rows = _bartlett(diag, zz[..., :m], k) @ zz[..., m:].reshape(B, H, k, s)
    else:
        zz = z_rows.reshape(B, H, k * d + d * s)
        rows = zz[..., : k * d].reshape(B, H, k, d) @ zz[..., k * d :].reshape(B, H, d, s)
    return chi[:, 0], z_in, cross, rows


def _inputs_from(cfg: AttentionConfig, h_sq, z_in) -> np.ndarray:
    h_scale = np.sqrt(cfg.sigma_input_sq * np.asarray(h_sq) / cfg.width)
    return np.clip(h_scale[..., None, None] * z_in, -cfg.clip_C, cfg.clip_C)


def _gram_roots(G: np.ndarray) -> np.ndarray:
    """Square roots A with A A^T = G for a stack of PSD matrices."""
    try:
        return np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        pass
    out = np.empty_like(G)
    for b in range(G.shape[0]):
        try:
            out[b] = np.linalg.cholesky(G[b])
        except np.linalg.LinAlgError:
            w, v = np.linalg.eigh(G[b])
            out[b] = v * np.sqrt(np.clip(w, 0.0, None))
    return out


def _assemble(cfg: AttentionConfig, h_sq, z_in, cross, rows):
    """Batched scores, attention weights and output rows from raw draws.

    Shapes: h_sq (B,), z_in (B,s,n), cross (B,H,s,s), rows (B,H,k,s).
    Returns scores (B,H,s,s), weights (B,H,s,s), y (B,k,s) with
    ``y[b, m, i]`` the output at position i, coordinate alpha_m.
    """
    n = cfg.width
    X = _inputs_from(cfg, h_sq, z_in)
    A = _gram_roots(X @ np.swapaxes(X, 1, 2))[:, None]
    At = np.swapaxes(A, -1, -2)
    c_qk = cfg.score_scale * np.sqrt(cfg.sigma_q_sq * cfg.sigma_k_sq) / n
    scores = c_qk * (A @ cross @ At)
    weights = softmax(scores, axis=-1)
    fan_o = cfg.proj_dim
    c_v = np.sqrt(cfg.sigma_v_sq / n * cfg.sigma_o_sq / fan_o)
    v_tilde = c_v * (rows @ At)  # (B,H,k,s): coordinate alpha_m of v~^{a,j}
    y = np.einsum("bhij,bhmj->bmi", weights, v_tilde)
    return scores, weights, y


def _normalize_coords(cfg: AttentionConfig, coord_set) -> tuple[tuple[tuple[int, int], ...], list[int]]:
    coords = tuple((int(i), int(a)) for i, a in coord_set)
    if not coords:
        raise ValueError("coord_set must be nonempty")
    for i, a in coords:
        if not (0 <= i < cfg.spatial_dim and 0 <= a < cfg.width):
            raise ValueError(f"coordinate {(i, a)} out of range")
    alphas = sorted({a for _, a in coords})
    return coords, alphas


def _exact_chunk(cfg: AttentionConfig, seeds: Sequence[int], n_alpha: int):
    stream = KeyedStream()
    raws = [_raw_draw(cfg, seed, n_alpha, stream) for seed in seeds]
    chi = np.stack([r[0] for r in raws])
    z = np.stack([r[1] for r in raws])
    chi_n, z_in, cross, rows = _split_raw(_layout(cfg, n_alpha), chi, z)
    return _assemble(cfg, cfg.h_var * chi_n, z_in, cross, rows)


def sample_inputs(config: AttentionConfig, seed: int) -> np.ndarray:
    """The s input vectors x^i (shape (s, n)) of the draw with this seed.

    ``x^i = clip(W^i h, C)``; given ``h`` the coordinates of ``W^i h`` are
    i.i.d. ``N(0, sigma_input^2 |h|^2 / n)``, which is how they are drawn.
    """
    lay = _layout(config, 1)
    chi, z = _raw_draw(config, seed, 1)
    chi_n, z_in, _, _ = _split_raw(lay, chi[None], z[None])
    return _inputs_from(config, config.h_var * chi_n, z_in)[0]


# -- dense reference ----------------------------------------------------------


@dataclass(frozen=True)
class _AttentionProgram:
    program: netsor.NetsorProgram
    x: tuple[int, ...]
    q: tuple[tuple[int, ...], ...]
    k: tuple[tuple[int, ...], ...]
    v_tilde: tuple[tuple[int, ...], ...]


def attention_program(cfg: AttentionConfig) -> _AttentionProgram:
    """The layer written as a Netsor program (h, W^i h, clip, Q/K/V/O MatMuls)."""
    Full, Head = netsor.DimRole.FULL, netsor.DimRole.HEAD
    proj = Head if cfg.low_rank else Full
    nodes: list = [netsor.Initial()]
    clip = clip_fn(cfg.clip_C)
    x_ids = []
    for i in range(cfg.spatial_dim):
        nodes.append(netsor.MatMul(netsor.WeightSpec(f"in{i}", cfg.sigma_input_sq), 0))
        nodes.append(netsor.Nonlin(clip, (len(nodes) - 1,)))
        x_ids.append(len(nodes) - 1)
    q_ids, k_ids, vt_ids = [], [], []
    for a in range(cfg.heads):
        wq = netsor.WeightSpec(f"Q{a}", cfg.sigma_q_sq, proj, Full)
        wk = netsor.WeightSpec(f"K{a}", cfg.sigma_k_sq, proj, Full)
        wv = netsor.WeightSpec(f"V{a}", cfg.sigma_v_sq, proj, Full)
        wo = netsor.WeightSpec(f"O{a}", cfg.sigma_o_sq, Full, proj)
        qa, ka, va = [], [], []
        for xi in x_ids:
            nodes.append(netsor.MatMul(wq, xi))
            qa.append(len(nodes) - 1)
            nodes.append(netsor.MatMul(wk, xi))
            ka.append(len(nodes) - 1)
            nodes.append(netsor.MatMul(wv, xi))
            nodes.append(netsor.MatMul(wo, len(nodes) - 1))
            va.append(len(nodes) - 1)
        q_ids.append(tuple(qa))
        k_ids.append(tuple(ka))
        vt_ids.append(tuple(va))
    program = netsor.build_program(nodes, [[cfg.h_var]])
    return _AttentionProgram(program, tuple(x_ids), tuple(q_ids), tuple(k_ids), tuple(vt_ids))


def _dense_forward(cfg: AttentionConfig, seed: int, alphas: list[int]):
    ap = attention_program(cfg)
    vec = netsor.sample_finite(ap.program, cfg.width, cfg.head_dim if cfg.low_rank else None, seed)
    Q = np.array([[vec[j] for j in row] for row in ap.q])  # (H, s, d)
    K = np.array([[vec[j] for j in row] for row in ap.k])
    scores = cfg.score_scale * (Q @ np.swapaxes(K, 1, 2))
    weights = softmax(scores, axis=-1)
    Vt = np.array([[vec[j][alphas] for j in row] for row in ap.v_tilde])  # (H, s, k)
    y = np.einsum("hij,hjm->mi", weights, Vt)
    return scores[None], weights[None], y[None]


# -- public sampling API ------------------------------------------------------


def forward(
    config: AttentionConfig,
    seed: int,
    coord_set=((0, 0),),
    method: str = "exact",
) -> AttentionSample:
    """One fresh random layer: scores, attention weights and requested outputs.

    ``coord_set`` holds 0-based ``(i, alpha)`` pairs; ``(0, 0)`` is y_1^1.
    """
    coords, alphas = _normalize_coords(config, coord_set)
    if method == "exact":
        scores, weights, y = _exact_chunk(config, [seed], len(alphas))
    elif method == "dense":
        scores, weights, y = _dense_forward(config, seed, alphas)
    else:
        raise ValueError(f"unknown method {method!r}")
    outputs = np.array([y[0, alphas.index(a), i] for i, a in coords])
    return AttentionSample(scores[0], weights[0], coords, outputs)


def sample_seed(master_seed: int, k: int) -> int:
    """Seed of Monte Carlo draw ``k`` under ``master_seed``."""
    return derive_seed(master_seed, k)


def _batch_task(config, master_seed, start, stop, coordinate, score_index, method):
    i, alpha = coordinate
    a, si, sj = score_index
    if method == "exact":
        seeds = [sample_seed(master_seed, k) for k in range(start, stop)]
        scores, _, y = _exact_chunk(config, seeds, 1)
        # only alpha's row was drawn; its position within the k=1 row block is 0
        return y[:, 0, i].copy(), scores[:, a, si, sj].copy()
    ys, ps = [], []
    for k in range(start, stop):
        smp = forward(config, sample_seed(master_seed, k), [(i, alpha)], method)
        ys.append(smp.outputs[0])
        ps.append(smp.scores[a, si, sj])
    return np.array(ys), np.array(ps)


def _run_batch(config, master_seed, count, coordinate, score_index, workers, method):
    if count < 1:
        raise ValueError("count must be >= 1")
    _normalize_coords(config, [coordinate])
    a, si, sj = score_index
    if not (0 <= a < config.heads and 0 <= si < config.spatial_dim and 0 <= sj < config.spatial_dim):
        raise ValueError(f"score index {score_index} out of range")
    tasks = [
        (config, master_seed, k0, k1, tuple(coordinate), tuple(score_index), method)
        for k0, k1 in chunk_bounds(count)
    ]
    parts = map_ordered(_batch_task, tasks, workers)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def sample_output_batch(
    config: AttentionConfig,
    master_seed: int,
    count: int,
    coordinate=(0, 0),
    workers: int = 1,
    method: str = "exact",
) -> SampleSet:
    """``count`` independent draws of y_alpha^i, each from a fresh layer.

    Draw ``k`` uses ``sample_seed(master_seed, k)``; the result does not
    depend on ``workers``.
    """
    y, _ = _run_batch(config, master_seed, count, coordinate, (0, 0, 0), workers, method)
    i, alpha = coordinate
    prov = Provenance(f"finite:y[{i},{alpha}]", int(master_seed), count, config.digest())
    return SampleSet(y, prov)


def sample_score_batch(
    config: AttentionConfig,
    master_seed: int,
    count: int,
    score_index=(0, 0, 0),
    workers: int = 1,
    method: str = "exact",
) -> SampleSet:
    """``count`` independent draws of the score p[a, i, j] (0-based)."""
    _, p = _run_batch(config, master_seed, count, (0, 0), score_index, workers, method)
    a, i, j = score_index
    prov = Provenance(f"finite:p[{a},{i},{j}]", int(master_seed), count, config.digest())
    return SampleSet(p, prov)
