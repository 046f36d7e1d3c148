"""Graph-regularized nonnegative completion of the anchor tensor.

The learned object is the dense tag x anchor-image x anchor-user tensor A.
Its objective couples a reconstruction term against the observed non-anchor
tensor (through the tag, image and user adjacency operators), proximity to
the observed anchor tensor, a ridge term, and two pairwise smoothness
penalties over the image and user intra-adjacency graphs.  Minimization is
by a multiplicative update that preserves nonnegativity and never increases
the objective; zero entries stay zero.

The pairwise penalties never loop over graph edges: for a symmetric weight
matrix W acting through rows a_i of the inter-adjacency, the sums
``sum_ij W_ij a_i^T a_j`` and ``sum_ij W_ij a_i^T a_i`` collapse to
``I^T W I`` and ``I^T diag(W 1) I``, computed once per solve.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graphs import AdjacencySet
from .tensors import (
    DimensionMismatchError,
    SparseTensor3,
    frob_norm_sq,
    mode_product,
    mode_product_sparse,
)

logger = logging.getLogger(__name__)

POSITIVE_FLOOR = 1e-8  # initialization clamp keeping multiplicative updates alive
CHECKPOINT_MAGIC = b"SGTC"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIBII")


class CompletionNumericsError(ArithmeticError):
    """The solve produced (or was handed) non-finite values."""


@dataclass(frozen=True)
class CompletionConfig:
    alpha: float = 0.005
    beta: float = 0.001
    lambda1: float = 0.1
    lambda2: float = 0.05
    max_iters: int = 2000
    rel_tol: float = 1e-5
    init_noise_scale: float = 0.01
    seed: int = 0

    def __post_init__(self):
        for name in ("alpha", "beta", "lambda1", "lambda2", "init_noise_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")


@dataclass
class CompletionState:
    tensor: np.ndarray
    trace: list
    iterations: int
    converged: bool
    stalled_entries: int = 0


def contracted_intra(inter, intra) -> tuple[np.ndarray, np.ndarray]:
    """Collapse the pairwise sums of a symmetric intra matrix onto anchor space."""
    inter = inter.tocsr() if sp.issparse(inter) else sp.csr_matrix(inter)
    intra = intra.tocsr() if sp.issparse(intra) else sp.csr_matrix(intra)
    row_mass = np.asarray(intra.sum(axis=1)).ravel()
    pair = np.asarray((inter.T @ intra @ inter).todense())
    diag = np.asarray((inter.T @ sp.diags(row_mass) @ inter).todense())
    return pair, diag


def contracted_intra_implicit(inter, col_mass) -> tuple[np.ndarray, np.ndarray]:
    """Same contractions without materializing the intra matrix.

    Uses intra = inter * diag(1/col_mass) * inter^T, whose row sums equal the
    row sums of the inter matrix restricted to live columns.
    """
    inter = inter.tocsr() if sp.issparse(inter) else sp.csr_matrix(inter)
    col_mass = np.asarray(col_mass, dtype=np.float64).ravel()
    keep = np.flatnonzero(col_mass > 0)
    if keep.size == 0:
        raise ValueError("every anchor column has zero mass")
    sub = inter[:, keep]
    bridge = np.asarray((sub.T @ inter).todense())  # live anchors x anchors
    pair = bridge.T @ (bridge / col_mass[keep][:, None])
    pair = (pair + pair.T) * 0.5
    row_mass = np.asarray(sub.sum(axis=1)).ravel()
    diag = np.asarray((inter.T @ sp.diags(row_mass) @ inter).todense())
    return pair, diag


@dataclass(frozen=True)
class Operators:
    """Iteration-invariant pieces: adjoint image, Gram operators, contractions."""

    adjoint: np.ndarray  # observed tensor pulled back onto anchor space
    tag_gram: np.ndarray
    image_gram: np.ndarray
    user_gram: np.ndarray
    pair_image: np.ndarray
    diag_image: np.ndarray
    pair_user: np.ndarray
    diag_user: np.ndarray
    observed_norm_sq: float

    @classmethod
    def build(cls, observed: SparseTensor3, adjacency: AdjacencySet) -> "Operators":
        tags = adjacency.tag_intra
        images = adjacency.image_inter
        users = adjacency.user_inter
        adjoint = mode_product_sparse(observed, tags.T, 1)
        adjoint = mode_product(adjoint, images.T, 2)
        adjoint = mode_product(adjoint, users.T, 3)
        pair_image, diag_image = contracted_intra(images, adjacency.image_intra)
        pair_user, diag_user = contracted_intra(users, adjacency.user_intra)
        return cls(
            adjoint,
            np.asarray((tags.T @ tags).todense()),
            np.asarray((images.T @ images).todense()),
            np.asarray((users.T @ users).todense()),
            pair_image,
            diag_image,
            pair_user,
            diag_user,
            frob_norm_sq(observed),
        )


@dataclass(frozen=True)
class _Parts:
    gram: np.ndarray  # A through the three Gram operators
    pair_image: np.ndarray
    diag_image: np.ndarray
    pair_user: np.ndarray
    diag_user: np.ndarray


def _parts(anchor: np.ndarray, ops: Operators) -> _Parts:
    gram = mode_product(anchor, ops.tag_gram, 1)
    gram = mode_product(gram, ops.image_gram, 2)
    gram = mode_product(gram, ops.user_gram, 3)
    return _Parts(
        gram,
        mode_product(anchor, ops.pair_image, 2),
        mode_product(anchor, ops.diag_image, 2),
        mode_product(anchor, ops.pair_user, 3),
        mode_product(anchor, ops.diag_user, 3),
    )


def _objective_from_parts(anchor, parts, ops, baseline, config) -> float:
    fit = ops.observed_norm_sq - 2.0 * np.vdot(ops.adjoint, anchor) + np.vdot(parts.gram, anchor)
    fit = max(fit, 0.0)  # guards roundoff on near-exact reconstructions
    diff = anchor - baseline
    value = fit + config.alpha * np.vdot(diff, diff) + config.beta * np.vdot(anchor, anchor)
    value += config.lambda1 * np.vdot(parts.diag_image - parts.pair_image, anchor)
    value += config.lambda2 * np.vdot(parts.diag_user - parts.pair_user, anchor)
    return float(value)


def _pair_penalty(anchor, inter, intra, mode) -> float:
    """Literal (1/2) sum_ij W_ij ||slice_i - slice_j||_F^2 via the slice Gram matrix."""
    spread = mode_product(anchor, inter, mode)
    flat = np.moveaxis(spread, mode - 1, 0).reshape(spread.shape[mode - 1], -1)
    gram = flat @ flat.T
    row_mass = np.asarray(intra.sum(axis=1)).ravel()
    return float(row_mass @ np.einsum("ii->i", gram) - intra.multiply(gram).sum())


def _validate_problem(observed, baseline, adjacency):
    baseline = np.asarray(baseline, dtype=np.float64)
    if baseline.ndim != 3:
        raise DimensionMismatchError("anchor baseline must be a 3-way tensor")
    n_tags, n_obs_images, n_obs_users = observed.dims
    m_tags, m_images, m_users = baseline.shape
    if n_tags != m_tags:
        raise DimensionMismatchError(
            f"tag extents disagree: observed {n_tags}, anchor {m_tags}"
        )
    checks = (
        ("tag", adjacency.tag_intra.shape, (n_tags, n_tags)),
        ("image inter", adjacency.image_inter.shape, (n_obs_images, m_images)),
        ("user inter", adjacency.user_inter.shape, (n_obs_users, m_users)),
        ("image intra", adjacency.image_intra.shape, (n_obs_images, n_obs_images)),
        ("user intra", adjacency.user_intra.shape, (n_obs_users, n_obs_users)),
    )
    for name, got, want in checks:
        if tuple(got) != want:
            raise DimensionMismatchError(f"{name} adjacency has shape {got}, expected {want}")
    if (baseline < 0).any():
        raise ValueError("anchor baseline must be nonnegative")
    if not np.isfinite(baseline).all():
        raise CompletionNumericsError("anchor baseline contains non-finite values")
    return baseline


def objective(anchor, observed, baseline, adjacency, config) -> float:
    """Full objective, evaluated from scratch (reconstruction + penalties)."""
    baseline = _validate_problem(observed, baseline, adjacency)
    anchor = np.asarray(anchor, dtype=np.float64)
    recon = mode_product(anchor, adjacency.tag_intra, 1)
    recon = mode_product(recon, adjacency.image_inter, 2)
    recon = mode_product(recon, adjacency.user_inter, 3)
    inner = float(np.dot(observed.values, recon[tuple(observed.coords.T)])) if observed.nnz else 0.0
    fit = max(frob_norm_sq(observed) - 2.0 * inner + float(np.vdot(recon, recon)), 0.0)
    diff = anchor - baseline
    value = fit + config.alpha * np.vdot(diff, diff) + config.beta * np.vdot(anchor, anchor)
    if config.lambda1:
        value += config.lambda1 * _pair_penalty(anchor, adjacency.image_inter, adjacency.image_intra, 2)
    if config.lambda2:
        value += config.lambda2 * _pair_penalty(anchor, adjacency.user_inter, adjacency.user_intra, 3)
    if not np.isfinite(value):
        raise CompletionNumericsError("objective is non-finite")
    return float(value)


def gradient(anchor, observed, baseline, adjacency, config) -> np.ndarray:
    """Exact gradient of the objective with respect to the anchor tensor."""
    baseline = _validate_problem(observed, baseline, adjacency)
    anchor = np.asarray(anchor, dtype=np.float64)
    ops = Operators.build(observed, adjacency)
    parts = _parts(anchor, ops)
    grad = parts.gram - ops.adjoint
    grad += config.alpha * (anchor - baseline) + config.beta * anchor
    grad += config.lambda1 * (parts.diag_image - parts.pair_image)
    grad += config.lambda2 * (parts.diag_user - parts.pair_user)
    return 2.0 * grad


def _apply_rule(anchor, parts, ops, baseline, config):
    numer = ops.adjoint + config.alpha * baseline
    numer = numer + config.lambda1 * parts.pair_image + config.lambda2 * parts.pair_user
    denom = parts.gram + (config.alpha + config.beta) * anchor
    denom = denom + config.lambda1 * parts.diag_image + config.lambda2 * parts.diag_user
    live = denom > 0
    ratio = np.ones_like(anchor)
    np.divide(numer, denom, out=ratio, where=live)
    stalled = int(np.count_nonzero(~live & (numer > 0)))
    return anchor * ratio, stalled


def multiplicative_step(state: CompletionState, observed, baseline, adjacency, config) -> CompletionState:
    """One multiplicative update; the trace gains the post-step objective."""
    baseline = _validate_problem(observed, baseline, adjacency)
    ops = Operators.build(observed, adjacency)
    anchor = np.asarray(state.tensor, dtype=np.float64)
    trace = list(state.trace)
    if not trace:
        trace.append(_objective_from_parts(anchor, _parts(anchor, ops), ops, baseline, config))
    updated, stalled = _apply_rule(anchor, _parts(anchor, ops), ops, baseline, config)
    trace.append(_objective_from_parts(updated, _parts(updated, ops), ops, baseline, config))
    return CompletionState(
        updated, trace, state.iterations + 1, state.converged, state.stalled_entries + stalled
    )


def initial_tensor(baseline: np.ndarray, config: CompletionConfig) -> np.ndarray:
    """Baseline plus a small uniform disturbance, clamped strictly positive."""
    rng = np.random.default_rng(config.seed)
    scale = config.init_noise_scale
    noise = rng.uniform(-scale, scale, size=baseline.shape)
    return np.maximum(baseline + noise, POSITIVE_FLOOR)


def solve(observed, baseline, adjacency, config: CompletionConfig) -> CompletionState:
    """Iterate the multiplicative update until the relative objective change
    falls under ``rel_tol`` or ``max_iters`` updates have run."""
    baseline = _validate_problem(observed, baseline, adjacency)
    ops = Operators.build(observed, adjacency)
    anchor = initial_tensor(baseline, config)
    parts = _parts(anchor, ops)
    previous = _objective_from_parts(anchor, parts, ops, baseline, config)
    trace = [previous]
    stalled_total = 0
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iters + 1):
        anchor, stalled = _apply_rule(anchor, parts, ops, baseline, config)
        stalled_total += stalled
        parts = _parts(anchor, ops)
        current = _objective_from_parts(anchor, parts, ops, baseline, config)
        trace.append(current)
        if not np.isfinite(current):
            raise CompletionNumericsError(f"objective became non-finite at iteration {iterations}")
        if abs(current - previous) <= config.rel_tol * max(previous, np.finfo(float).tiny):
            converged = True
            break
        previous = current
    if stalled_total:
        logger.warning(
            "%d entr(ies) hit a zero denominator with positive numerator and were kept",
            stalled_total,
        )
    return CompletionState(anchor, trace, iterations, converged, stalled_total)


def save_checkpoint(path, state: CompletionState) -> None:
    """Binary container: magic, version, dims, counters, then raw doubles."""
    tensor = np.ascontiguousarray(state.tensor, dtype="<f8")
    trace = np.asarray(state.trace, dtype="<f8")
    header = _HEADER.pack(
        CHECKPOINT_MAGIC,
        CHECKPOINT_VERSION,
        tensor.shape[0],
        tensor.shape[1],
        tensor.shape[2],
        state.iterations,
        1 if state.converged else 0,
        state.stalled_entries,
        trace.size,
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(tensor.tobytes())
        handle.write(trace.tobytes())


def load_checkpoint(path) -> CompletionState:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint")
    magic, version, n1, n2, n3, iterations, converged, stalled, n_trace = _HEADER.unpack_from(blob)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    need = _HEADER.size + 8 * (n1 * n2 * n3 + n_trace)
    if len(blob) != need:
        raise ValueError(f"{path}: expected {need} bytes, found {len(blob)}")
    body = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
    tensor = body[: n1 * n2 * n3].reshape(n1, n2, n3).copy()
    trace = body[n1 * n2 * n3:].tolist()
    return CompletionState(tensor, trace, iterations, bool(converged), stalled)


def write_trace_csv(path, trace) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("iter,objective\n")
        for step, value in enumerate(trace):
            handle.write(f"{step},{repr(float(value))}\n")


def read_trace_csv(path) -> list:
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not lines or lines[0] != "iter,objective":
        raise ValueError(f"{path}: expected an 'iter,objective' header")
    return [float(line.split(",")[1]) for line in lines[1:]]
