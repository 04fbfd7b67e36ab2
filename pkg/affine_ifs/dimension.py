"""
Closed-form and semi-analytic dimension quantities.

Ledrappier-Young sums, the Lyapunov dimension, the singular value function,
sub-additive pressure with its root (affinity dimension), Bedford-McMullen
carpet oracles and the equality criteria relating them.
"""
import functools
import logging
import math
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import bisect
from scipy.special import logsumexp

from .async_orchestrator import run_parallel
from .errors import InvalidEntropyError, PreconditionError, ResourceBudgetError
from .schemas import (
    AffineIFS,
    CarpetResult,
    DimValue,
    EntropySequence,
    LyapunovSpectrum,
    SharpnessResult,
    ShiftMeasure,
    SSCConsequences,
)
from .shift_measure import xlogx
from .tools.linalg import operator_norm
from .tools.provenance import digest

logger = logging.getLogger(__name__)

PRESSURE_BUDGET = 10_000_000
PRODUCT_CHUNK = 65_536
EQUALITY_TOL = 1e-9


def _spectrum_payload(spec: LyapunovSpectrum) -> dict:
    return {"exponents": spec.exponents, "multiplicities": spec.multiplicities}


def _check_lengths(h: EntropySequence, spec: LyapunovSpectrum) -> None:
    if h.s != spec.s:
        raise PreconditionError(f"entropy sequence has {len(h.h)} terms but the spectrum needs s+1 = {spec.s + 1}")


def _ratio(numerator: float, exponent: float) -> float:
    """numerator / exponent with the convention x / -inf = 0."""
    if math.isinf(exponent):
        return 0.0
    return numerator / exponent


def _ly_terms(h: EntropySequence, spec: LyapunovSpectrum) -> List[float]:
    """(h_{i+1} - h_i) / λ_{i+1} for i = 0 .. s-1."""
    return [_ratio(h.h[i + 1] - h.h[i], spec.exponents[i]) for i in range(spec.s)]


def ly_formula(h: EntropySequence, spec: LyapunovSpectrum) -> DimValue:
    """
    Ledrappier-Young sum Σ_{i<s} (h_{i+1} - h_i) / λ_{i+1}.

    Each drop h_i - h_{i+1} is capped by (-λ_{i+1}) k_{i+1}, which keeps every
    term at most k_{i+1} and the total at most d.
    """
    _check_lengths(h, spec)
    if any(lam >= 0 for lam in spec.exponents):
        raise PreconditionError(f"all exponents must be negative, got {spec.exponents}")
    for i, (lam, k) in enumerate(zip(spec.exponents, spec.multiplicities)):
        drop = h.h[i] - h.h[i + 1]
        if math.isfinite(lam) and drop > -lam * k + EQUALITY_TOL:
            raise InvalidEntropyError(
                f"entropy drop h_{i} - h_{i + 1} = {drop:.6g} exceeds (-λ_{i + 1}) k_{i + 1} = {-lam * k:.6g}"
            )

    terms = _ly_terms(h, spec)
    value = min(float(max(0.0, sum(terms))), float(spec.dimension))
    return DimValue(
        value=value,
        kind="ly_formula",
        inputs_digest=digest({"h": h.h, **_spectrum_payload(spec)}, "ly_formula"),
        details={f"term_{i + 1}": t for i, t in enumerate(terms)},
    )


def lyapunov_branch(h0: float, spec: LyapunovSpectrum) -> int:
    """j with L_{j-1} <= h0 < L_j, or 0 when h0 >= L_s."""
    cumulative = spec.cumulative_exponents
    for j in range(1, spec.s + 1):
        if cumulative[j - 1] <= h0 < cumulative[j]:
            return j
    return 0


def lyapunov_dimension(h0: float, spec: LyapunovSpectrum) -> DimValue:
    """
    Lyapunov dimension dim_LY(m, M) for entropy h0.

    If L_{j-1} <= h0 < L_j the value is d_{j-1} + (h0 - L_{j-1}) / (-λ_j);
    if h0 >= L_s it is d h0 / L_s. The value is reported uncapped with a
    min(d, value) companion.
    """
    if h0 < 0:
        raise PreconditionError(f"entropy must be >= 0, got {h0}")
    if any(lam >= 0 for lam in spec.exponents):
        raise PreconditionError(f"all exponents must be negative, got {spec.exponents}")
    cumulative = spec.cumulative_exponents
    dims = spec.cumulative_multiplicities
    branch = lyapunov_branch(h0, spec)

    if branch:
        exponent = spec.exponents[branch - 1]
        increment = 0.0 if math.isinf(exponent) else (h0 - cumulative[branch - 1]) / -exponent
        value = dims[branch - 1] + increment
    else:
        value = spec.dimension * h0 / cumulative[-1]

    return DimValue(
        value=float(value),
        kind="lyapunov",
        inputs_digest=digest({"h0": h0, **_spectrum_payload(spec)}, "lyapunov"),
        capped=float(min(spec.dimension, value)),
        details={"branch": float(branch), "L_s": float(cumulative[-1])},
    )


def singular_value_function(matrix, s: float) -> float:
    """
    φ^s(A) = α_1 ... α_m α_{m+1}^{s-m} for m = floor(s) < d, and (α_1 ... α_d)^{s/d} for s >= d.
    """
    if s < 0:
        raise PreconditionError(f"s must be >= 0, got {s}")
    alphas = np.linalg.svd(np.atleast_2d(np.asarray(matrix, dtype=float)), compute_uv=False)
    d = alphas.size
    if s >= d:
        return float(np.prod(alphas) ** (s / d))
    m = int(math.floor(s))
    return float(np.prod(alphas[:m]) * alphas[m] ** (s - m))


def _log_singular_value_function(log_alphas: np.ndarray, s: float) -> np.ndarray:
    """log φ^s over a batch of descending log singular values, shape (..., d)."""
    d = log_alphas.shape[-1]
    if s >= d:
        return log_alphas.sum(axis=-1) * (s / d)
    m = int(math.floor(s))
    value = log_alphas[..., :m].sum(axis=-1)
    if s > m:
        value = value + (s - m) * log_alphas[..., m]
    return value


def _word_products(mats: np.ndarray, length: int) -> np.ndarray:
    """All products M_{w_0} ... M_{w_{length-1}} in lexicographic word order."""
    d = mats.shape[1]
    products = np.eye(d)[None]
    for _ in range(length):
        products = np.einsum("aij,bjk->abik", products, mats).reshape(-1, d, d)
    return products


def _branch_log_singular_values(args: Tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    heads, tails = args
    d = heads.shape[1]
    out = np.empty((heads.shape[0] * tails.shape[0], d))
    rows_per_chunk = max(1, PRODUCT_CHUNK // tails.shape[0])
    for start in range(0, heads.shape[0], rows_per_chunk):
        block = heads[start:start + rows_per_chunk]
        products = np.einsum("aij,bjk->abik", block, tails).reshape(-1, d, d)
        with np.errstate(divide="ignore"):
            values = np.log(np.linalg.svd(products, compute_uv=False))
        out[start * tails.shape[0]:start * tails.shape[0] + values.shape[0]] = values
    return out


# affinity_dimension works on levels n and n / 2 only
@functools.lru_cache(maxsize=2)
def _cached_log_singular_values(buffer: bytes, shape: Tuple[int, ...], n: int) -> np.ndarray:
    mats = np.frombuffer(buffer, dtype=float).reshape(shape)
    head_length = (n + 1) // 2
    # first-symbol branches share the tail block
    tails = _word_products(mats, n - head_length)
    rest = _word_products(mats, head_length - 1)
    branches = [(np.einsum("ij,ajk->aik", mats[j], rest), tails) for j in range(shape[0])]
    parts = run_parallel(_branch_log_singular_values, branches, label=f"pressure level {n}")
    values = np.concatenate(parts)
    values.setflags(write=False)
    return values


def log_singular_values(mats, n: int) -> np.ndarray:
    """
    Log singular values (descending) of every length-n product, memoized by level.
    Enforces |Λ|^n <= 1e7.
    """
    mats = np.ascontiguousarray(np.asarray(mats, dtype=float))
    if mats.ndim == 1:
        mats = mats.reshape(-1, 1, 1)
    if n < 1:
        raise PreconditionError(f"level n must be >= 1, got {n}")
    count = mats.shape[0] ** n
    if count > PRESSURE_BUDGET:
        raise ResourceBudgetError(
            f"{mats.shape[0]}^{n} = {count} products exceed the budget of {PRESSURE_BUDGET}; use a smaller n"
        )
    return _cached_log_singular_values(mats.tobytes(), mats.shape, n)


def pressure(mats, s: float, n: int) -> float:
    """Level-n pressure P_n(s) = (1/n) log Σ_{|I|=n} φ^s(M_I)."""
    if s < 0:
        raise PreconditionError(f"s must be >= 0, got {s}")
    log_phi = _log_singular_value_function(log_singular_values(mats, n), s)
    return float(logsumexp(log_phi) / n)


def _pressure_root(mats: np.ndarray, n: int, tol: float) -> float:
    d = mats.shape[1]
    at_zero = pressure(mats, 0.0, n)
    assert at_zero >= 0, f"P_n(0) = {at_zero} < 0"
    if at_zero == 0:
        return 0.0
    upper = 2.0 * d
    for _ in range(64):
        if pressure(mats, upper, n) <= 0:
            break
        upper *= 2
    else:
        raise PreconditionError("pressure stays positive; the family does not contract on average")
    return float(bisect(lambda s: pressure(mats, s, n), 0.0, upper, xtol=tol))


def affinity_dimension(mats, n: int, tol: float = 1e-12) -> DimValue:
    """
    Root s*_n of P_n(s) = 0 by bisection, the affinity dimension at level n.

    Also reports s*_{n/2}, the extrapolation 2 s*_n - s*_{n/2} and the gap
    s*_{n/2} - s*_n between levels (P_n decreases to its limit, so the gap
    is the visible part of the convergence).
    """
    mats = np.asarray(mats, dtype=float)
    if mats.ndim == 1:
        mats = mats.reshape(-1, 1, 1)
    norms = operator_norm(mats)
    if np.any(norms >= 1):
        raise PreconditionError(f"all maps must be contracting, got norms {np.round(norms, 6).tolist()}")

    root = _pressure_root(mats, n, tol)
    half = max(1, n // 2)
    root_half = _pressure_root(mats, half, tol) if half != n else root
    extrapolated = 2 * root - root_half if half != n else root
    logger.info(f"affinity dimension: s*_{n}={root:.10f} s*_{half}={root_half:.10f}")

    return DimValue(
        value=root,
        kind="affinity",
        inputs_digest=digest({"mats": mats, "n": n, "tol": tol}, "affinity"),
        capped=float(min(mats.shape[1], root)),
        details={
            "level": float(n),
            "root_half_level": root_half,
            "extrapolated": float(max(0.0, extrapolated)),
            "fekete_gap": float(root_half - root),
            "pressure_half_at_root": pressure(mats, root, half),
        },
    )


def _normalize_digits(n_cols: int, m_rows: int, digits: Iterable[Sequence[int]]) -> List[Tuple[int, int]]:
    cells = [tuple(int(v) for v in cell) for cell in digits]
    if not cells:
        raise PreconditionError("carpet needs at least one digit")
    if len(set(cells)) != len(cells):
        raise PreconditionError(f"carpet digits must be distinct, got {cells}")
    for col, row in cells:
        if not (0 <= col < n_cols and 0 <= row < m_rows):
            raise PreconditionError(f"digit {(col, row)} outside the {n_cols} x {m_rows} grid")
    return cells


def carpet_system(
    n_cols: int,
    m_rows: int,
    digits: Iterable[Sequence[int]],
    p: Optional[Sequence[float]] = None,
) -> Tuple[AffineIFS, ShiftMeasure]:
    """
    The carpet IFS S_(i,j)(x, y) = ((x + i) / n_cols, (y + j) / m_rows) with its Bernoulli measure.
    Symbols follow the order of `digits`.
    """
    cells = _normalize_digits(n_cols, m_rows, digits)
    probs = np.full(len(cells), 1.0 / len(cells)) if p is None else np.asarray(p, dtype=float)
    if probs.shape != (len(cells),):
        raise PreconditionError(f"need one probability per digit, got {probs.shape[0]} for {len(cells)} digits")
    if np.any(probs <= 0):
        raise PreconditionError(f"digit probabilities must be positive, got {probs.tolist()}")
    matrix = np.diag([1.0 / n_cols, 1.0 / m_rows])
    translations = np.array([[col / n_cols, row / m_rows] for col, row in cells])
    ifs = AffineIFS.from_arrays(np.repeat(matrix[None], len(cells), axis=0), translations)
    return ifs, ShiftMeasure.bernoulli(probs)


def carpet_oracle(
    n_cols: int,
    m_rows: int,
    digits: Iterable[Sequence[int]],
    p: Optional[Sequence[float]] = None,
) -> CarpetResult:
    """
    Closed forms for a Bedford-McMullen carpet with m_rows <= n_cols.

    The rows are the weak direction: λ_1 = -log m_rows, λ_2 = -log n_cols,
    h_0 = H(p), h_1 = H(p) - H(q) with q the row marginal, h_2 = 0. The set
    dimension is McMullen's log_m Σ_j t_j^{log m / log n} with t_j digits in row j.
    With m_rows == n_cols everything collapses to the self-similar case.
    """
    if not 2 <= m_rows <= n_cols:
        raise PreconditionError(f"need 2 <= m_rows <= n_cols, got m_rows={m_rows}, n_cols={n_cols}")
    cells = _normalize_digits(n_cols, m_rows, digits)
    _, mu = carpet_system(n_cols, m_rows, cells, p)
    probs = mu.probs

    rows = np.array([row for _, row in cells])
    q = np.bincount(rows, weights=probs, minlength=m_rows)
    h_p = float(-xlogx(probs).sum())
    h_q = float(-xlogx(q).sum())
    log_m, log_n = math.log(m_rows), math.log(n_cols)

    if m_rows == n_cols:
        h = EntropySequence(h=(h_p, 0.0), source="closed_form_carpet", alphabet_size=len(cells))
        spec = LyapunovSpectrum(exponents=(-log_n,), multiplicities=(2,), stderr=(0.0,), gap_tol=1e-12)
    else:
        h = EntropySequence(h=(h_p, h_p - h_q, 0.0), source="closed_form_carpet", alphabet_size=len(cells))
        spec = LyapunovSpectrum(
            exponents=(-log_m, -log_n), multiplicities=(1, 1), stderr=(0.0, 0.0), gap_tol=1e-12
        )
    dim_mu = ly_formula(h, spec)

    counts = np.bincount(rows, minlength=m_rows)
    occupied = counts[counts > 0]
    set_payload = {"n": n_cols, "m": m_rows, "digits": sorted(cells)}
    mcmullen = math.log(float(np.sum(occupied ** (log_m / log_n)))) / log_m
    box = math.log(occupied.size) / log_m + math.log(len(cells) / occupied.size) / log_n

    return CarpetResult(
        h=h,
        spectrum=spec,
        dim_mu=dim_mu,
        dim_K=DimValue(value=max(0.0, mcmullen), kind="carpet_exact", inputs_digest=digest(set_payload, "carpet_exact")),
        dim_box=DimValue(value=max(0.0, box), kind="carpet_box", inputs_digest=digest(set_payload, "carpet_box")),
    )


def partial_sums(h: EntropySequence, spec: LyapunovSpectrum) -> List[float]:
    """Σ_{ℓ<=j} (h_ℓ - h_{ℓ-1}) / λ_ℓ for j = 1 .. s."""
    return [float(v) for v in np.cumsum(_ly_terms(h, spec))]


def sharpness_check(h: EntropySequence, spec: LyapunovSpectrum) -> SharpnessResult:
    """
    Decide whether dim m∘π⁻¹ = min(d, dim_LY) from the entropy pattern.

    Equality holds iff (1) h_0 >= L_s and h_i = h_0 - L_i for every i >= 1, or
    (2) L_{j-1} <= h_0 < L_j and h_i = h_0 - L_i for i < j, h_i = 0 for i >= j.
    The witness is the first index where the applicable pattern breaks.
    """
    _check_lengths(h, spec)
    h0 = h.h[0]
    cumulative = spec.cumulative_exponents
    branch = lyapunov_branch(h0, spec)
    sums = tuple(partial_sums(h, spec))

    if branch == 0:
        condition = 1
        expected = [h0 - cumulative[i] for i in range(spec.s + 1)]
    else:
        condition = 2
        expected = [h0 - cumulative[i] if i < branch else 0.0 for i in range(spec.s + 1)]

    for i in range(1, spec.s + 1):
        if abs(h.h[i] - expected[i]) > EQUALITY_TOL:
            return SharpnessResult(status="strict", condition=None, witness=i, partial_sums=sums)
    return SharpnessResult(status="equal", condition=condition, witness=None, partial_sums=sums)


def _partial_value(h: EntropySequence, spec: LyapunovSpectrum, indices: Iterable[int], kind: str, tag: Dict) -> DimValue:
    terms = _ly_terms(h, spec)
    value = float(max(0.0, sum(terms[i] for i in indices)))
    return DimValue(
        value=value,
        kind=kind,
        inputs_digest=digest({"h": h.h, **_spectrum_payload(spec), **tag}, kind),
    )


def projected_ly(h: EntropySequence, spec: LyapunovSpectrum, j: int) -> DimValue:
    """Predicted dimension of the projection onto (V^j)^⊥: Σ_{ℓ<j} (h_{ℓ+1} - h_ℓ) / λ_{ℓ+1}."""
    _check_lengths(h, spec)
    if not 0 <= j <= spec.s:
        raise PreconditionError(f"j must lie in [0, {spec.s}], got {j}")
    return _partial_value(h, spec, range(j), "projected_ly", {"j": j})


def slice_ly(h: EntropySequence, spec: LyapunovSpectrum, j: int) -> DimValue:
    """Predicted dimension of slices along V^j: Σ_{ℓ>=j} (h_{ℓ+1} - h_ℓ) / λ_{ℓ+1}."""
    _check_lengths(h, spec)
    if not 0 <= j <= spec.s:
        raise PreconditionError(f"j must lie in [0, {spec.s}], got {j}")
    return _partial_value(h, spec, range(j, spec.s), "slice_ly", {"j": j})


def ssc_consequences(h: EntropySequence, spec: LyapunovSpectrum) -> SSCConsequences:
    """
    Checks implied by strong separation: h_s = 0, h_0 < L_s and dim_LY < d,
    plus the partial-sum criterion for dim m∘π⁻¹ = dim_LY.
    """
    _check_lengths(h, spec)
    h0 = h.h[0]
    cumulative = spec.cumulative_exponents
    dims = spec.cumulative_multiplicities
    branch = lyapunov_branch(h0, spec)
    terms = _ly_terms(h, spec)

    equality = False
    if branch:
        before = sum(terms[:branch - 1])
        after = sum(terms[branch:])
        equality = abs(before - dims[branch - 1]) <= EQUALITY_TOL and abs(after) <= EQUALITY_TOL

    return SSCConsequences(
        h_s_zero=h.h[-1] <= EQUALITY_TOL,
        entropy_below_L_s=h0 < cumulative[-1],
        lyapunov_below_d=lyapunov_dimension(h0, spec).value < spec.dimension,
        equality=equality,
        branch=branch,
    )


def determinant_mass(mats) -> float:
    """Σ_j |det M_j|; strong separation with invertible maps forces this below 1."""
    mats = np.asarray(mats, dtype=float)
    if mats.ndim == 1:
        mats = mats.reshape(-1, 1, 1)
    return float(np.abs(np.linalg.det(mats)).sum())
