"""
Numerical multiplicative ergodic theory for the matrix cocycle M(x) = M_{x_{-1}}.

All Monte Carlo loops are vectorized over repetitions: every rep gets its
own stream from `spawn_generators`, so results depend only on the seed.
"""
import logging
import math
from typing import List, Optional, Tuple

import numpy as np
from scipy.stats import linregress

from .async_orchestrator import run_parallel
from .errors import PreconditionError
from .schemas import (
    NEG_INF,
    AngleReport,
    FurstenbergSamples,
    LyapunovSpectrum,
    OseledetsFlag,
    ShiftMeasure,
    WordLike,
    as_word,
)
from .shift_measure import sample_words
from .tools.linalg import min_principal_sine, operator_norm
from .tools.rng import spawn_generators

logger = logging.getLogger(__name__)

RENORMALIZE_EVERY = 16
# R_ii at roundoff level relative to the step matrix means the step lost rank
COLLAPSE_RTOL = 64 * np.finfo(float).eps
GAP_TOL_FRACTION = 0.05
GAP_TOL_FLOOR = 1e-3


def _as_matrices(mats) -> np.ndarray:
    mats = np.asarray(mats, dtype=float)
    if mats.ndim == 1:
        mats = mats.reshape(-1, 1, 1)
    if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
        raise PreconditionError(f"expected a stack of square matrices, got shape {mats.shape}")
    return mats


def _sample_rep_words(mu: ShiftMeasure, n_reps: int, length: int, seed: Optional[int]) -> np.ndarray:
    streams = spawn_generators(seed, n_reps)
    return np.stack([sample_words(mu, 1, length, stream)[0] for stream in streams])


def _mean_and_stderr(values: np.ndarray) -> Tuple[float, float]:
    """Mean over reps and its standard error; -inf propagates with zero error."""
    if np.any(np.isneginf(values)):
        return NEG_INF, 0.0
    mean = float(np.mean(values))
    if values.size < 2:
        return mean, 0.0
    return mean, float(np.std(values, ddof=1) / math.sqrt(values.size))


def _scaled_product(mats: np.ndarray, symbols: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Product M_{s_0} ... M_{s_{n-1}} rescaled every few steps.
    Returns the rescaled matrix and the accumulated log scale (-inf on collapse).
    """
    d = mats.shape[1]
    product = np.eye(d)
    log_scale = 0.0
    for k, symbol in enumerate(symbols):
        product = product @ mats[symbol]
        if (k + 1) % RENORMALIZE_EVERY == 0:
            norm = float(operator_norm(product))
            if norm == 0:
                return product, NEG_INF
            product = product / norm
            log_scale += math.log(norm)
    return product, log_scale


def log_norm_growth(mats, mu: ShiftMeasure, n_steps: int, n_reps: int, seed: Optional[int]) -> Tuple[float, float]:
    """
    (1/n) log ||M_{x_0} ... M_{x_{n-1}}|| averaged over independent reps.

    The running product is renormalized every 16 steps and the scale kept in
    log space, so contractive products over millions of steps never underflow.
    """
    mats = _as_matrices(mats)
    d = mats.shape[1]
    words = _sample_rep_words(mu, n_reps, n_steps, seed)

    product = np.broadcast_to(np.eye(d), (n_reps, d, d)).copy()
    log_scale = np.zeros(n_reps)
    collapsed = np.zeros(n_reps, dtype=bool)
    for k in range(n_steps):
        product = product @ mats[words[:, k]]
        if (k + 1) % RENORMALIZE_EVERY == 0 or k == n_steps - 1:
            norms = operator_norm(product)
            collapsed |= norms == 0
            safe = np.where(norms > 0, norms, 1.0)
            log_scale += np.log(safe)
            product = product / safe[:, None, None]

    rates = log_scale / n_steps
    rates[collapsed] = NEG_INF
    if n_reps == 1:
        logger.warning("single repetition: standard error reported as 0")
    return _mean_and_stderr(rates)


def top_exponent(mats, mu: ShiftMeasure, n_steps: int, n_reps: int, seed: Optional[int] = None) -> Tuple[float, float]:
    """Top Lyapunov exponent λ_1 and its standard error over reps."""
    if n_steps < 1000:
        raise PreconditionError(f"n_steps must be >= 1000, got {n_steps}")
    if n_reps < 1:
        raise PreconditionError(f"n_reps must be >= 1, got {n_reps}")
    return log_norm_growth(mats, mu, n_steps, n_reps, seed)


def default_gap_tol(top: float) -> float:
    """5% of |λ_1| with a floor of 1e-3."""
    if not math.isfinite(top):
        return GAP_TOL_FLOOR
    return max(GAP_TOL_FRACTION * abs(top), GAP_TOL_FLOOR)


def group_exponents(
    raw: List[float],
    raw_stderr: List[float],
    gap_tol: float,
) -> Tuple[List[float], List[int], List[float], bool]:
    """
    Group descending raw exponents whose consecutive gaps are below `gap_tol`.
    Returns (exponents, multiplicities, stderr, ambiguous).
    """
    groups: List[List[int]] = [[0]]
    ambiguous = False
    for i in range(1, len(raw)):
        prev, cur = raw[i - 1], raw[i]
        gap = 0.0 if (math.isinf(prev) and math.isinf(cur)) else prev - cur
        if gap < gap_tol:
            groups[-1].append(i)
            continue
        if gap < 2 * gap_tol:
            ambiguous = True
        groups.append([i])

    exponents, multiplicities, errors = [], [], []
    for members in groups:
        values = [raw[i] for i in members]
        exponents.append(NEG_INF if any(math.isinf(v) for v in values) else float(np.mean(values)))
        multiplicities.append(len(members))
        errors.append(float(math.sqrt(np.mean([raw_stderr[i] ** 2 for i in members]))))
    return exponents, multiplicities, errors, ambiguous


def spectrum(
    mats,
    mu: ShiftMeasure,
    n_steps: int,
    n_reps: int,
    gap_tol: Optional[float] = None,
    seed: Optional[int] = None,
) -> LyapunovSpectrum:
    """
    Full Lyapunov spectrum by the orthonormalization recursion.

    The exponents of M_{x_0} ... M_{x_{n-1}} are those of its transpose, so each
    step factors M_{x_k}^T Q = Q' R and accumulates (1/n) Σ log |R_ii|. Since
    |R_ii| >= σ_min(M_{x_k}), an R_ii at roundoff level relative to ||M_{x_k}||
    marks a rank collapse at that step and the column gets a -inf exponent.
    """
    mats = _as_matrices(mats)
    if n_steps < 1000:
        raise PreconditionError(f"n_steps must be >= 1000, got {n_steps}")
    if gap_tol is not None and gap_tol <= 0:
        raise PreconditionError(f"gap_tol must be > 0, got {gap_tol}")
    d = mats.shape[1]
    transposed = np.transpose(mats, (0, 2, 1))
    words = _sample_rep_words(mu, n_reps, n_steps, seed)

    q = np.broadcast_to(np.eye(d), (n_reps, d, d)).copy()
    log_sums = np.zeros((n_reps, d))
    collapsed = np.zeros((n_reps, d), dtype=bool)
    thresholds = COLLAPSE_RTOL * operator_norm(mats)
    for k in range(n_steps):
        q, r = np.linalg.qr(transposed[words[:, k]] @ q)
        diag = np.abs(np.diagonal(r, axis1=1, axis2=2))
        lost = diag <= thresholds[words[:, k]][:, None]
        collapsed |= lost
        log_sums += np.log(np.where(lost, 1.0, diag))

    raw = log_sums / n_steps
    raw[collapsed] = NEG_INF
    raw = -np.sort(-raw, axis=1)

    raw_means, raw_errors = [], []
    for i in range(d):
        mean, err = _mean_and_stderr(raw[:, i])
        raw_means.append(mean)
        raw_errors.append(err)

    with np.errstate(divide="ignore"):
        log_dets = np.log(np.abs(np.linalg.det(mats)))
    log_det_mean, log_det_err = _mean_and_stderr(log_dets[words].sum(axis=1) / n_steps)

    tol = gap_tol if gap_tol is not None else default_gap_tol(raw_means[0])
    exponents, multiplicities, errors, ambiguous = group_exponents(raw_means, raw_errors, tol)
    if ambiguous:
        logger.warning(f"exponent grouping is ambiguous at gap_tol={tol:.4g}: raw={raw_means}")
    logger.info(f"spectrum: exponents={exponents} multiplicities={multiplicities}")

    return LyapunovSpectrum(
        exponents=tuple(exponents),
        multiplicities=tuple(multiplicities),
        stderr=tuple(errors),
        gap_tol=tol,
        raw_exponents=tuple(raw_means),
        ambiguous=ambiguous,
        log_det_average=log_det_mean,
        log_det_stderr=log_det_err,
    )


def oseledets_flag(mats, past: WordLike, spec: LyapunovSpectrum) -> OseledetsFlag:
    """
    Estimate the filtration V^1 ⊋ ... ⊋ V^{s-1} at x from its finite past.

    past = (x_{-n}, ..., x_{-1}) and B_n = M_{x_{-n}} ... M_{x_{-1}}. V^i is the span
    of the right-singular vectors of B_n for the d - (k_1 + ... + k_i) smallest
    singular values. A cut whose singular-value ratio is below e^{n gap_tol / 2}
    marks the flag as low confidence.
    """
    mats = _as_matrices(mats)
    word = as_word(past)
    n = len(word)
    if n < 50:
        raise PreconditionError(f"past must have length >= 50, got {n}")
    if spec.dimension != mats.shape[1]:
        raise PreconditionError(f"spectrum dimension {spec.dimension} does not match matrices {mats.shape[1]}")
    if spec.s < 2:
        return OseledetsFlag(bases=(), past_word=word, depth=n)

    product, log_scale = _scaled_product(mats, word.array)
    _, singular, vt = np.linalg.svd(product)

    bases, log_gaps = [], []
    low_confidence = math.isinf(log_scale)
    for cut in spec.cumulative_multiplicities[1:-1]:
        bases.append(vt[cut:].T)
        with np.errstate(divide="ignore"):
            gap = float(np.log(singular[cut - 1]) - np.log(singular[cut])) if singular[cut - 1] > 0 else 0.0
        log_gaps.append(gap)
        if gap < n * spec.gap_tol / 2:
            low_confidence = True

    if low_confidence:
        logger.warning(f"Oseledets flag at depth {n} is low confidence (log gaps {log_gaps})")
    return OseledetsFlag(
        bases=tuple(bases),
        past_word=word,
        depth=n,
        low_confidence=low_confidence,
        log_gaps=tuple(log_gaps),
    )


def forward_blocks(mats, future: WordLike, spec: LyapunovSpectrum) -> List[np.ndarray]:
    """
    Fast (unstable-analog) blocks at x from the forward word M_{x_0} ... M_{x_{n-1}}:
    the top k_1 + ... + k_i left-singular vectors for each cut i.
    """
    mats = _as_matrices(mats)
    product, _ = _scaled_product(mats, as_word(future).array)
    u, _, _ = np.linalg.svd(product)
    return [u[:, :cut] for cut in spec.cumulative_multiplicities[1:-1]]


def _angle_at(mats: np.ndarray, word: np.ndarray, start: int, depth: int, spec: LyapunovSpectrum) -> float:
    past = word[start:start + depth]
    future = word[start + depth:start + 2 * depth]
    flag = oseledets_flag(mats, past, spec)
    blocks = forward_blocks(mats, future, spec)
    return min(min_principal_sine(fast, slow) for fast, slow in zip(blocks, flag.bases))


def angle_stats(
    mats,
    mu: ShiftMeasure,
    spec: LyapunovSpectrum,
    n_samples: int,
    past_depth: int,
    seed: Optional[int] = None,
    orbit_length: int = 1000,
    orbit_points: int = 50,
) -> AngleReport:
    """
    Minimal principal sine between complementary Oseledets blocks.

    Each sample draws an independent two-sided window: the past estimates V^i,
    the future estimates the fast blocks. Along one extra orbit the slope of
    log sin θ(σ^t x) against t is fitted to check sub-exponential decay.
    """
    mats = _as_matrices(mats)
    if spec.s < 2:
        raise PreconditionError("angle statistics need at least two distinct exponents")

    streams = spawn_generators(seed, n_samples + 1)

    def one_sample(stream) -> float:
        word = sample_words(mu, 1, 2 * past_depth, stream)[0]
        return _angle_at(mats, word, 0, past_depth, spec)

    samples = np.clip(np.asarray(run_parallel(one_sample, streams[:-1], label="angle samples")), 1e-300, 1.0)

    decay_slope = None
    if orbit_points >= 2 and orbit_length >= orbit_points:
        positions = np.linspace(0, orbit_length, orbit_points).astype(int)
        orbit = sample_words(mu, 1, orbit_length + 2 * past_depth, streams[-1])[0]
        sines = np.array([_angle_at(mats, orbit, t, past_depth, spec) for t in positions])
        decay_slope = float(linregress(positions, np.log(np.clip(sines, 1e-300, 1.0))).slope)

    return AngleReport(
        samples=samples,
        minimum=float(samples.min()),
        median=float(np.median(samples)),
        decay_slope=decay_slope,
    )


def furstenberg_samples(
    mats,
    mu: ShiftMeasure,
    spec: LyapunovSpectrum,
    n_samples: int,
    past_depth: int,
    seed: Optional[int] = None,
) -> FurstenbergSamples:
    """
    Sampled subspaces V^1_x for exploration of the Furstenberg measure.
    In the plane V^1 is a line and its direction angle in [0, π) is reported too.
    """
    mats = _as_matrices(mats)
    if spec.s < 2:
        raise PreconditionError("Furstenberg samples need at least two distinct exponents")
    streams = spawn_generators(seed, n_samples)

    def one_sample(stream) -> np.ndarray:
        past = sample_words(mu, 1, past_depth, stream)[0]
        return oseledets_flag(mats, past, spec).bases[0]

    bases = run_parallel(one_sample, streams, label="furstenberg samples")
    directions = None
    if mats.shape[1] == 2 and bases[0].shape[1] == 1:
        directions = np.array([math.atan2(b[1, 0], b[0, 0]) % math.pi for b in bases])
    return FurstenbergSamples(bases=tuple(bases), directions=directions)
