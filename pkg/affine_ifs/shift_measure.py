"""
Ergodic measures on the full shift: Bernoulli and Markov.
Entropy, cylinder probabilities, sampling and quasi-Bernoulli certificates.
"""
import logging
from typing import Optional

import numpy as np
from scipy.special import xlogy

from .errors import InvalidMeasureError, InvalidWordError, PreconditionError
from .schemas import MeasureRegularity, ShiftMeasure, Word, WordLike, as_word
from .tools.rng import SeedLike, as_generator

logger = logging.getLogger(__name__)

STATIONARY_TOL = 1e-15
STATIONARY_RESIDUAL = 1e-12
STATIONARY_SQUARINGS = 64


def is_irreducible(transition: np.ndarray) -> bool:
    """Every state reaches every other state (boolean transitive closure)."""
    transition = np.asarray(transition, dtype=float)
    n = transition.shape[0]
    reach = (np.eye(n) + (transition > 0)) > 0
    for _ in range(max(1, int(np.ceil(np.log2(max(n, 2)))) + 1)):
        reach = (reach.astype(np.int64) @ reach.astype(np.int64)) > 0
    return bool(np.all(reach))


def stationary_vector(transition: np.ndarray) -> np.ndarray:
    """
    Stationary vector of an irreducible chain by power iteration with repeated squaring.

    Squares the lazy chain (P + I) / 2, which has the same stationary vector and
    converges for periodic chains too; k squarings advance 2^k steps, so slowly
    mixing chains converge as well. The result is accepted on its residual ||πP - π||.
    """
    transition = np.asarray(transition, dtype=float)
    n = transition.shape[0]
    power = 0.5 * (transition + np.eye(n))
    for _ in range(STATIONARY_SQUARINGS):
        squared = power @ power
        squared /= squared.sum(axis=1, keepdims=True)
        settled = np.max(np.abs(squared - power)) < STATIONARY_TOL
        power = squared
        if settled:
            break
    vector = power.mean(axis=0)
    vector /= vector.sum()
    residual = float(np.max(np.abs(vector @ transition - vector)))
    if residual > STATIONARY_RESIDUAL:
        raise InvalidMeasureError(f"stationary vector did not converge: residual {residual:.3g}")
    return vector


def xlogx(values: np.ndarray) -> np.ndarray:
    # 0 log 0 := 0
    values = np.asarray(values, dtype=float)
    return xlogy(values, values)


def entropy(mu: ShiftMeasure) -> float:
    """
    Kolmogorov-Sinai entropy h_m(σ) in nats.

    Bernoulli: -Σ p_j log p_j; Markov: -Σ_i π(i) Σ_j P_ij log P_ij.
    """
    if mu.kind == "bernoulli":
        return float(-xlogx(mu.probs).sum())
    return float(-(mu.stationary * xlogx(mu.transition).sum(axis=1)).sum())


def _check_symbols(mu: ShiftMeasure, word: Word) -> None:
    if len(word) == 0:
        raise InvalidWordError("word must be nonempty")
    if max(word.symbols) >= mu.n_symbols:
        raise InvalidWordError(f"word {word.symbols} uses symbols outside an alphabet of size {mu.n_symbols}")


def log_cylinder_prob(mu: ShiftMeasure, w: WordLike) -> float:
    """log m([w]_0); -inf for null cylinders."""
    word = as_word(w)
    _check_symbols(mu, word)
    symbols = word.array
    with np.errstate(divide="ignore"):
        if mu.kind == "bernoulli":
            return float(np.log(mu.probs[symbols]).sum())
        steps = np.log(mu.transition[symbols[:-1], symbols[1:]]).sum() if len(symbols) > 1 else 0.0
        return float(np.log(mu.stationary[symbols[0]]) + steps)


def cylinder_prob(mu: ShiftMeasure, w: WordLike) -> float:
    """
    m([w]_0) for the cylinder fixing x_0 ... x_{n-1}.

    Bernoulli: Π p_{w_k}; Markov: π(w_0) Π P_{w_k w_{k+1}}.
    """
    word = as_word(w)
    _check_symbols(mu, word)
    symbols = word.array
    if mu.kind == "bernoulli":
        return float(np.prod(mu.probs[symbols]))
    return float(mu.stationary[symbols[0]] * np.prod(mu.transition[symbols[:-1], symbols[1:]]))


def sample_words(mu: ShiftMeasure, n_words: int, length: int, rng: SeedLike) -> np.ndarray:
    """
    Sample `n_words` independent words of the one-sided marginal of m, shape (n_words, length).
    Deterministic for a given generator state.
    """
    if length < 1 or n_words < 1:
        raise PreconditionError(f"need length >= 1 and n_words >= 1, got {length}, {n_words}")
    rng = as_generator(rng)

    if mu.kind == "bernoulli":
        return rng.choice(mu.n_symbols, size=(n_words, length), p=mu.probs).astype(np.intp)

    cumulative = np.cumsum(mu.transition, axis=1)
    words = np.empty((n_words, length), dtype=np.intp)
    words[:, 0] = rng.choice(mu.n_symbols, size=n_words, p=mu.stationary)
    for k in range(1, length):
        u = rng.random(n_words)
        nxt = (u[:, None] >= cumulative[words[:, k - 1]]).sum(axis=1)
        words[:, k] = np.minimum(nxt, mu.n_symbols - 1)
    return words


def sample_word(mu: ShiftMeasure, length: int, rng: SeedLike, initial_state: Optional[int] = None) -> Word:
    """
    A single word distributed as the one-sided marginal of m.
    For Markov measures `initial_state` conditions on x_0.
    """
    if length < 1:
        raise PreconditionError(f"length must be >= 1, got {length}")
    rng = as_generator(rng)
    if initial_state is None or mu.kind == "bernoulli":
        return Word(symbols=tuple(int(s) for s in sample_words(mu, 1, length, rng)[0]))

    if not 0 <= initial_state < mu.n_symbols:
        raise InvalidWordError(f"initial state {initial_state} out of range")
    cumulative = np.cumsum(mu.transition, axis=1)
    symbols = [int(initial_state)]
    for u in rng.random(length - 1):
        nxt = int((u >= cumulative[symbols[-1]]).sum())
        symbols.append(min(nxt, mu.n_symbols - 1))
    return Word(symbols=tuple(symbols))


def empirical_entropy(mu: ShiftMeasure, w: WordLike) -> float:
    """-(1/n) log m([w]_0), the Shannon-McMillan-Breiman estimate from one sampled word."""
    word = as_word(w)
    return -log_cylinder_prob(mu, word) / len(word)


def regularity(mu: ShiftMeasure) -> MeasureRegularity:
    """
    Quasi-Bernoulli / sub-multiplicative certificate with an explicit constant.

    For a Markov measure m([IJ]) / (m([I]) m([J])) = P_{i_last j_0} / π(j_0), so
    C is the largest of these ratios and their reciprocals. A zero transition
    breaks the lower bound; the upper bound (sub-multiplicativity) survives.
    """
    if mu.kind == "bernoulli":
        return MeasureRegularity(quasi_bernoulli=True, submultiplicative=True, constant_C=1.0)

    ratios = mu.transition / mu.stationary[None, :]
    upper = float(max(1.0, ratios.max()))
    if np.all(mu.transition > 0):
        constant = float(max(upper, (1.0 / ratios).max()))
        return MeasureRegularity(quasi_bernoulli=True, submultiplicative=True, constant_C=constant)

    logger.info("Markov measure has forbidden transitions; only sub-multiplicativity is certified")
    return MeasureRegularity(quasi_bernoulli=False, submultiplicative=True, constant_C=upper)
