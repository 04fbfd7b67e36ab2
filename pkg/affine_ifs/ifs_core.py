"""
Affine IFS core: composing maps along words, the truncated coding map,
average contraction and a conservative strong-separation certificate.
"""
import logging
import math
from typing import Optional

import numpy as np

from .errors import InvalidWordError, PreconditionError
from .schemas import (
    AffineIFS,
    AffineMap,
    CodedPoint,
    ContractionEstimate,
    SeparationCertificate,
    ShiftMeasure,
    Word,
    WordLike,
    as_word,
)
from .tools.linalg import operator_norm

logger = logging.getLogger(__name__)

N_CERTIFICATE_RADII = 64


def validate_word(ifs: AffineIFS, w: WordLike) -> Word:
    """Coerce `w` to a Word and check it is nonempty and within the alphabet."""
    word = as_word(w)
    if len(word) == 0:
        raise InvalidWordError("word must be nonempty")
    bad = [s for s in word.symbols if s >= ifs.n_symbols]
    if bad:
        raise InvalidWordError(f"symbols {sorted(set(bad))} out of range for alphabet of size {ifs.n_symbols}")
    return word


def contraction_factor(ifs: AffineIFS) -> float:
    """Uniform contraction factor ρ = max_j ||M_j|| (operator 2-norm)."""
    return float(np.max(operator_norm(ifs.matrices)))


def compose(ifs: AffineIFS, w: WordLike) -> AffineMap:
    """
    S_{w_0} ∘ ... ∘ S_{w_{n-1}} as a single affine map.

    The linear part is M_{w_0} ... M_{w_{n-1}} and the translation is
    a_{w_0} + M_{w_0} a_{w_1} + ... + M_{w_0} ... M_{w_{n-2}} a_{w_{n-1}}.
    """
    word = validate_word(ifs, w)
    matrices, translations = ifs.matrices, ifs.translations
    product = np.eye(ifs.dimension)
    offset = np.zeros(ifs.dimension)
    for symbol in word.symbols:
        offset = offset + product @ translations[symbol]
        product = product @ matrices[symbol]
    return AffineMap(matrix=product, translation=offset)


def evaluate_words(matrices: np.ndarray, translations: np.ndarray, words: np.ndarray) -> np.ndarray:
    """
    Vectorized truncated coding map for a batch of words (N x n symbols).

    Horner evaluation from the last symbol: x = a_{w_{n-1}}, then
    x <- M_{w_k} x + a_{w_k} for k = n-2 ... 0.
    """
    words = np.atleast_2d(words)
    x = translations[words[:, -1]].copy()
    for k in range(words.shape[1] - 2, -1, -1):
        symbols = words[:, k]
        x = np.einsum("nij,nj->ni", matrices[symbols], x) + translations[symbols]
    return x


def code_point(ifs: AffineIFS, w: WordLike) -> CodedPoint:
    """
    Truncated coding map Σ_{k<n} M_{w_0} ... M_{w_{k-1}} a_{w_k} with a deterministic tail bound.

    The bound ||M_{w_0} ... M_{w_{n-1}}|| max_j ||a_j|| / (1 - ρ) holds when the
    system is uniformly contracting (ρ < 1); otherwise the bound is +inf and
    the point carries a warning flag.
    """
    word = validate_word(ifs, w)
    point = evaluate_words(ifs.matrices, ifs.translations, word.array[None, :])[0]
    rho = contraction_factor(ifs)

    if rho < 1:
        product = compose(ifs, word).matrix
        max_translation = float(np.max(np.linalg.norm(ifs.translations, axis=1)))
        tail_bound = float(operator_norm(product)) * max_translation / (1 - rho)
        return CodedPoint(point=point, depth=len(word), tail_bound=tail_bound)

    logger.warning(f"IFS is not uniformly contracting (rho={rho:.4f}); tail bound unavailable")
    return CodedPoint(point=point, depth=len(word), tail_bound=math.inf, tail_warning=True)


def average_contraction(
    ifs: AffineIFS,
    mu: ShiftMeasure,
    n_steps: int,
    n_reps: int,
    seed: Optional[int] = None,
) -> ContractionEstimate:
    """
    Monte Carlo estimate of the top exponent λ = lim (1/n) ∫ log ||M_{x_0} ... M_{x_{n-1}}|| dm.

    The system is declared average contracting when λ̂ + 2 stderr < 0.
    A product that collapses to the zero matrix gives λ̂ = -inf.
    """
    from .cocycle import log_norm_growth

    if n_steps < 100:
        raise PreconditionError(f"n_steps must be >= 100, got {n_steps}")
    if n_reps < 1:
        raise PreconditionError(f"n_reps must be >= 1, got {n_reps}")
    if mu.n_symbols != ifs.n_symbols:
        raise PreconditionError(f"measure has {mu.n_symbols} symbols but the IFS has {ifs.n_symbols}")

    lambda_hat, stderr = log_norm_growth(ifs.matrices, mu, n_steps, n_reps, seed)
    is_contracting = bool(lambda_hat + 2 * stderr < 0)
    logger.info(f"average contraction: lambda={lambda_hat:.6f} +/- {stderr:.2e}, contracting={is_contracting}")
    return ContractionEstimate(lambda_hat=lambda_hat, stderr=stderr, is_contracting=is_contracting)


def uniform_barycenter(ifs: AffineIFS) -> np.ndarray:
    """
    Barycenter of the uniform-weight invariant measure: the fixed point of
    x -> mean_j (M_j x + a_j), i.e. (I - mean M)^{-1} mean a.
    """
    mean_matrix = ifs.matrices.mean(axis=0)
    mean_translation = ifs.translations.mean(axis=0)
    return np.linalg.solve(np.eye(ifs.dimension) - mean_matrix, mean_translation)


def strong_separation_certificate(ifs: AffineIFS) -> SeparationCertificate:
    """
    Search for a closed ball B with S_j(B) ⊂ B for all j and pairwise disjoint images.

    Candidate balls are centered at the attractor's barycenter with a grid of
    radii starting at the smallest invariant radius. Image S_j(B) is contained
    in the ball of radius ||M_j|| r around S_j(c), so disjointness of those balls
    certifies separation. A failed search does not mean separation fails.
    """
    norms = operator_norm(ifs.matrices)
    if np.any(norms >= 1):
        raise PreconditionError(f"all maps must be contracting, got norms {np.round(norms, 6).tolist()}")

    center = uniform_barycenter(ifs)
    image_centers = np.einsum("kij,j->ki", ifs.matrices, center) + ifs.translations
    offsets = np.linalg.norm(image_centers - center, axis=1)
    min_radius = float(np.max(offsets / (1 - norms)))
    if min_radius == 0:
        # every map fixes the center: images coincide
        return SeparationCertificate(certified=False, ball=None)

    separations = np.linalg.norm(image_centers[:, None, :] - image_centers[None, :, :], axis=2)
    radius_sums = norms[:, None] + norms[None, :]
    off_diagonal = ~np.eye(ifs.n_symbols, dtype=bool)

    for radius in min_radius * np.linspace(1.0, 2.0, N_CERTIFICATE_RADII):
        invariant = np.all(offsets + norms * radius <= radius * (1 + 1e-12))
        disjoint = np.all(separations[off_diagonal] > radius_sums[off_diagonal] * radius)
        if invariant and disjoint:
            logger.info(f"strong separation certified with ball center={center.tolist()} radius={radius:.6g}")
            return SeparationCertificate(certified=True, ball=(tuple(float(c) for c in center), float(radius)))

    return SeparationCertificate(certified=False, ball=None)
