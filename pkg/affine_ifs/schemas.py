import math
from typing import Annotated, Dict, List, Literal, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    field_validator,
    model_validator,
)

from .errors import InvalidEntropyError, InvalidMeasureError, InvalidWordError
from .tools.linalg import is_orthonormal, max_principal_sine
from .tools.provenance import digest

# Sentinel for exponents of rank-collapsing products; serialized as "-Infinity"
NEG_INF = float("-inf")


def _to_array(value) -> np.ndarray:
    array = np.array(value, dtype=float)
    array.setflags(write=False)
    return array


def _to_list(array: np.ndarray) -> list:
    return np.asarray(array).tolist()


FloatArray = Annotated[
    np.ndarray,
    BeforeValidator(_to_array),
    PlainSerializer(_to_list, return_type=list),
]


class FrozenModel(BaseModel):
    """Immutable base for every domain type."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True, ser_json_inf_nan="strings")


# ---------------------------------------------------------------- ifs-core

class Word(FrozenModel):
    symbols: Tuple[int, ...] = Field(..., description="Symbols i_0 ... i_{n-1} over the alphabet {0, ..., |Λ|-1}")

    @field_validator("symbols")
    @classmethod
    def _non_negative(cls, symbols):
        if any(s < 0 for s in symbols):
            raise InvalidWordError(f"negative symbol in word {symbols}")
        return symbols

    def __len__(self) -> int:
        return len(self.symbols)

    def __add__(self, other: "Word") -> "Word":
        return Word(symbols=self.symbols + as_word(other).symbols)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.symbols, dtype=np.intp)


WordLike = Union[Word, Sequence[int], np.ndarray]


def as_word(value: WordLike) -> Word:
    """Accept a Word, a list of ints or an integer array."""
    if isinstance(value, Word):
        return value
    return Word(symbols=tuple(int(s) for s in np.asarray(value).ravel()))


class AffineMap(FrozenModel):
    matrix: FloatArray = Field(..., description="Linear part M_j (d x d)")
    translation: FloatArray = Field(..., description="Translation a_j (d-vector)")

    @model_validator(mode="after")
    def _check_shapes(self):
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1] or self.matrix.shape[0] < 1:
            raise ValueError(f"matrix must be square d x d with d >= 1, got shape {self.matrix.shape}")
        if self.translation.shape != (self.matrix.shape[0],):
            raise ValueError(f"translation must have shape ({self.matrix.shape[0]},), got {self.translation.shape}")
        if not (np.all(np.isfinite(self.matrix)) and np.all(np.isfinite(self.translation))):
            raise ValueError("matrix and translation entries must be finite")
        return self

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def __call__(self, x) -> np.ndarray:
        return self.matrix @ np.asarray(x, dtype=float) + self.translation


class AffineIFS(FrozenModel):
    maps: Tuple[AffineMap, ...] = Field(..., description="One affine map per symbol of the alphabet")
    allow_single: bool = Field(False, description="Permit a one-map system (degenerate atom)")

    @model_validator(mode="after")
    def _check_maps(self):
        if len(self.maps) < 1 or (len(self.maps) < 2 and not self.allow_single):
            raise ValueError(f"an IFS needs at least 2 maps (got {len(self.maps)}); set allow_single for one")
        dims = {m.dimension for m in self.maps}
        if len(dims) != 1:
            raise ValueError(f"all maps must share the same dimension, got {sorted(dims)}")
        return self

    @classmethod
    def from_arrays(cls, matrices, translations, allow_single: bool = False) -> "AffineIFS":
        """Build an IFS from stacked matrices (k x d x d) and translations (k x d)."""
        matrices = np.asarray(matrices, dtype=float)
        translations = np.asarray(translations, dtype=float)
        if matrices.ndim == 1:
            matrices = matrices.reshape(-1, 1, 1)
        if translations.ndim == 1:
            translations = translations.reshape(-1, 1)
        maps = tuple(AffineMap(matrix=m, translation=a) for m, a in zip(matrices, translations))
        if len(maps) != len(matrices) or len(matrices) != len(translations):
            raise ValueError("matrices and translations must have the same number of maps")
        return cls(maps=maps, allow_single=allow_single or len(maps) == 1)

    @property
    def dimension(self) -> int:
        return self.maps[0].dimension

    @property
    def n_symbols(self) -> int:
        return len(self.maps)

    @property
    def matrices(self) -> np.ndarray:
        return np.stack([m.matrix for m in self.maps])

    @property
    def translations(self) -> np.ndarray:
        return np.stack([m.translation for m in self.maps])

    @property
    def digest(self) -> str:
        return digest({"matrices": self.matrices, "translations": self.translations}, "ifs")


class CodedPoint(FrozenModel):
    point: FloatArray = Field(..., description="Truncated coding map value")
    depth: int = Field(..., ge=1, description="Truncation length n")
    tail_bound: float = Field(..., ge=0, description="Bound on the distance to π(x); +inf when unavailable")
    tail_warning: bool = Field(False, description="True when no uniform contraction bound was available")


class ContractionEstimate(NamedTuple):
    lambda_hat: float
    stderr: float
    is_contracting: bool


class SeparationCertificate(NamedTuple):
    certified: bool
    ball: Optional[Tuple[Tuple[float, ...], float]]


# ---------------------------------------------------------------- shift-measure

class ShiftMeasure(FrozenModel):
    kind: Literal["bernoulli", "markov"]
    probs: Optional[FloatArray] = Field(None, description="Bernoulli probability vector over Λ")
    transition: Optional[FloatArray] = Field(None, description="Markov transition matrix P")
    stationary: Optional[FloatArray] = Field(None, description="Stationary vector with π P = π")

    @model_validator(mode="before")
    @classmethod
    def _fill_stationary(cls, data):
        if isinstance(data, dict) and data.get("kind") == "markov" and data.get("transition") is not None:
            from .shift_measure import is_irreducible, stationary_vector

            transition = np.asarray(data["transition"], dtype=float)
            if transition.ndim != 2 or transition.shape[0] != transition.shape[1]:
                raise InvalidMeasureError(f"transition matrix must be square, got shape {transition.shape}")
            if np.any(transition < 0) or not np.allclose(transition.sum(axis=1), 1.0, atol=1e-12, rtol=0):
                raise InvalidMeasureError("transition rows must be nonnegative and sum to 1 within 1e-12")
            if not is_irreducible(transition):
                raise InvalidMeasureError("Markov chain is not irreducible")
            if data.get("stationary") is None:
                data = {**data, "stationary": stationary_vector(transition)}
        return data

    @model_validator(mode="after")
    def _check_probabilities(self):
        if self.kind == "bernoulli":
            if self.probs is None or self.probs.ndim != 1 or self.probs.size < 1:
                raise InvalidMeasureError("Bernoulli measure needs a probability vector")
            if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-12:
                raise InvalidMeasureError(f"probabilities must be nonnegative and sum to 1 within 1e-12, got {self.probs}")
        else:
            if self.transition is None or self.stationary is None:
                raise InvalidMeasureError("Markov measure needs a transition matrix")
            residual = np.max(np.abs(self.stationary @ self.transition - self.stationary))
            if residual > 1e-10:
                raise InvalidMeasureError(f"stationary vector residual {residual:.3e} exceeds 1e-10")
        return self

    @classmethod
    def bernoulli(cls, probs) -> "ShiftMeasure":
        return cls(kind="bernoulli", probs=probs)

    @classmethod
    def markov(cls, transition) -> "ShiftMeasure":
        return cls(kind="markov", transition=transition)

    @property
    def n_symbols(self) -> int:
        return self.probs.size if self.kind == "bernoulli" else self.transition.shape[0]

    @property
    def digest(self) -> str:
        return digest(self.model_dump(), "measure")


class MeasureRegularity(FrozenModel):
    quasi_bernoulli: bool
    submultiplicative: bool
    constant_C: Optional[float] = Field(None, description="Multiplicativity constant C >= 1")

    @model_validator(mode="after")
    def _check(self):
        if self.quasi_bernoulli and not self.submultiplicative:
            raise ValueError("quasi-Bernoulli measures are sub-multiplicative")
        if self.constant_C is not None and self.constant_C < 1:
            raise ValueError(f"constant_C must be >= 1, got {self.constant_C}")
        return self


# ---------------------------------------------------------------- cocycle

class LyapunovSpectrum(FrozenModel):
    exponents: Tuple[float, ...] = Field(..., description="Distinct exponents λ_1 > ... > λ_s (may end in -inf)")
    multiplicities: Tuple[int, ...] = Field(..., description="Multiplicities k_1 ... k_s")
    stderr: Tuple[float, ...] = Field(..., description="Standard error per distinct exponent")
    gap_tol: float = Field(..., gt=0, description="Gap below which raw exponents are grouped")
    raw_exponents: Tuple[float, ...] = Field((), description="The d ungrouped exponents, descending")
    ambiguous: bool = Field(False, description="A gap fell within [gap_tol, 2 gap_tol)")
    log_det_average: Optional[float] = Field(None, description="Birkhoff average of log|det| of the cocycle")
    log_det_stderr: Optional[float] = None

    @model_validator(mode="after")
    def _check(self):
        if not (len(self.exponents) == len(self.multiplicities) == len(self.stderr)):
            raise ValueError("exponents, multiplicities and stderr must have equal length")
        if not self.exponents:
            raise ValueError("spectrum must contain at least one exponent")
        if any(k < 1 for k in self.multiplicities):
            raise ValueError("multiplicities must be positive")
        if any(b >= a for a, b in zip(self.exponents, self.exponents[1:])):
            raise ValueError(f"exponents must be strictly decreasing, got {self.exponents}")
        return self

    @property
    def dimension(self) -> int:
        return sum(self.multiplicities)

    @property
    def s(self) -> int:
        return len(self.exponents)

    @property
    def cumulative_exponents(self) -> List[float]:
        """L_0 = 0 and L_i = -Σ_{ℓ<=i} λ_ℓ k_ℓ (+inf once a -inf exponent is reached)."""
        values = [0.0]
        for lam, k in zip(self.exponents, self.multiplicities):
            values.append(values[-1] - lam * k)
        return values

    @property
    def cumulative_multiplicities(self) -> List[int]:
        """d_0 = 0 and d_i = k_1 + ... + k_i."""
        values = [0]
        for k in self.multiplicities:
            values.append(values[-1] + k)
        return values


class OseledetsFlag(FrozenModel):
    bases: Tuple[FloatArray, ...] = Field(..., description="Orthonormal column bases of V^1 ... V^{s-1}")
    past_word: Word = Field(..., description="Finite past x_{-n} ... x_{-1}")
    depth: int = Field(..., ge=1)
    low_confidence: bool = Field(False, description="Singular-value gap at some cut was too small")
    log_gaps: Tuple[float, ...] = Field((), description="log(σ_cut / σ_cut+1) at each cut")

    @model_validator(mode="after")
    def _check(self):
        for basis in self.bases:
            if not is_orthonormal(basis, atol=1e-10):
                raise ValueError("flag bases must be orthonormal to 1e-10")
        for outer, inner in zip(self.bases, self.bases[1:]):
            if max_principal_sine(inner, outer) > 1e-6:
                raise ValueError("flag subspaces must be nested")
        return self


class AngleReport(FrozenModel):
    samples: FloatArray = Field(..., description="sin θ(x) for each sampled point")
    minimum: float
    median: float
    decay_slope: Optional[float] = Field(None, description="Slope of log sin θ(σ^n x) against n along one orbit")

    @field_validator("samples")
    @classmethod
    def _in_unit_interval(cls, samples):
        if samples.size and (np.any(samples <= 0) or np.any(samples > 1 + 1e-12)):
            raise ValueError("angle sines must lie in (0, 1]")
        return samples


class FurstenbergSamples(FrozenModel):
    bases: Tuple[FloatArray, ...] = Field(..., description="Sampled V^1 subspaces")
    directions: Optional[FloatArray] = Field(None, description="Angles in [0, π) of V^1 when it is a line in the plane")


# ---------------------------------------------------------------- dimension

class EntropySequence(FrozenModel):
    h: Tuple[float, ...] = Field(..., description="Conditional entropies h_0 >= ... >= h_s >= 0 in nats")
    source: Literal["closed_form_carpet", "user_supplied", "degenerate"] = "user_supplied"
    alphabet_size: Optional[int] = Field(None, ge=1)

    @field_validator("h")
    @classmethod
    def _monotone(cls, h):
        if not h:
            raise InvalidEntropyError("entropy sequence must not be empty")
        if any(v < -1e-12 for v in h):
            raise InvalidEntropyError(f"entropies must be nonnegative, got {h}")
        if any(b > a + 1e-12 for a, b in zip(h, h[1:])):
            raise InvalidEntropyError(f"entropies must be nonincreasing, got {h}")
        return tuple(max(0.0, float(v)) for v in h)

    @model_validator(mode="after")
    def _capped_by_alphabet(self):
        if self.alphabet_size is not None and self.h[0] > math.log(self.alphabet_size) + 1e-12:
            raise InvalidEntropyError(f"h_0 = {self.h[0]} exceeds log|Λ| = {math.log(self.alphabet_size)}")
        return self

    @property
    def s(self) -> int:
        return len(self.h) - 1


DimKind = Literal["lyapunov", "affinity", "ly_formula", "carpet_exact", "carpet_box", "projected_ly", "slice_ly"]


class DimValue(FrozenModel):
    value: float = Field(..., ge=0)
    kind: DimKind
    inputs_digest: str = Field(..., description="Inputs hash plus method tag")
    capped: Optional[float] = Field(None, description="min(d, value) companion for lyapunov/affinity")
    details: Dict[str, float] = Field(default_factory=dict)


class SharpnessResult(FrozenModel):
    status: Literal["equal", "strict"]
    condition: Optional[int] = Field(None, description="Equality condition that applies (1 or 2)")
    witness: Optional[int] = Field(None, description="First index i where the condition fails")
    partial_sums: Tuple[float, ...] = Field((), description="Σ_{ℓ<=j} (h_ℓ - h_{ℓ-1}) / λ_ℓ for j = 1..s")


class SSCConsequences(FrozenModel):
    h_s_zero: bool
    entropy_below_L_s: bool
    lyapunov_below_d: bool
    equality: bool = Field(..., description="dim m∘π⁻¹ = dim_LY by the partial-sum criterion")
    branch: int = Field(..., description="j with L_{j-1} <= h_0 < L_j (0 if none)")


class CarpetResult(FrozenModel):
    h: EntropySequence
    spectrum: LyapunovSpectrum
    dim_mu: DimValue
    dim_K: DimValue
    dim_box: DimValue


# ---------------------------------------------------------------- estimator

class PointCloud(FrozenModel):
    points: FloatArray = Field(..., description="N x d sample of m∘π⁻¹")
    ifs_digest: str
    measure_digest: str
    depth: int = Field(..., ge=1)
    seed: Optional[int] = None
    tail_warning: bool = False

    @field_validator("points")
    @classmethod
    def _finite(cls, points):
        if points.ndim == 1:
            points = _to_array(points.reshape(-1, 1))
        if points.ndim != 2 or points.shape[0] < 1:
            raise ValueError("a point cloud needs at least one point")
        if not np.all(np.isfinite(points)):
            raise ValueError("point coordinates must be finite")
        return points

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    @property
    def digest(self) -> str:
        return digest(
            {"ifs": self.ifs_digest, "measure": self.measure_digest, "depth": self.depth,
             "seed": self.seed, "n": self.n_points, "d": self.dimension},
            "cloud",
        )


class DimEstimate(FrozenModel):
    value: float = Field(..., ge=0)
    ci_half_width: float = Field(..., ge=0, description="95% half width")
    method: Literal["correlation", "knn"]
    radius_range: Tuple[float, float]
    n_pairs: Optional[int] = None
    k: Optional[int] = None
    n_points: int = 0
    inputs_digest: str = ""


class EstimatorConfig(FrozenModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    method: Literal["correlation", "knn"] = "correlation"
    r_min: Optional[float] = Field(None, gt=0, description="Absolute lower radius; default 1e-3 x diameter")
    r_max: Optional[float] = Field(None, gt=0, description="Absolute upper radius; default 1e-1 x diameter")
    n_radii: int = Field(12, ge=3)
    n_fit: int = Field(8, ge=2, description="Central radii used for the slope fit")
    pair_budget: int = Field(50_000_000, ge=1, le=1_000_000_000)
    k: int = Field(10, ge=2)
    knn_queries: int = Field(20_000, ge=10)
    n_blocks: int = Field(20, ge=2)
    n_bootstrap: int = Field(200, ge=10)
    slab_halfwidth: Optional[float] = Field(None, gt=0, description="Default 0.5% of the cloud diameter")
    n_anchors: int = Field(32, ge=1)
    slice_pair_budget: int = Field(2_000_000, ge=1)
    min_slab_points: int = Field(500, ge=10)
    seed: int = 0

    @model_validator(mode="after")
    def _check_radii(self):
        if self.r_min is not None and self.r_max is not None and self.r_min >= self.r_max:
            raise ValueError(f"r_min ({self.r_min}) must be < r_max ({self.r_max})")
        if self.n_fit > self.n_radii:
            raise ValueError("n_fit cannot exceed n_radii")
        return self


class ConservationReport(FrozenModel):
    dim_total: DimEstimate
    dim_proj: DimEstimate
    dim_slice: DimEstimate
    subspace: FloatArray = Field(..., description="Orthonormal basis of W")
    residual: float
    residual_ci: float
    expected: Dict[str, float] = Field(default_factory=dict, description="Ledrappier-Young predictions when known")

    @field_validator("subspace")
    @classmethod
    def _orthonormal(cls, subspace):
        if not is_orthonormal(subspace, atol=1e-8):
            raise ValueError("subspace basis must be orthonormal")
        return subspace


class SweepRow(FrozenModel):
    translations: Tuple[Tuple[float, ...], ...]
    estimate: DimEstimate
    dim_ly: float
    bound: float = Field(..., description="min(d, dim_LY)")
    exceptional: bool


class SuiteRow(FrozenModel):
    label: str
    estimate: DimEstimate
    dim_ly: float
    bound: float
    passed: bool
    equality_consistent: Optional[bool] = None


class QuarterSplitReport(FrozenModel):
    estimates: Tuple[DimEstimate, ...]
    consistent: bool
    max_pairwise_gap: float
