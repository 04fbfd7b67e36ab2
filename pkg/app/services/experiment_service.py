"""
Experiment service layer: validates experiment configs and dispatches tasks to the library.
"""
import json
import logging
import math
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from affine_ifs import cocycle, dimension, estimator, ifs_core
from affine_ifs.errors import AffineIFSError
from affine_ifs.schemas import AffineIFS, EntropySequence, EstimatorConfig, ShiftMeasure
from affine_ifs.shift_measure import entropy, regularity, sample_word
from affine_ifs.tools.provenance import digest
from app.config import settings
from app.reports.models import Report
from app.reports.writers import write_csv, write_report

logger = logging.getLogger(__name__)

Task = Literal["spectrum", "flag", "lyapdim", "affdim", "sample", "estimate", "carpet", "sweep", "conserve", "suite"]


class ExperimentValidationError(Exception):
    """The config file is missing, unreadable or fails schema validation."""
    pass


class ExperimentExecutionError(Exception):
    """A numeric or resource error stopped the task."""
    pass


class IFSSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    matrices: List[List[List[float]]] = Field(..., description="One row-major d x d matrix per map")
    translations: List[List[float]] = Field(..., description="One translation vector per map")

    @model_validator(mode="after")
    def _build(self):
        try:
            self.to_ifs()
        except (AffineIFSError, ValueError) as exc:
            raise ValueError(f"invalid IFS: {exc}") from exc
        return self

    def to_ifs(self) -> AffineIFS:
        return AffineIFS.from_arrays(self.matrices, self.translations)


class MeasureSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["bernoulli", "markov"] = "bernoulli"
    probs: Optional[List[float]] = None
    transition: Optional[List[List[float]]] = None

    @field_validator("probs")
    @classmethod
    def _probs_sum(cls, probs):
        if probs is not None and (min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-12):
            raise ValueError(f"probabilities must be nonnegative and sum to 1, got {probs}")
        return probs

    @field_validator("transition")
    @classmethod
    def _rows_sum(cls, transition):
        if transition is None:
            return transition
        for i, row in enumerate(transition):
            if min(row) < 0 or abs(sum(row) - 1.0) > 1e-12:
                raise ValueError(f"row {i} must be nonnegative and sum to 1, got {row}")
        return transition

    @model_validator(mode="after")
    def _build(self):
        try:
            self.to_measure()
        except (AffineIFSError, ValueError) as exc:
            raise ValueError(f"invalid measure: {exc}") from exc
        return self

    def to_measure(self) -> ShiftMeasure:
        if self.kind == "bernoulli":
            return ShiftMeasure.bernoulli(self.probs)
        return ShiftMeasure.markov(self.transition)


class CarpetSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_cols: int = Field(..., ge=2)
    m_rows: int = Field(..., ge=2)
    digits: List[Tuple[int, int]]
    probs: Optional[List[float]] = None


class ExperimentConfig(BaseModel):
    """A single JSON experiment. Unknown keys are rejected."""
    model_config = ConfigDict(extra="forbid")

    task: Task
    ifs: Optional[IFSSpec] = None
    measure: Optional[MeasureSpec] = None
    carpet: Optional[CarpetSpec] = None
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED, ge=0)
    output: Optional[str] = Field(None, description="Report path; CSV tables are written next to it")

    # cocycle knobs
    n_steps: int = Field(100_000, ge=1000)
    n_reps: int = Field(16, ge=1)
    gap_tol: Optional[float] = Field(None, gt=0)
    past_depth: int = Field(200, ge=50)
    n_samples: int = Field(64, ge=1)

    # dimension knobs
    h: Optional[List[float]] = Field(None, description="Conditional entropies h_0 >= ... >= h_s (nats)")
    level: int = Field(8, ge=1, description="Pressure level n")
    tol: float = Field(1e-12, gt=0)

    # estimator knobs
    n_points: int = Field(100_000, ge=1)
    depth: Optional[int] = Field(None, ge=1)
    estimator: EstimatorConfig = Field(default_factory=lambda: EstimatorConfig(pair_budget=settings.PAIR_BUDGET))
    subspace: Optional[List[List[float]]] = Field(None, description="Basis vectors of W, one per entry")
    grid: Optional[List[List[float]]] = Field(None, description="Flattened translation vectors for a sweep")
    n_families: int = Field(10, ge=1)
    quarter_split: bool = False

    @field_validator("h")
    @classmethod
    def _entropy_sequence(cls, h):
        if h is not None:
            try:
                EntropySequence(h=tuple(h))
            except AffineIFSError as exc:
                raise ValueError(str(exc)) from exc
        return h

    @model_validator(mode="after")
    def _check_task_inputs(self):
        needs_system = {"spectrum", "flag", "lyapdim", "affdim", "sample", "estimate", "conserve"}
        if self.task in needs_system and self.carpet is None and self.ifs is None:
            raise ValueError(f"task '{self.task}' needs an 'ifs' (or a 'carpet')")
        if self.task in needs_system - {"affdim"} and self.carpet is None and self.measure is None:
            raise ValueError(f"task '{self.task}' needs a 'measure'")
        if self.task == "carpet" and self.carpet is None:
            raise ValueError("task 'carpet' needs a 'carpet' section")
        if self.task == "sweep" and (self.ifs is None or self.measure is None or not self.grid):
            raise ValueError("task 'sweep' needs 'ifs' matrices, a 'measure' and a nonempty 'grid'")
        if self.task == "conserve" and not self.subspace:
            raise ValueError("task 'conserve' needs a 'subspace'")
        if self.h is not None and (self.carpet is not None or self.ifs is not None):
            n_symbols = len(self.carpet.digits) if self.carpet is not None else len(self.ifs.matrices)
            if self.h[0] > math.log(n_symbols) + 1e-12:
                raise ValueError(f"h: h_0 = {self.h[0]} exceeds log|Λ| = {math.log(n_symbols):.6f} for {n_symbols} symbols")
        if self.ifs is not None and self.measure is not None:
            n_maps = len(self.ifs.matrices)
            n_symbols = len(self.measure.probs or self.measure.transition or [])
            if n_maps != n_symbols:
                raise ValueError(f"IFS has {n_maps} maps but the measure has {n_symbols} symbols")
        return self


def load_config(path: str, seed: Optional[int] = None) -> ExperimentConfig:
    """Read and validate a JSON config; `seed` overrides the file's seed."""
    config_path = Path(path)
    if not config_path.is_file():
        raise ExperimentValidationError(f"config file not found: {config_path}")
    try:
        data = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ExperimentValidationError(f"{config_path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if seed is not None and isinstance(data, dict):
        data["seed"] = seed
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        messages = [f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in exc.errors()]
        raise ExperimentValidationError("; ".join(messages)) from exc


# ---------------------------------------------------------------- task handlers

TaskResult = Tuple[Dict[str, Any], Dict[str, str], Dict[str, Tuple[List[str], List[List[Any]]]]]


def _system(config: ExperimentConfig) -> Tuple[AffineIFS, ShiftMeasure]:
    if config.carpet is not None:
        c = config.carpet
        return dimension.carpet_system(c.n_cols, c.m_rows, c.digits, c.probs)
    return config.ifs.to_ifs(), config.measure.to_measure()


def _spectrum(config: ExperimentConfig, ifs: AffineIFS, mu: ShiftMeasure):
    return cocycle.spectrum(ifs.matrices, mu, config.n_steps, config.n_reps, gap_tol=config.gap_tol, seed=config.seed)


def _spectrum_digest(config: ExperimentConfig, ifs: AffineIFS, mu: ShiftMeasure) -> str:
    return digest({"ifs": ifs.digest, "measure": mu.digest, "n_steps": config.n_steps,
                   "n_reps": config.n_reps, "gap_tol": config.gap_tol, "seed": config.seed}, "spectrum")


def _run_spectrum(config: ExperimentConfig) -> TaskResult:
    ifs, mu = _system(config)
    spec = _spectrum(config, ifs, mu)
    contraction = ifs_core.average_contraction(ifs, mu, min(config.n_steps, 10_000), config.n_reps, config.seed)
    tag = _spectrum_digest(config, ifs, mu)
    results = {
        "spectrum": spec,
        "average_contraction": contraction._asdict(),
        "entropy": entropy(mu),
        "regularity": regularity(mu),
    }
    provenance = {"spectrum": tag, "average_contraction": tag, "entropy": mu.digest, "regularity": mu.digest}
    return results, provenance, {}


def _run_flag(config: ExperimentConfig) -> TaskResult:
    ifs, mu = _system(config)
    spec = _spectrum(config, ifs, mu)
    past = sample_word(mu, config.past_depth, np.random.default_rng(config.seed))
    flag = cocycle.oseledets_flag(ifs.matrices, past, spec)
    tag = _spectrum_digest(config, ifs, mu)
    results: Dict[str, Any] = {"spectrum": spec, "flag": flag}
    provenance = {"spectrum": tag, "flag": digest({"spectrum": tag, "past": past}, "flag")}
    if spec.s >= 2:
        results["angles"] = cocycle.angle_stats(ifs.matrices, mu, spec, config.n_samples, config.past_depth, config.seed)
        results["furstenberg"] = cocycle.furstenberg_samples(
            ifs.matrices, mu, spec, config.n_samples, config.past_depth, config.seed
        )
        provenance["angles"] = digest({"spectrum": tag, "n": config.n_samples}, "angles")
        provenance["furstenberg"] = digest({"spectrum": tag, "n": config.n_samples}, "furstenberg")
    return results, provenance, {}


def _run_lyapdim(config: ExperimentConfig) -> TaskResult:
    ifs, mu = _system(config)
    spec = _spectrum(config, ifs, mu)
    h0 = config.h[0] if config.h else entropy(mu)
    dim_ly = dimension.lyapunov_dimension(h0, spec)
    results: Dict[str, Any] = {"spectrum": spec, "dim_ly": dim_ly, "determinant_mass": dimension.determinant_mass(ifs.matrices)}
    provenance = {"spectrum": _spectrum_digest(config, ifs, mu), "dim_ly": dim_ly.inputs_digest,
                  "determinant_mass": ifs.digest}

    if config.h:
        h = EntropySequence(h=tuple(config.h), alphabet_size=ifs.n_symbols)
        dim_mu = dimension.ly_formula(h, spec)
        sharpness = dimension.sharpness_check(h, spec)
        results.update({"dim_ly_formula": dim_mu, "sharpness": sharpness})
        provenance.update({"dim_ly_formula": dim_mu.inputs_digest, "sharpness": dim_mu.inputs_digest})
        if ifs_core.contraction_factor(ifs) < 1:
            certificate = ifs_core.strong_separation_certificate(ifs)
            results["ssc_certificate"] = certificate._asdict()
            provenance["ssc_certificate"] = ifs.digest
            if certificate.certified:
                results["ssc_consequences"] = dimension.ssc_consequences(h, spec)
                provenance["ssc_consequences"] = dim_mu.inputs_digest
    return results, provenance, {}


def _run_affdim(config: ExperimentConfig) -> TaskResult:
    ifs = _system(config)[0] if config.carpet is not None else config.ifs.to_ifs()
    value = dimension.affinity_dimension(ifs.matrices, config.level, config.tol)
    return {"dim_aff": value}, {"dim_aff": value.inputs_digest}, {}


def _points_table(cloud) -> Tuple[List[str], List[List[float]]]:
    header = [f"x{i}" for i in range(cloud.dimension)]
    return header, cloud.points.tolist()


def _run_sample(config: ExperimentConfig) -> TaskResult:
    ifs, mu = _system(config)
    cloud = estimator.sample_points(ifs, mu, config.n_points, depth=config.depth, seed=config.seed)
    results = {
        "n_points": cloud.n_points,
        "depth": cloud.depth,
        "tail_warning": cloud.tail_warning,
        "mean": cloud.points.mean(axis=0).tolist(),
    }
    provenance = {key: cloud.digest for key in results}
    return results, provenance, {"points": _points_table(cloud)}


def _run_estimate(config: ExperimentConfig) -> TaskResult:
    ifs, mu = _system(config)
    cloud = estimator.sample_points(ifs, mu, config.n_points, depth=config.depth, seed=config.seed)
    estimate = estimator.local_dimension(cloud, config.estimator)
    results: Dict[str, Any] = {"dim_local": estimate}
    provenance = {"dim_local": estimate.inputs_digest}
    if config.quarter_split:
        results["quarter_split"] = estimator.quarter_split_check(cloud, config.estimator)
        provenance["quarter_split"] = digest({"cloud": cloud.digest}, "quarter_split")
    return results, provenance, {}


def _run_carpet(config: ExperimentConfig) -> TaskResult:
    c = config.carpet
    oracle = dimension.carpet_oracle(c.n_cols, c.m_rows, c.digits, c.probs)
    results = {
        "h": oracle.h,
        "spectrum": oracle.spectrum,
        "dim_mu": oracle.dim_mu,
        "dim_K": oracle.dim_K,
        "dim_box": oracle.dim_box,
        "sharpness": dimension.sharpness_check(oracle.h, oracle.spectrum),
    }
    provenance = {
        "h": oracle.dim_mu.inputs_digest,
        "spectrum": oracle.dim_mu.inputs_digest,
        "dim_mu": oracle.dim_mu.inputs_digest,
        "dim_K": oracle.dim_K.inputs_digest,
        "dim_box": oracle.dim_box.inputs_digest,
        "sharpness": oracle.dim_mu.inputs_digest,
    }
    if oracle.spectrum.s >= 2:
        for name, value in (("dim_projection_ly", dimension.projected_ly(oracle.h, oracle.spectrum, 1)),
                            ("dim_slice_ly", dimension.slice_ly(oracle.h, oracle.spectrum, 1))):
            results[name] = value
            provenance[name] = value.inputs_digest
    return results, provenance, {}


def _run_sweep(config: ExperimentConfig) -> TaskResult:
    ifs, mu = _system(config)
    rows = estimator.translation_sweep(
        ifs.matrices, mu, config.grid, config.estimator, n_points=config.n_points,
        depth=config.depth, seed=config.seed,
    )
    flags = estimator.lower_semicontinuity_flags(rows)
    results = {f"grid_{i}": row for i, row in enumerate(rows)}
    results["upward_spikes"] = [i for i, flag in enumerate(flags) if flag]
    provenance = {f"grid_{i}": row.estimate.inputs_digest for i, row in enumerate(rows)}
    provenance["upward_spikes"] = digest([row.estimate.inputs_digest for row in rows], "semicontinuity")

    header = [f"a{i}" for i in range(len(config.grid[0]))] + ["estimate", "ci_half_width", "dim_ly", "bound", "exceptional"]
    table = [
        [v for translation in row.translations for v in translation]
        + [row.estimate.value, row.estimate.ci_half_width, row.dim_ly, row.bound, row.exceptional]
        for row in rows
    ]
    return results, provenance, {"sweep": (header, table)}


def _run_conserve(config: ExperimentConfig) -> TaskResult:
    ifs, mu = _system(config)
    cloud = estimator.sample_points(ifs, mu, config.n_points, depth=config.depth, seed=config.seed)
    basis, _ = np.linalg.qr(np.asarray(config.subspace, dtype=float).T)

    expected: Dict[str, float] = {}
    if config.carpet is not None:
        c = config.carpet
        oracle = dimension.carpet_oracle(c.n_cols, c.m_rows, c.digits, c.probs)
        expected["dim_total"] = oracle.dim_mu.value
        if oracle.spectrum.s >= 2:
            expected["dim_proj_weak_axis"] = dimension.projected_ly(oracle.h, oracle.spectrum, 1).value
            expected["dim_slice_strong_axis"] = dimension.slice_ly(oracle.h, oracle.spectrum, 1).value

    report = estimator.conservation_check(cloud, basis, config.estimator, expected=expected)
    tag = digest({"cloud": cloud.digest, "subspace": basis}, "conservation")
    return {"conservation": report}, {"conservation": tag}, {}


def _run_suite(config: ExperimentConfig) -> TaskResult:
    families = []
    for i in range(config.n_families):
        ifs, mu = estimator.random_contracting_family(dimension=2, n_maps=2, seed=config.seed + i)
        families.append(estimator.SuiteFamily(label=f"random_{i}", ifs=ifs, mu=mu))
    if config.carpet is not None:
        c = config.carpet
        ifs, mu = dimension.carpet_system(c.n_cols, c.m_rows, c.digits, c.probs)
        oracle = dimension.carpet_oracle(c.n_cols, c.m_rows, c.digits, c.probs)
        families.append(estimator.SuiteFamily(label="carpet", ifs=ifs, mu=mu, h=oracle.h))

    rows = estimator.upper_bound_suite(
        families, config.estimator, n_points=config.n_points, seed=config.seed, spectrum_steps=min(config.n_steps, 20_000)
    )
    results: Dict[str, Any] = {row.label: row for row in rows}
    results["all_passed"] = all(row.passed for row in rows)
    provenance = {row.label: row.estimate.inputs_digest for row in rows}
    provenance["all_passed"] = digest([row.estimate.inputs_digest for row in rows], "upper_bound_suite")
    return results, provenance, {}


TASKS: Dict[str, Callable[[ExperimentConfig], TaskResult]] = {
    "spectrum": _run_spectrum,
    "flag": _run_flag,
    "lyapdim": _run_lyapdim,
    "affdim": _run_affdim,
    "sample": _run_sample,
    "estimate": _run_estimate,
    "carpet": _run_carpet,
    "sweep": _run_sweep,
    "conserve": _run_conserve,
    "suite": _run_suite,
}


def run_experiment(config: ExperimentConfig, out: Optional[str] = None) -> Report:
    """
    Execute one experiment and write its report (plus CSV tables) when an output path is known.

    Raises:
        ExperimentExecutionError: If a numeric or resource error stops the task
    """
    logger.info(f"Starting task '{config.task}' with seed {config.seed}")
    start = datetime.now()
    try:
        results, provenance, tables = TASKS[config.task](config)
    except AffineIFSError as e:
        logger.error(f"Task '{config.task}' failed: {e}")
        raise ExperimentExecutionError(f"{type(e).__name__}: {e}") from e

    output = out or config.output
    written = []
    if output:
        for name, (header, rows) in tables.items():
            path = Path(output).with_name(f"{Path(output).stem}_{name}.csv")
            write_csv(path, header, rows)
            written.append(path.name)

    config_echo = config.model_dump(mode="json")
    report = Report(
        task=config.task,
        config=config_echo,
        config_digest=digest(config_echo, "config"),
        seed=config.seed,
        results=results,
        provenance=provenance,
        tables=written,
        wall_clock_seconds=(datetime.now() - start).total_seconds(),
    )
    if output:
        write_report(report, output)
    logger.info(f"Task '{config.task}' completed in {report.wall_clock_seconds:.2f} seconds")
    return report


def run_from_path(path: str, seed: Optional[int] = None, out: Optional[str] = None) -> Report:
    return run_experiment(load_config(path, seed=seed), out=out)
