"""
Fast acceptance subset: each check compares a computed value to a closed form
within a tolerance from the settings, so a tightened AFFDIM_SELFTEST_* override
makes the corresponding check fail.
"""
import logging
import math
from typing import Callable, List, NamedTuple, Optional, TextIO

import numpy as np

from affine_ifs import cocycle, dimension, estimator, ifs_core
from affine_ifs.schemas import AffineIFS, LyapunovSpectrum, ShiftMeasure
from app.config import Settings, get_settings

logger = logging.getLogger(__name__)

SELFTEST_SEED = 20240601


class CheckResult(NamedTuple):
    name: str
    value: float
    expected: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return abs(self.value - self.expected) <= self.tolerance


def _cantor() -> AffineIFS:
    return AffineIFS.from_arrays([1 / 3, 1 / 3], [0.0, 2 / 3])


def check_coding_map(settings: Settings) -> List[CheckResult]:
    point = ifs_core.code_point(_cantor(), [1, 0] * 20).point[0]
    return [CheckResult("coding map 0.2020..._3", float(point), 0.75, 1e-12)]


def check_spectrum(settings: Settings) -> List[CheckResult]:
    mats = np.array([np.diag([1 / 2, 1 / 4]), np.diag([1 / 3, 1 / 5])])
    spec = cocycle.spectrum(mats, ShiftMeasure.bernoulli([0.5, 0.5]), n_steps=20_000, n_reps=8, seed=SELFTEST_SEED)
    expected = (0.5 * math.log(1 / 6), 0.5 * math.log(1 / 20))
    return [
        CheckResult(f"diagonal spectrum lambda_{i + 1}", spec.exponents[i], expected[i], settings.SELFTEST_SPECTRUM_TOL)
        for i in range(2)
    ]


def check_lyapunov_dimension(settings: Settings) -> List[CheckResult]:
    spec = LyapunovSpectrum(
        exponents=(math.log(1 / 2), math.log(1 / 3)), multiplicities=(1, 1), stderr=(0.0, 0.0), gap_tol=1e-12
    )
    value = dimension.lyapunov_dimension(math.log(3), spec).value
    expected = 1 + (math.log(3) - math.log(2)) / math.log(3)
    return [CheckResult("lyapunov dimension branch 2", value, expected, settings.SELFTEST_LYAPDIM_TOL)]


def check_carpet(settings: Settings) -> List[CheckResult]:
    oracle = dimension.carpet_oracle(3, 2, [(0, 0), (1, 0), (2, 1)])
    h_q = math.log(3) - (2 / 3) * math.log(2)
    expected = h_q / math.log(2) + (math.log(3) - h_q) / math.log(3)
    return [CheckResult("carpet (3,2) dim_mu", oracle.dim_mu.value, expected, settings.SELFTEST_CARPET_TOL)]


def check_affinity(settings: Settings) -> List[CheckResult]:
    value = dimension.affinity_dimension(_cantor().matrices, n=8).value
    return [CheckResult("affinity dimension of Cantor", value, math.log(2) / math.log(3), settings.SELFTEST_AFFINITY_TOL)]


def check_cantor_estimate(settings: Settings) -> List[CheckResult]:
    cloud = estimator.sample_points(_cantor(), ShiftMeasure.bernoulli([0.5, 0.5]), 100_000, seed=SELFTEST_SEED)
    estimate = estimator.local_dimension(cloud, seed=SELFTEST_SEED, pair_budget=5_000_000)
    return [CheckResult("Cantor correlation dimension", estimate.value, math.log(2) / math.log(3), settings.SELFTEST_CANTOR_TOL)]


CHECKS: List[Callable[[Settings], List[CheckResult]]] = [
    check_coding_map,
    check_spectrum,
    check_lyapunov_dimension,
    check_carpet,
    check_affinity,
    check_cantor_estimate,
]


def format_table(results: List[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  {'value':>14}  {'expected':>14}  {'tolerance':>9}  status"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name:<{width}}  {r.value:>14.10f}  {r.expected:>14.10f}  {r.tolerance:>9.1e}  {status}")
    passed = sum(r.passed for r in results)
    lines.append(f"{passed}/{len(results)} checks passed")
    return "\n".join(lines)


def run_selftest(settings: Optional[Settings] = None, stream: Optional[TextIO] = None) -> int:
    """Run every fast check and print the table; returns 0 when all pass, 1 otherwise."""
    settings = settings or get_settings()
    results: List[CheckResult] = []
    for check in CHECKS:
        results.extend(check(settings))
    table = format_table(results)
    print(table, file=stream)
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.warning(f"selftest failures: {failed}")
        return 1
    return 0
