"""Fringe-visibility inference on signal-screen data.

The model is the normalized ``Family(V)`` density on the screen,

    p_V(x) = sinc^2(theta_a) (1 + V cos 2 theta_d) / (Z0 + V Z1),

where ``Z0`` and ``Z1`` are the screen integrals of ``sinc^2`` and
``sinc^2 cos 2 theta_d``.  ``sinc^2`` does not depend on ``V`` so it only
enters the reported log-likelihood as a constant.

All decision thresholds here (the ``ln 100`` likelihood-ratio cut, the
1.92 profile drop) are conventions of this tool, not physics.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from .collapse import Branch, BranchState, CollapseModel, DetectorSpec, environment_count
from .errors import InvalidConfig, NonConvergent, OutOfRangeSample, TooFewSamples
from .optics import (
    OpticalConfig,
    PatternKind,
    ScreenConfig,
    family_bin_integrals,
    fringe_phases,
    normalize_pdf,
    sinc,
)
from .simulator import Experiment, TimingModel, run_simulation

__all__ = [
    "Decision",
    "PatternFit",
    "ClassificationResult",
    "StageRecord",
    "SweepResult",
    "UnbinnedLikelihood",
    "BinnedLikelihood",
    "golden_section_max",
    "fit_visibility",
    "fit_visibility_binned",
    "classify",
    "classify_binned",
    "min_samples",
    "stage_sweep",
]

log = logging.getLogger(__name__)

MIN_FIT_SAMPLES = 100
DEFAULT_LLR_THRESHOLD = math.log(100.0)
V_COLLAPSED = 1.0 / 3.0
V_INTACT = 1.0
PROFILE_DROP_95 = 1.92
COARSE_GRID = 41
V_TOL = 1e-5
MAX_SAMPLES = 10**8

CONVENTIONS = {
    "llr_threshold_default": "ln(100)",
    "ci": "profile likelihood, drop 1.92",
    "note": "decision thresholds are tool conventions, not derived from the model",
}


class Decision(str, enum.Enum):
    COLLAPSED = "Collapsed"
    INTACT = "Intact"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class PatternFit:
    v_hat: float
    log_likelihood: float
    n_samples: int
    ci_low: float
    ci_high: float
    method: str = "unbinned"
    unimodal: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ClassificationResult:
    decision: Decision
    log_likelihood_ratio: float
    threshold_used: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["decision"] = self.decision.value
        return d


@dataclass(frozen=True)
class StageRecord:
    stages: int
    environment_count: float
    fit: PatternFit
    decision: Decision
    log_likelihood_ratio: float

    def to_dict(self) -> dict:
        return {
            "stages": self.stages,
            "environment_count": self.environment_count,
            "fit": self.fit.to_dict(),
            "decision": self.decision.value,
            "log_likelihood_ratio": self.log_likelihood_ratio,
        }


@dataclass(frozen=True)
class SweepResult:
    gain_g: float
    records: tuple
    inferred_stage_threshold: int | None
    inferred_nc_bracket: tuple | None
    seed: int
    n_events_per_stage: int
    conventions: dict = field(default_factory=lambda: dict(CONVENTIONS))

    @property
    def is_monotone(self) -> bool:
        """No Collapsed stage precedes an Intact one."""
        seen_collapsed = False
        for rec in sorted(self.records, key=lambda r: r.stages):
            if rec.decision is Decision.COLLAPSED:
                seen_collapsed = True
            elif rec.decision is Decision.INTACT and seen_collapsed:
                return False
        return True

    def to_dict(self) -> dict:
        return {
            "gain_g": self.gain_g,
            "seed": self.seed,
            "n_events_per_stage": self.n_events_per_stage,
            "records": [r.to_dict() for r in self.records],
            "inferred_stage_threshold": self.inferred_stage_threshold,
            "inferred_nc_bracket": list(self.inferred_nc_bracket) if self.inferred_nc_bracket else None,
            "monotone": self.is_monotone,
            "conventions": self.conventions,
        }


def _screen_moments(cfg: OpticalConfig, screen: ScreenConfig) -> tuple[float, float]:
    a, b = family_bin_integrals(cfg, [-screen.x_max, screen.x_max])
    return float(a[0]), float(b[0])


class UnbinnedLikelihood:
    """``log L(V)`` for individual screen positions."""

    method = "unbinned"

    def __init__(self, positions, cfg: OpticalConfig, screen: ScreenConfig, min_samples: int = MIN_FIT_SAMPLES):
        x = np.asarray(positions, dtype=float).ravel()
        if x.size < min_samples:
            raise TooFewSamples(f"need at least {min_samples} positions, got {x.size}")
        bad = ~(np.abs(x) <= screen.x_max)
        if bad.any():
            raise OutOfRangeSample(
                f"{int(bad.sum())} position(s) outside [-{screen.x_max!r}, {screen.x_max!r}], e.g. {x[bad][0]!r}"
            )
        theta_a, theta_d = fringe_phases(x, cfg)
        self.n = int(x.size)
        self.cos2 = np.cos(2.0 * theta_d)
        with np.errstate(divide="ignore"):
            self.log_envelope = float(np.sum(np.log(sinc(theta_a) ** 2)))
        self.z0, self.z1 = _screen_moments(cfg, screen)

    def shape_loglik(self, v: float) -> float:
        """``log L(V)`` without the V-independent envelope term."""
        with np.errstate(divide="ignore"):
            fringe = np.sum(np.log1p(v * self.cos2))
        return float(fringe - self.n * math.log(self.z0 + v * self.z1))

    def __call__(self, v: float) -> float:
        return self.log_envelope + self.shape_loglik(v)


class BinnedLikelihood:
    """Multinomial ``log L(V)`` for counts in the screen's histogram bins."""

    method = "binned"

    def __init__(self, counts, cfg: OpticalConfig, screen: ScreenConfig, min_samples: int = MIN_FIT_SAMPLES):
        counts = np.asarray(counts)
        if counts.shape != (screen.n_bins,):
            raise InvalidConfig(f"expected {screen.n_bins} bin counts, got shape {counts.shape}")
        if np.any(counts < 0):
            raise InvalidConfig("bin counts must be non-negative")
        self.counts = counts.astype(float)
        self.n = int(counts.sum())
        if self.n < min_samples:
            raise TooFewSamples(f"need at least {min_samples} events, got {self.n}")
        self.a, self.b = family_bin_integrals(cfg, screen.bin_edges)
        self.z0, self.z1 = float(self.a.sum()), float(self.b.sum())
        self._used = self.counts > 0

    def __call__(self, v: float) -> float:
        n_i = self.counts[self._used]
        mass = self.a[self._used] + v * self.b[self._used]
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = n_i * np.log(mass / (self.z0 + v * self.z1))
        return float(np.sum(terms))

    shape_loglik = __call__


def golden_section_max(f, lo: float, hi: float, tol: float = V_TOL, max_iter: int = 200):
    """Maximize a unimodal ``f`` on ``[lo, hi]``; returns ``(x, f(x))``."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - invphi * (hi - lo)
    x2 = lo + invphi * (hi - lo)
    f1, f2 = f(x1), f(x2)
    it = 0
    while hi - lo > tol and it < max_iter:
        # >= keeps the left point on ties, i.e. the smaller V
        if f1 >= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - invphi * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + invphi * (hi - lo)
            f2 = f(x2)
        it += 1
    return (x1, f1) if f1 >= f2 else (x2, f2)


def _is_unimodal(values: np.ndarray) -> bool:
    d = np.sign(np.diff(values))
    d = d[d != 0]
    # once decreasing, never increasing again
    return not np.any((d[:-1] < 0) & (d[1:] > 0))


def _maximize(loglik) -> PatternFit:
    grid = np.linspace(0.0, 1.0, COARSE_GRID)
    values = np.array([loglik(v) for v in grid])
    finite = np.where(np.isfinite(values), values, -np.inf)
    j = int(np.argmax(finite))  # first maximum -> smaller V on ties
    unimodal = _is_unimodal(finite[np.isfinite(finite)])
    if not unimodal:
        log.warning("log-likelihood over V is not unimodal on the coarse grid; refining around the global best point")
    lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, COARSE_GRID - 1)]
    v_hat, best = golden_section_max(loglik, lo, hi)
    # closed domain: the optimum may sit on an edge the interior search never evaluates
    for edge in (lo, hi):
        if edge in (0.0, 1.0):
            val = loglik(edge)
            if val > best or (val == best and edge < v_hat):
                v_hat, best = edge, val
    ci_low, ci_high = _profile_interval(loglik, v_hat, best)
    return PatternFit(
        v_hat=float(v_hat),
        log_likelihood=float(best),
        n_samples=loglik.n,
        ci_low=ci_low,
        ci_high=ci_high,
        method=loglik.method,
        unimodal=bool(unimodal),
    )


def _profile_interval(loglik, v_hat: float, best: float, drop: float = PROFILE_DROP_95):
    target = best - drop

    def g(v):
        val = loglik(v)
        return (val if np.isfinite(val) else -1e300) - target

    if v_hat <= 0.0 or g(0.0) >= 0:
        low = 0.0
    else:
        low = brentq(g, 0.0, v_hat, xtol=1e-10)
    if v_hat >= 1.0 or g(1.0) >= 0:
        high = 1.0
    else:
        high = brentq(g, v_hat, 1.0, xtol=1e-10)
    return float(min(low, v_hat)), float(max(high, v_hat))


def fit_visibility(positions, cfg: OpticalConfig, screen: ScreenConfig) -> PatternFit:
    """Unbinned maximum-likelihood visibility with a profile 95% interval."""
    return _maximize(UnbinnedLikelihood(positions, cfg, screen))


def fit_visibility_binned(counts, cfg: OpticalConfig, screen: ScreenConfig) -> PatternFit:
    """Same as :func:`fit_visibility` for histogram counts (multinomial likelihood)."""
    return _maximize(BinnedLikelihood(counts, cfg, screen))


def _decide(llr: float, threshold: float) -> ClassificationResult:
    if llr > threshold:
        decision = Decision.COLLAPSED
    elif llr < -threshold:
        decision = Decision.INTACT
    else:
        decision = Decision.INCONCLUSIVE
    return ClassificationResult(decision, float(llr), float(threshold))


def _llr(loglik) -> float:
    # V=1/3 keeps every term finite, so only the V=1 side can be -inf
    return loglik.shape_loglik(V_COLLAPSED) - loglik.shape_loglik(V_INTACT)


def classify(positions, cfg: OpticalConfig, screen: ScreenConfig, llr_threshold: float = DEFAULT_LLR_THRESHOLD):
    """Compare ``V = 1/3`` (collapsed) against ``V = 1`` (intact).

    Positive log-likelihood ratios favour collapse.  Unlike the fit this
    works for any non-empty sample; with few events it is usually
    Inconclusive.
    """
    if not llr_threshold >= 0:
        raise InvalidConfig(f"llr_threshold must be ≥ 0, got {llr_threshold!r}")
    return _decide(_llr(UnbinnedLikelihood(positions, cfg, screen, min_samples=1)), llr_threshold)


def classify_binned(counts, cfg: OpticalConfig, screen: ScreenConfig, llr_threshold: float = DEFAULT_LLR_THRESHOLD):
    if not llr_threshold >= 0:
        raise InvalidConfig(f"llr_threshold must be ≥ 0, got {llr_threshold!r}")
    return _decide(_llr(BinnedLikelihood(counts, cfg, screen, min_samples=1)), llr_threshold)


def _error_rate(n, v_true, v_alt, threshold, n_trials, pdf, moments, cfg, rng) -> float:
    z0, z1 = moments
    offset = n * math.log((z0 + v_alt * z1) / (z0 + v_true * z1))
    errors = 0
    per_chunk = max(1, 4_000_000 // n)
    done = 0
    while done < n_trials:
        m = min(per_chunk, n_trials - done)
        x = pdf.sample(rng, (m, n))
        c = np.cos(2.0 * fringe_phases(x, cfg)[1])
        with np.errstate(divide="ignore", invalid="ignore"):
            llr = np.sum(np.log1p(v_true * c) - np.log1p(v_alt * c), axis=1) + offset
        errors += int(np.count_nonzero(~(llr > threshold)))
        done += m
    return errors / n_trials


def min_samples(
    v_true: float,
    v_alt: float,
    error_rate: float,
    cfg: OpticalConfig,
    screen: ScreenConfig,
    seed: int = 0,
    n_trials: int | None = None,
    max_n: int = MAX_SAMPLES,
) -> int:
    """Smallest sample size telling ``v_true`` from ``v_alt`` at ``error_rate``.

    Data are drawn from ``Family(v_true)``; a trial is correct only if the
    log-likelihood ratio in favour of ``v_true`` exceeds
    ``ln((1 - error_rate) / error_rate)``.  Candidate sizes double until one
    passes, then bisection finds the boundary.  Every candidate uses a fresh
    stream derived from ``(seed, n)``.
    """
    for name, v in (("v_true", v_true), ("v_alt", v_alt)):
        if not 0.0 <= v <= 1.0:
            raise InvalidConfig(f"{name} must lie in [0, 1], got {v!r}")
    if v_true == v_alt:
        raise InvalidConfig("v_true and v_alt must differ; identical hypotheses cannot be separated")
    if not 0.0 < error_rate < 0.5:
        raise InvalidConfig(f"error_rate must lie in (0, 0.5), got {error_rate!r}")
    if n_trials is None:
        n_trials = max(400, math.ceil(10.0 / error_rate))
    if n_trials < 400:
        raise InvalidConfig("n_trials must be at least 400")

    threshold = math.log((1.0 - error_rate) / error_rate)
    pdf = normalize_pdf(PatternKind.family(v_true), cfg, screen)
    moments = _screen_moments(cfg, screen)

    def passes(n: int) -> bool:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(n)]))
        return _error_rate(n, v_true, v_alt, threshold, n_trials, pdf, moments, cfg, rng) <= error_rate

    n = 1
    while not passes(n):
        n *= 2
        if n > max_n:
            raise NonConvergent(f"no sample size up to {max_n} reaches error rate {error_rate}")
    lo, hi = n // 2, n  # lo fails (or is 0), hi passes
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if passes(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _stage_seed(seed: int, stages: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(stages)]).generate_state(1, np.uint64)[0] >> 1)


def stage_sweep(
    gain_g: float,
    stage_range,
    ground_truth: CollapseModel,
    n_events_per_stage: int,
    seed: int,
    cfg: OpticalConfig,
    screen: ScreenConfig,
    timing: TimingModel = TimingModel(),
    branches: BranchState = BranchState(),
    n_workers: int = 1,
    llr_threshold: float = DEFAULT_LLR_THRESHOLD,
) -> SweepResult:
    """Simulate a PMT with each stage count in ``stage_range`` and locate the collapse onset.

    The inferred threshold is the smallest stage count classified
    Collapsed; the collapse threshold then lies in
    ``(gain_g**(k-1), gain_g**k]``.
    """
    if not gain_g > 1.0:
        raise InvalidConfig(f"gain_g must exceed 1 for a stage sweep, got {gain_g!r}")
    stages_list = sorted(int(k) for k in stage_range)
    if not stages_list:
        raise InvalidConfig("stage_range must not be empty")

    records = []
    for k in stages_list:
        spec = DetectorSpec.pmt(gain_g, k, branches)
        exp = Experiment(cfg, screen, spec, ground_truth, timing)
        run = run_simulation(exp, n_events_per_stage, _stage_seed(seed, k), n_workers)
        like = UnbinnedLikelihood(run.positions, cfg, screen)
        fit = _maximize(like)
        verdict = _decide(_llr(like), llr_threshold)
        records.append(
            StageRecord(k, environment_count(spec, Branch.DETECT), fit, verdict.decision, verdict.log_likelihood_ratio)
        )

    k_star = next((r.stages for r in records if r.decision is Decision.COLLAPSED), None)
    bracket = None if k_star is None else (float(gain_g) ** (k_star - 1), float(gain_g) ** k_star)
    return SweepResult(float(gain_g), tuple(records), k_star, bracket, int(seed), int(n_events_per_stage))
