"""Idler-side "detectors" and the collapse decision they may trigger.

Each idler photon reaching the probed device ends in one of three branches:
it passes untouched (``MISS``), it is absorbed and amplified (``DETECT``), or
it is absorbed without amplification (``FAIL``).  The branch and the device
determine how many environment particles end up carrying which-path
information; a ``CollapseModel`` turns that count into a collapse decision.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig

__all__ = [
    "Branch",
    "BranchState",
    "DetectorKind",
    "DetectorSpec",
    "CollapseModel",
    "environment_count",
    "environment_counts",
    "collapse_probability",
    "sample_branch",
    "sample_branches",
    "stage_threshold",
]

_PROB_TOL = 1e-12
_LOG_FLOOR = 1e-12


class Branch(enum.IntEnum):
    MISS = 0
    DETECT = 1
    FAIL = 2

    @classmethod
    def parse(cls, text: str) -> "Branch":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown branch {text!r}") from None


def _check_probability(name, value):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and 0.0 <= value <= 1.0):
        raise InvalidConfig(f"{name} must be a probability in [0, 1], got {value!r}")


@dataclass(frozen=True)
class BranchState:
    """Squared amplitudes of the three device outcomes."""

    p_miss: float = 0.0
    p_detect: float = 1.0
    p_fail: float = 0.0

    def __post_init__(self):
        for name in ("p_miss", "p_detect", "p_fail"):
            _check_probability(name, getattr(self, name))
        total = self.p_miss + self.p_detect + self.p_fail
        if abs(total - 1.0) > _PROB_TOL:
            raise InvalidConfig(f"p_miss + p_detect + p_fail must equal 1, got {total!r}")

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([self.p_miss, self.p_detect, self.p_fail])


class DetectorKind(str, enum.Enum):
    SINK = "sink"
    COLD_ATOM = "cold_atom"
    PLATE = "plate"
    PMT = "pmt"


@dataclass(frozen=True)
class DetectorSpec:
    """Device placed in the idler arm.

    Only the fields relevant to ``kind`` are consulted: ``atom_count`` for a
    cold-atom gas, ``grain_env_count`` for a photographic plate, ``gain_g``
    and ``stages`` for a photomultiplier.  A plate has no default grain
    count on purpose; nobody knows how many particles a developed grain
    entangles.
    """

    kind: DetectorKind
    branches: BranchState = BranchState()
    atom_count: int | None = None
    grain_env_count: int | None = None
    gain_g: float | None = None
    stages: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", DetectorKind(self.kind))
        if self.kind is DetectorKind.COLD_ATOM:
            if self.atom_count is None:
                object.__setattr__(self, "atom_count", 1)
            _require_positive_int("atom_count", self.atom_count)
        elif self.kind is DetectorKind.PLATE:
            if self.grain_env_count is None:
                raise InvalidConfig("grain_env_count is required for a plate detector")
            _require_positive_int("grain_env_count", self.grain_env_count)
        elif self.kind is DetectorKind.PMT:
            if self.gain_g is None or self.stages is None:
                raise InvalidConfig("pmt detector requires both gain_g and stages")
            g = self.gain_g
            if not (isinstance(g, (int, float)) and math.isfinite(g) and g >= 1.0):
                raise InvalidConfig(f"pmt gain_g must be ≥ 1, got {g!r}")
            if isinstance(self.stages, bool) or not isinstance(self.stages, (int, np.integer)) or self.stages < 0:
                raise InvalidConfig(f"pmt stages must be an integer ≥ 0, got {self.stages!r}")

    @classmethod
    def sink(cls, branches: BranchState = BranchState()) -> "DetectorSpec":
        return cls(DetectorKind.SINK, branches)

    @classmethod
    def cold_atom(cls, atom_count: int = 1, branches: BranchState = BranchState()) -> "DetectorSpec":
        return cls(DetectorKind.COLD_ATOM, branches, atom_count=atom_count)

    @classmethod
    def plate(cls, grain_env_count: int, branches: BranchState = BranchState()) -> "DetectorSpec":
        return cls(DetectorKind.PLATE, branches, grain_env_count=grain_env_count)

    @classmethod
    def pmt(cls, gain_g: float, stages: int, branches: BranchState = BranchState()) -> "DetectorSpec":
        return cls(DetectorKind.PMT, branches, gain_g=gain_g, stages=stages)


def _require_positive_int(name, value):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
        raise InvalidConfig(f"{name} must be a positive integer, got {value!r}")


@dataclass(frozen=True)
class CollapseModel:
    """Collapse threshold ``threshold_nc`` with optional logistic ``softness``.

    ``softness == 0`` is a hard step at the threshold; a positive value is
    the logistic width measured in natural-log count units.
    """

    threshold_nc: float
    softness: float = 0.0

    def __post_init__(self):
        nc, s = self.threshold_nc, self.softness
        if not (isinstance(nc, (int, float)) and math.isfinite(nc) and nc >= 1.0):
            raise InvalidConfig(f"threshold_nc must be ≥ 1, got {nc!r}")
        if not (isinstance(s, (int, float)) and math.isfinite(s) and s >= 0.0):
            raise InvalidConfig(f"softness must be ≥ 0, got {s!r}")


def environment_count(spec: DetectorSpec, branch: Branch) -> float:
    """Number of environment particles holding which-path information."""
    branch = Branch(branch)
    if branch is Branch.MISS or spec.kind is DetectorKind.SINK:
        return 0.0
    if branch is Branch.FAIL:
        return 1.0
    if spec.kind is DetectorKind.COLD_ATOM:
        return float(spec.atom_count)
    if spec.kind is DetectorKind.PLATE:
        return float(spec.grain_env_count)
    return float(spec.gain_g) ** spec.stages


def environment_counts(spec: DetectorSpec, branches: np.ndarray) -> np.ndarray:
    """Vectorized :func:`environment_count` over an array of branch codes."""
    table = np.array([environment_count(spec, b) for b in Branch])
    return table[np.asarray(branches, dtype=np.int64)]


def collapse_probability(count, model: CollapseModel):
    """Probability that ``count`` entangled particles collapse the signal state."""
    count = np.asarray(count, dtype=float)
    if model.softness == 0.0:
        out = (count >= model.threshold_nc).astype(float)
    else:
        z = np.log(np.maximum(count, _LOG_FLOOR) / model.threshold_nc) / model.softness
        # logistic via tanh stays finite for large |z|
        out = 0.5 * (1.0 + np.tanh(0.5 * z))
    return out if out.ndim else float(out)


def sample_branches(branches: BranchState, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw ``size`` branch codes (``Branch`` values as int8)."""
    u = rng.random(size)
    # zero-probability branches stay unreachable: u < p_miss is false when p_miss == 0
    out = np.full(size, Branch.DETECT, dtype=np.int8)
    out[u < branches.p_miss] = Branch.MISS
    out[u >= branches.p_miss + branches.p_detect] = Branch.FAIL
    if branches.p_fail == 0.0:
        out[out == Branch.FAIL] = Branch.DETECT if branches.p_detect > 0 else Branch.MISS
    return out


def sample_branch(branches: BranchState, rng: np.random.Generator) -> Branch:
    return Branch(int(sample_branches(branches, rng, 1)[0]))


def stage_threshold(gain_g: float, threshold_nc: float) -> int:
    """Smallest ``k`` with ``gain_g**k >= threshold_nc`` (hard threshold, ``gain_g > 1``)."""
    if gain_g <= 1.0:
        raise InvalidConfig("gain_g must exceed 1 for a finite stage threshold")
    k = max(0, math.ceil(math.log(threshold_nc) / math.log(gain_g)))
    # guard against log rounding either side of an exact power
    while k > 0 and gain_g ** (k - 1) >= threshold_nc:
        k -= 1
    while gain_g**k < threshold_nc:
        k += 1
    return k
