"""Per-pump-photon Monte Carlo of the signal-screen record.

For every pump photon the idler device outcome is drawn, the collapse
decision is made from the resulting environment count, the detection order
is drawn and the signal position is sampled from the pattern that order
implies:

* not collapsed                  -> two-slit interference, ``Family(1)``
* collapsed, signal seen first   -> two-slit interference, ``Family(1)``
* collapsed, idler seen first    -> single-slit envelope, ``Family(0)``

Detection order is intensity weighted by default.  With order probability
``p`` the collapsed events then add up to
``p * sinc^2 + (1 - p) * sinc^2 cos^2``, i.e. ``sinc^2 (1 + cos^2)`` at
``p = 1/2``, which is ``Family((1 - p) / (1 + p))``.  Drawing the order as a
plain Bernoulli(``p``) over *normalized* patterns gives ``Family(~1/2)``
instead; that variant stays available through ``intensity_weighted=False``.

Note that signal-first events keep their fringes even when the idler is
later absorbed by a collapsing device.  That is the model being simulated,
not standard quantum-eraser bookkeeping.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import __version__
from .collapse import (
    Branch,
    CollapseModel,
    DetectorSpec,
    collapse_probability,
    environment_counts,
    sample_branches,
)
from .errors import InvalidConfig
from .optics import OpticalConfig, PatternKind, PatternPdf, ScreenConfig, normalize_pdf

__all__ = [
    "TimingModel",
    "Experiment",
    "EventRecord",
    "EventTable",
    "RunResult",
    "simulate_event",
    "simulate_events",
    "run_simulation",
    "worker_partition",
    "write_events_csv",
    "write_histogram_csv",
    "read_events_csv",
    "read_histogram_csv",
    "read_metadata",
]

DEFAULT_EVENT_CAP = 10**7
_CHUNK = 1 << 20


@dataclass(frozen=True)
class TimingModel:
    """Probability that the idler is registered before the signal."""

    p_d1_first: float = 0.5
    intensity_weighted: bool = True

    def __post_init__(self):
        p = self.p_d1_first
        if not (isinstance(p, (int, float)) and math.isfinite(p) and 0.0 <= p <= 1.0):
            raise InvalidConfig(f"p_d1_first must be a probability in [0, 1], got {p!r}")


@dataclass(frozen=True)
class Experiment:
    """Everything that defines one simulated apparatus."""

    optics: OpticalConfig
    screen: ScreenConfig
    detector: DetectorSpec
    collapse: CollapseModel
    timing: TimingModel = TimingModel()

    @cached_property
    def interference_pdf(self) -> PatternPdf:
        return normalize_pdf(PatternKind.family(1.0), self.optics, self.screen)

    @cached_property
    def envelope_pdf(self) -> PatternPdf:
        return normalize_pdf(PatternKind.family(0.0), self.optics, self.screen)

    @cached_property
    def idler_first_fraction(self) -> float:
        """Fraction of *collapsed* events whose idler is registered first."""
        p = self.timing.p_d1_first
        if not self.timing.intensity_weighted or p in (0.0, 1.0):
            return p
        # raw masses: Family(1) tabulates sinc^2 (1 + cos 2t) = 2 sinc^2 cos^2
        w_env = p * self.envelope_pdf.raw_mass
        w_int = (1.0 - p) * 0.5 * self.interference_pdf.raw_mass
        return w_env / (w_env + w_int)

    @property
    def effective_visibility(self) -> float:
        """Visibility of the aggregate pattern of an always-collapsing run."""
        p = self.timing.p_d1_first
        if self.timing.intensity_weighted:
            return (1.0 - p) / (1.0 + p)
        return math.nan

    def as_dict(self) -> dict:
        d = {
            "optics": asdict(self.optics),
            "screen": asdict(self.screen),
            "detector": {k: v for k, v in asdict(self.detector).items() if k != "branches"},
            "branches": asdict(self.detector.branches),
            "collapse": asdict(self.collapse),
            "timing": asdict(self.timing),
        }
        d["detector"]["kind"] = self.detector.kind.value
        return d

    @cached_property
    def digest(self) -> str:
        text = json.dumps(self.as_dict(), sort_keys=True, default=repr)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class EventRecord:
    event_index: int
    branch: Branch
    d1_first: bool
    collapsed: bool
    x_position: float


@dataclass(frozen=True, eq=False)
class EventTable:
    """Column store of events; ``table[i]`` gives an :class:`EventRecord`."""

    event_index: np.ndarray
    branch: np.ndarray
    d1_first: np.ndarray
    collapsed: np.ndarray
    x_position: np.ndarray

    def __len__(self):
        return int(self.event_index.size)

    def __getitem__(self, i) -> EventRecord:
        return EventRecord(
            int(self.event_index[i]),
            Branch(int(self.branch[i])),
            bool(self.d1_first[i]),
            bool(self.collapsed[i]),
            float(self.x_position[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __eq__(self, other):
        if not isinstance(other, EventTable):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("event_index", "branch", "d1_first", "collapsed", "x_position")
        )

    def head(self, n: int) -> "EventTable":
        return EventTable(*(getattr(self, f)[:n] for f in ("event_index", "branch", "d1_first", "collapsed", "x_position")))

    @classmethod
    def concat(cls, tables) -> "EventTable":
        tables = list(tables)
        if not tables:
            return cls.empty()
        fields = ("event_index", "branch", "d1_first", "collapsed", "x_position")
        return cls(*(np.concatenate([getattr(t, f) for t in tables]) for f in fields))

    @classmethod
    def empty(cls) -> "EventTable":
        return cls(
            np.empty(0, np.int64), np.empty(0, np.int8), np.empty(0, bool), np.empty(0, bool), np.empty(0, float)
        )


def simulate_events(exp: Experiment, n: int, rng: np.random.Generator, start_index: int = 0) -> EventTable:
    """Simulate ``n`` consecutive events from one RNG stream."""
    branch = sample_branches(exp.detector.branches, rng, n)
    p_collapse = collapse_probability(environment_counts(exp.detector, branch), exp.collapse)
    collapsed = rng.random(n) < p_collapse
    # order only shapes the pattern of collapsed events; weight those alone
    d1_first = rng.random(n) < np.where(collapsed, exp.idler_first_fraction, exp.timing.p_d1_first)
    use_envelope = collapsed & d1_first
    u = rng.random(n)
    env, intf = exp.envelope_pdf, exp.interference_pdf
    x = np.where(use_envelope, np.interp(u, env.cdf, env.x), np.interp(u, intf.cdf, intf.x))
    index = np.arange(start_index, start_index + n, dtype=np.int64)
    return EventTable(index, branch, d1_first, collapsed, x)


def simulate_event(exp: Experiment, rng: np.random.Generator, event_index: int = 0) -> EventRecord:
    return simulate_events(exp, 1, rng, start_index=event_index)[0]


@dataclass(frozen=True, eq=False)
class RunResult:
    events: EventTable
    histogram: np.ndarray
    n_events: int
    seed: int
    n_workers: int
    config_digest: str
    screen: ScreenConfig = field(repr=False)
    worker_histograms: tuple = field(default=(), repr=False)

    @property
    def positions(self) -> np.ndarray:
        return self.events.x_position

    @property
    def bin_edges(self) -> np.ndarray:
        return self.screen.bin_edges

    def metadata(self) -> dict:
        return {
            "tool": "collapse_probe",
            "version": __version__,
            "seed": self.seed,
            "n_events": self.n_events,
            "n_workers": self.n_workers,
            "events_recorded": len(self.events),
            "config_digest": self.config_digest,
        }


def worker_partition(n_events: int, n_workers: int) -> list[tuple[int, int]]:
    """Contiguous ``(start, count)`` slices; earlier workers take the remainder."""
    base, extra = divmod(n_events, n_workers)
    out, start = [], 0
    for w in range(n_workers):
        count = base + (1 if w < extra else 0)
        out.append((start, count))
        start += count
    return out


def _run_worker(exp: Experiment, seed_seq: np.random.SeedSequence, start: int, count: int, event_cap: int):
    rng = np.random.default_rng(seed_seq)
    hist = np.zeros(exp.screen.n_bins, dtype=np.int64)
    kept = []
    done = 0
    while done < count:
        m = min(_CHUNK, count - done)
        table = simulate_events(exp, m, rng, start_index=start + done)
        hist += exp.screen.histogram(table.x_position)
        keep = int(np.clip(event_cap - (start + done), 0, m))
        if keep:
            kept.append(table.head(keep))
        done += m
    return hist, EventTable.concat(kept)


def run_simulation(
    exp: Experiment,
    n_events: int,
    seed: int,
    n_workers: int = 1,
    event_cap: int = DEFAULT_EVENT_CAP,
) -> RunResult:
    """Simulate ``n_events`` pump photons split over ``n_workers`` RNG streams.

    Worker ``w`` simulates the ``w``-th slice of :func:`worker_partition`
    from ``SeedSequence(seed).spawn(n_workers)[w]``, so the result depends
    only on ``(seed, n_workers)``.  Only events with index below
    ``event_cap`` are kept individually; all of them enter the histogram.
    """
    for name, value, lo in (("n_events", n_events, 1), ("n_workers", n_workers, 1), ("event_cap", event_cap, 0)):
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < lo:
            raise InvalidConfig(f"{name} must be an integer ≥ {lo}, got {value!r}")
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or seed < 0:
        raise InvalidConfig(f"seed must be a non-negative integer, got {seed!r}")
    # build shared tables before workers start
    exp.interference_pdf, exp.envelope_pdf, exp.idler_first_fraction  # noqa: B018

    streams = np.random.SeedSequence(int(seed)).spawn(n_workers)
    jobs = [(exp, streams[w], start, count, event_cap) for w, (start, count) in enumerate(worker_partition(n_events, n_workers))]
    if n_workers == 1:
        parts = [_run_worker(*jobs[0])]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(lambda job: _run_worker(*job), jobs))

    worker_hists = tuple(h for h, _ in parts)
    histogram = np.sum(worker_hists, axis=0)
    events = EventTable.concat(t for _, t in parts)
    return RunResult(
        events=events,
        histogram=histogram,
        n_events=int(n_events),
        seed=int(seed),
        n_workers=int(n_workers),
        config_digest=exp.digest,
        screen=exp.screen,
        worker_histograms=worker_hists,
    )


# --- text I/O -------------------------------------------------------------

EVENTS_HEADER = "event_index,branch,d1_first,collapsed,x_position_m"
HISTOGRAM_HEADER = "bin_center_m,count"


def _meta_lines(meta: dict) -> list[str]:
    return [f"# {k}={v}" for k, v in meta.items()]


def write_events_csv(path, result: RunResult, extra_meta: dict | None = None) -> None:
    ev = result.events
    names = np.array([b.name.lower() for b in Branch])[ev.branch.astype(np.int64)]
    flags = np.array(["0", "1"])
    rows = [
        f"{i},{b},{d},{c},{x:.17g}"
        for i, b, d, c, x in zip(
            ev.event_index.tolist(),
            names.tolist(),
            flags[ev.d1_first.astype(np.int64)].tolist(),
            flags[ev.collapsed.astype(np.int64)].tolist(),
            ev.x_position.tolist(),
        )
    ]
    meta = {**result.metadata(), **(extra_meta or {})}
    lines = _meta_lines(meta) + [EVENTS_HEADER] + rows
    Path(path).write_text("\n".join(lines) + "\n")


def write_histogram_csv(path, result: RunResult, extra_meta: dict | None = None) -> None:
    meta = {**result.metadata(), "x_max_m": repr(result.screen.x_max), "n_bins": result.screen.n_bins, **(extra_meta or {})}
    rows = [f"{c:.17g},{n}" for c, n in zip(result.screen.bin_centers.tolist(), result.histogram.tolist())]
    Path(path).write_text("\n".join(_meta_lines(meta) + [HISTOGRAM_HEADER] + rows) + "\n")


def read_metadata(path) -> dict:
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if "=" in body:
                key, value = body.split("=", 1)
                meta[key.strip()] = value.strip()
    return meta


def _data_lines(path):
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValueError(f"{path}: no header line found")
    return lines[0], lines[1:]


def read_events_csv(path) -> EventTable:
    header, rows = _data_lines(path)
    if header.strip() != EVENTS_HEADER:
        raise ValueError(f"{path}: expected header {EVENTS_HEADER!r}, got {header!r}")
    n = len(rows)
    index = np.empty(n, np.int64)
    branch = np.empty(n, np.int8)
    d1 = np.empty(n, bool)
    col = np.empty(n, bool)
    x = np.empty(n, float)
    for k, row in enumerate(rows):
        try:
            i, b, d, c, xs = row.split(",")
            index[k] = int(i)
            branch[k] = Branch.parse(b)
            d1[k] = d.strip() == "1"
            col[k] = c.strip() == "1"
            x[k] = float(xs)
        except ValueError as exc:
            raise ValueError(f"{path}: bad event row {k + 1}: {row!r} ({exc})") from None
    return EventTable(index, branch, d1, col, x)


def read_histogram_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(bin_centers, counts)``."""
    header, rows = _data_lines(path)
    if header.strip() != HISTOGRAM_HEADER:
        raise ValueError(f"{path}: expected header {HISTOGRAM_HEADER!r}, got {header!r}")
    data = np.array([r.split(",") for r in rows], dtype=float).reshape(-1, 2)
    counts = data[:, 1]
    if np.any(counts < 0) or np.any(counts != np.round(counts)):
        raise ValueError(f"{path}: histogram counts must be non-negative integers")
    return data[:, 0], counts.astype(np.int64)
