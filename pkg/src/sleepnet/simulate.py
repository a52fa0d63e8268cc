"""Generative-model engines independent of the closed-form route:

- a renewal-cycle sampler drawing (cluster-head gap, speed) pairs and the
  per-cycle energy bookkeeping,
- a spatial Poisson snapshot sampler with cluster extraction, and
- a time-domain event-driven base-station sleep/wake simulator.

All samplers are pure functions of an RngSpec: identical (master_seed,
stream_id) pairs reproduce bit-identical sample streams, so parallel
streams are independent and individually replayable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .params import Fidelity, ModelParams

__all__ = [
    "RngSpec",
    "Snapshot",
    "ClusterSet",
    "CycleSample",
    "CycleBatch",
    "EnergyEstimate",
    "TimelineReport",
    "WindowTooSmallError",
    "sample_snapshot",
    "extract_clusters",
    "ch_gap_samples",
    "sample_cycle",
    "sample_cycles",
    "estimate_energy",
    "run_timeline",
]

#: Cluster sizes up to this draw every intra-cluster gap explicitly; larger
#: clusters use a moment-matched normal for the gap sum (exact mean and
#: variance, shape error O(1/size)).
DIRECT_SUM_LIMIT = 256

#: Hard cap on processed events in the heterogeneous timeline.
MAX_EVENTS = 100_000_000


class WindowTooSmallError(ValueError):
    """Raised when a spatial window is too short for unbiased statistics."""

    def __init__(self, window_length: float, required: float):
        self.window_length = window_length
        self.required = required
        super().__init__(
            f"window_length={window_length!r} m is too small; "
            f"need at least {required!r} m")


@dataclass(frozen=True)
class RngSpec:
    """Counter-based stream derivation: (master_seed, stream_id) names one
    reproducible, statistically independent random stream."""

    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.master_seed,
                                     spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(seq))


def _as_generator(rng: Union[RngSpec, np.random.Generator]
                  ) -> np.random.Generator:
    if isinstance(rng, RngSpec):
        return rng.generator()
    return rng


@dataclass(frozen=True)
class Snapshot:
    """One instant of road state: sorted vehicle positions on
    [0, window_length] with matching speeds."""

    window_length: float
    positions: np.ndarray
    speeds: np.ndarray

    def __post_init__(self):
        if len(self.positions) != len(self.speeds):
            raise ValueError("positions and speeds must have equal length")

    @property
    def n_vehicles(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class ClusterSet:
    """Maximal runs of vehicles with consecutive gaps <= r0, ordered by
    position.  The head of a cluster is its front-most (largest-coordinate)
    member."""

    head_positions: np.ndarray
    tail_positions: np.ndarray
    member_counts: np.ndarray

    @property
    def n_clusters(self) -> int:
        return len(self.head_positions)

    @property
    def clusters(self) -> list:
        return list(zip(self.head_positions.tolist(),
                        self.tail_positions.tolist(),
                        self.member_counts.tolist()))


class CycleSample:
    """One renewal cycle: the gap x to the next cluster head, the speed v,
    and the derived sleep bookkeeping.

    t_off = max((x - D)/v, 0), t_on = min(x, D)/v, so t_off + t_on is the
    full cycle duration max(x, D)/v.  e_off is the energy saved while off
    (zero if the station never sleeps), and p_save is the cycle-mean power
    saved e_off / (t_off + t_on).
    """

    __slots__ = ("x", "v", "t_off", "t_on", "e_off", "p_save")

    def __init__(self, x: float, v: float, params: ModelParams):
        self.x = x
        self.v = v
        self.t_off = max((x - params.D) / v, 0.0)
        self.t_on = min(x, params.D) / v
        self.e_off = (params.P0 * self.t_off - params.Ec
                      if self.t_off > 0.0 else 0.0)
        self.p_save = self.e_off / (self.t_off + self.t_on)

    def __repr__(self):
        return (f"CycleSample(x={self.x!r}, v={self.v!r}, "
                f"t_off={self.t_off!r}, t_on={self.t_on!r}, "
                f"e_off={self.e_off!r}, p_save={self.p_save!r})")


@dataclass(frozen=True)
class CycleBatch:
    """Vectorized collection of renewal cycles (one array per field)."""

    x: np.ndarray
    v: np.ndarray
    t_off: np.ndarray
    t_on: np.ndarray
    e_off: np.ndarray
    p_save: np.ndarray

    def __len__(self) -> int:
        return len(self.x)

    def __getitem__(self, i: int) -> CycleSample:
        sample = CycleSample.__new__(CycleSample)
        sample.x = float(self.x[i])
        sample.v = float(self.v[i])
        sample.t_off = float(self.t_off[i])
        sample.t_on = float(self.t_on[i])
        sample.e_off = float(self.e_off[i])
        sample.p_save = float(self.p_save[i])
        return sample


def sample_snapshot(params: ModelParams, window_length: float,
                    rng: Union[RngSpec, np.random.Generator]) -> Snapshot:
    """Draw one homogeneous-Poisson road snapshot.

    Vehicle count ~ Poisson(rho * window_length); positions i.i.d. uniform
    then sorted; speeds i.i.d. uniform(a, b).  The window must be at least
    50 * max(1/rho, r0) so edge censoring leaves enough interior.
    """
    required = 50.0 * max(1.0 / params.rho, params.r0)
    if window_length < required:
        raise WindowTooSmallError(window_length, required)
    gen = _as_generator(rng)
    n = int(gen.poisson(params.rho * window_length))
    positions = np.sort(gen.uniform(0.0, window_length, size=n))
    speeds = gen.uniform(params.a, params.b, size=n)
    return Snapshot(window_length, positions, speeds)


def extract_clusters(snapshot: Snapshot, r0: float) -> ClusterSet:
    """Split the sorted snapshot into maximal runs with consecutive gaps
    <= r0 (a gap of exactly r0 joins)."""
    pos = snapshot.positions
    if len(pos) == 0:
        empty = np.empty(0)
        return ClusterSet(empty, empty, np.empty(0, dtype=np.int64))
    breaks = np.flatnonzero(np.diff(pos) > r0)
    starts = np.concatenate(([0], breaks + 1))
    ends = np.concatenate((breaks, [len(pos) - 1]))
    return ClusterSet(head_positions=pos[ends], tail_positions=pos[starts],
                      member_counts=(ends - starts + 1).astype(np.int64))


def ch_gap_samples(clusters: ClusterSet, window_length: float,
                   r0: float) -> np.ndarray:
    """Gaps between consecutive cluster heads, censored at window edges.

    A cluster whose tail is within r0 of the left edge, or whose head is
    within r0 of the right edge, may be truncated by the window; gaps
    touching such a cluster are discarded.
    """
    if clusters.n_clusters < 2:
        return np.empty(0)
    ok = ((clusters.tail_positions >= r0)
          & (clusters.head_positions <= window_length - r0))
    gaps = np.diff(clusters.head_positions)
    return gaps[ok[:-1] & ok[1:]]


def _trunc_exp_stats(rho: float, r0: float) -> tuple:
    """Mean and variance of an exponential(rho) conditioned on <= r0."""
    alpha = rho * r0
    em1 = math.expm1(alpha)
    mean = 1.0 / rho - r0 / em1
    var = 1.0 / rho ** 2 - r0 ** 2 * math.exp(alpha) / em1 ** 2
    return mean, var


def sample_cycles(params: ModelParams, n: int,
                  rng: Union[RngSpec, np.random.Generator],
                  fidelity: Optional[Fidelity] = None) -> CycleBatch:
    """Draw n independent renewal cycles from the generative model.

    Cluster size is geometric with success probability exp(-rho r0); the
    cluster span is the sum of (size - 1) intra-cluster gaps, each an
    exponential(rho) conditioned on <= r0; the head-to-tail jump is
    r0 + exponential(rho); the speed is uniform(a, b).  The `paper`
    fidelity conditions the cluster size on >= 2 vehicles.  Clusters
    larger than DIRECT_SUM_LIMIT use a moment-matched normal for the span
    (clamped to the span's support).
    """
    gen = _as_generator(rng)
    fidelity = Fidelity(fidelity) if fidelity is not None else params.fidelity
    rho, r0 = params.rho, params.r0
    p_head = math.exp(-rho * r0)

    n_gaps = gen.geometric(p_head, size=n) - 1
    if fidelity is Fidelity.PAPER:
        n_gaps += 1

    x0 = np.zeros(n)
    small = n_gaps <= DIRECT_SUM_LIMIT
    direct = small & (n_gaps > 0)
    counts = n_gaps[direct]
    total = int(counts.sum())
    if total:
        q = -math.expm1(-rho * r0)
        u = gen.uniform(size=total)
        gaps = -np.log1p(-u * q) / rho
        offsets = np.concatenate(([0], np.cumsum(counts[:-1])))
        x0[direct] = np.add.reduceat(gaps, offsets)
    big = ~small
    n_big = int(np.count_nonzero(big))
    if n_big:
        k = n_gaps[big].astype(float)
        mean, var = _trunc_exp_stats(rho, r0)
        spans = gen.normal(k * mean, np.sqrt(k * var))
        x0[big] = np.clip(spans, 0.0, k * r0)

    x1 = r0 + gen.exponential(1.0 / rho, size=n)
    x = x0 + x1
    v = gen.uniform(params.a, params.b, size=n)

    t_off = np.maximum((x - params.D) / v, 0.0)
    t_on = np.minimum(x, params.D) / v
    sleeping = t_off > 0.0
    e_off = np.where(sleeping, params.P0 * t_off - params.Ec, 0.0)
    p_save = e_off / (t_off + t_on)
    return CycleBatch(x=x, v=v, t_off=t_off, t_on=t_on,
                      e_off=e_off, p_save=p_save)


def sample_cycle(params: ModelParams,
                 rng: Union[RngSpec, np.random.Generator],
                 fidelity: Optional[Fidelity] = None) -> CycleSample:
    """Draw one renewal cycle (see sample_cycles)."""
    batch = sample_cycles(params, 1, rng, fidelity)
    return batch[0]


@dataclass(frozen=True)
class EnergyEstimate:
    """Monte Carlo estimates of the energy figures, with standard errors.

    expected_sleep_time conditions on cycles that actually sleep and is
    None when no cycle slept.  expected_power_saved is the plain mean of
    the per-cycle power p_save (a mean of ratios); the time-averaged power
    sum(e_off)/sum(t_off + t_on) (a ratio of means) is reported separately,
    as is the sleeping duty fraction sum(t_off)/sum(t_off + t_on).
    """

    n_cycles: int
    expected_gap: float
    expected_gap_se: float
    prob_sleep: float
    prob_sleep_se: float
    expected_sleep_time: Optional[float]
    expected_sleep_time_se: Optional[float]
    expected_power_saved: float
    expected_power_saved_se: float
    time_average_power_saved: float
    duty_cycle: float


def _mean_se(values: np.ndarray) -> tuple:
    n = len(values)
    mean = float(np.mean(values))
    if n < 2:
        return mean, math.inf
    return mean, float(np.std(values, ddof=1) / math.sqrt(n))


def estimate_energy(samples: Union[CycleBatch, Sequence[CycleSample]],
                    params: ModelParams) -> EnergyEstimate:
    """Estimate the energy figures from at least 1000 renewal cycles."""
    if not isinstance(samples, CycleBatch):
        arrays = {field: np.array([getattr(s, field) for s in samples])
                  for field in ("x", "v", "t_off", "t_on", "e_off", "p_save")}
        samples = CycleBatch(**arrays)
    n = len(samples)
    if n < 1000:
        raise ValueError(f"need at least 1000 cycles, got {n}")

    mean_x, se_x = _mean_se(samples.x)
    sleeping = samples.t_off > 0.0
    prob = float(np.count_nonzero(sleeping)) / n
    prob_se = math.sqrt(prob * (1.0 - prob) / n)
    if np.any(sleeping):
        mean_toff, se_toff = _mean_se(samples.t_off[sleeping])
    else:
        mean_toff = se_toff = None
    mean_psave, se_psave = _mean_se(samples.p_save)
    cycle_time = float(np.sum(samples.t_off) + np.sum(samples.t_on))
    time_avg = float(np.sum(samples.e_off)) / cycle_time
    duty = float(np.sum(samples.t_off)) / cycle_time
    return EnergyEstimate(
        n_cycles=n,
        expected_gap=mean_x, expected_gap_se=se_x,
        prob_sleep=prob, prob_sleep_se=prob_se,
        expected_sleep_time=mean_toff, expected_sleep_time_se=se_toff,
        expected_power_saved=mean_psave, expected_power_saved_se=se_psave,
        time_average_power_saved=time_avg, duty_cycle=duty)


@dataclass(frozen=True)
class TimelineReport:
    """Outcome of a time-domain base-station simulation.

    energy_saved = sleep_time * P0 - (n_transitions / 2) * Ec, charging
    one switching cost per off/on pair; mean_power_saved is the time
    average energy_saved / sim_duration.  cycle_mean_power_saved is the
    mean over completed head-to-head cycles of the per-cycle power (the
    mean-of-ratios estimand) and is None when no full cycle was observed.
    complete is False when the event cap stopped the run early, in which
    case processed_time is the simulated time actually covered.
    """

    sim_duration: float
    sleep_fraction: float
    n_transitions: int
    energy_saved: float
    mean_power_saved: float
    n_cycles: int
    cycle_mean_power_saved: Optional[float]
    cycle_mean_power_se: Optional[float]
    complete: bool = True
    processed_time: Optional[float] = None


def _merge_intervals(starts: np.ndarray, ends: np.ndarray) -> tuple:
    """Merge sorted, possibly overlapping [start, end] intervals."""
    if len(starts) == 0:
        return starts, ends
    new_run = np.concatenate(([True], starts[1:] > ends[:-1]))
    merged_starts = starts[new_run]
    merged_ends = np.maximum.reduceat(ends, np.flatnonzero(new_run))
    return merged_starts, merged_ends


def _common_timeline(params: ModelParams, duration: float,
                     window_length: float, v: float,
                     gen: np.random.Generator) -> TimelineReport:
    rho, r0, D = params.rho, params.r0, params.D
    required = v * duration + D + 2.0 * r0
    if window_length < required:
        raise WindowTooSmallError(window_length, required)
    snapshot = sample_snapshot(params, window_length, gen)
    clusters = extract_clusters(snapshot, r0)
    center = window_length
    entry_edge = center - D / 2.0

    heads = clusters.head_positions[::-1]          # descending position
    t_in = (entry_edge - heads) / v                # ascending arrival time
    t_out = t_in + D / v
    keep = (t_out > 0.0) & (t_in < duration)
    starts, ends = _merge_intervals(t_in[keep], t_out[keep])
    starts = np.clip(starts, 0.0, duration)
    ends = np.clip(ends, 0.0, duration)

    active_time = float(np.sum(ends - starts))
    sleep_time = duration - active_time
    n_transitions = int(np.count_nonzero((starts > 0.0) & (starts < duration))
                        + np.count_nonzero((ends > 0.0) & (ends < duration)))
    energy_saved = sleep_time * params.P0 - (n_transitions / 2.0) * params.Ec

    full = (t_in >= 0.0) & (t_in <= duration)
    cycle_gap = np.diff(heads[full])               # negative steps
    gaps = -cycle_gap
    n_cycles = len(gaps)
    if n_cycles:
        sleeping = gaps > D
        e_off = np.where(sleeping,
                         params.P0 * (gaps - D) / v - params.Ec, 0.0)
        p_save = e_off * v / gaps
        cycle_mean, cycle_se = _mean_se(p_save)
    else:
        cycle_mean = cycle_se = None
    return TimelineReport(
        sim_duration=duration,
        sleep_fraction=sleep_time / duration,
        n_transitions=n_transitions,
        energy_saved=energy_saved,
        mean_power_saved=energy_saved / duration,
        n_cycles=n_cycles,
        cycle_mean_power_saved=cycle_mean,
        cycle_mean_power_se=cycle_se)


def _heterogeneous_state(positions: np.ndarray, speeds: np.ndarray,
                         t: float, r0: float, lo: float, hi: float) -> tuple:
    """Sorted positions at time t, cluster-head flags, and activity."""
    pos = positions + speeds * t
    order = np.argsort(pos, kind="stable")
    pos_sorted = pos[order]
    spd_sorted = speeds[order]
    if len(pos_sorted) == 0:
        return pos_sorted, spd_sorted, np.zeros(0, dtype=bool), False
    gaps_next = np.diff(pos_sorted)
    is_head = np.concatenate((gaps_next > r0, [True]))
    head_pos = pos_sorted[is_head]
    active = bool(np.any((head_pos >= lo) & (head_pos <= hi)))
    return pos_sorted, spd_sorted, is_head, active


def _next_event_time(pos: np.ndarray, spd: np.ndarray, is_head: np.ndarray,
                     t: float, r0: float, lo: float, hi: float) -> float:
    """Earliest future instant where the state description can change:
    an adjacent-pair gap reaches r0 or 0, or a cluster head reaches a
    coverage edge."""
    eps = 1e-9
    best = math.inf
    if len(pos) >= 2:
        gap = np.diff(pos)
        dv = np.diff(spd)
        closing = dv < 0.0
        opening = dv > 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            for target, mask in (((r0 - gap), closing | opening),
                                 ((-gap), closing)):
                dt = np.where(mask, target / dv, math.inf)
                dt = dt[np.isfinite(dt) & (dt > eps)]
                if len(dt):
                    best = min(best, float(dt.min()))
    head_pos = pos[is_head]
    head_spd = spd[is_head]
    for edge in (lo, hi):
        with np.errstate(divide="ignore", invalid="ignore"):
            dt = (edge - head_pos) / head_spd
        dt = dt[np.isfinite(dt) & (dt > eps)]
        if len(dt):
            best = min(best, float(dt.min()))
    return t + best


def _heterogeneous_timeline(params: ModelParams, duration: float,
                            window_length: float,
                            gen: np.random.Generator) -> TimelineReport:
    rho, r0, D = params.rho, params.r0, params.D
    required = params.b * duration + D + 2.0 * r0
    if window_length < required:
        raise WindowTooSmallError(window_length, required)
    snapshot = sample_snapshot(params, window_length, gen)
    positions, speeds = snapshot.positions, snapshot.speeds
    center = window_length
    lo, hi = center - D / 2.0, center + D / 2.0

    t = 0.0
    sleep_time = 0.0
    n_transitions = 0
    n_events = 0
    complete = True
    _, _, is_head, active = _heterogeneous_state(
        positions, speeds, t, r0, lo, hi)
    while t < duration:
        pos, spd, is_head, new_active = _heterogeneous_state(
            positions, speeds, t, r0, lo, hi)
        if new_active != active:
            n_transitions += 1
            active = new_active
        t_next = min(_next_event_time(pos, spd, is_head, t, r0, lo, hi),
                     duration)
        if not active:
            sleep_time += t_next - t
        t = t_next
        n_events += 1
        if n_events > MAX_EVENTS and t < duration:
            complete = False
            break
    processed = t
    energy_saved = (sleep_time * params.P0
                    - (n_transitions / 2.0) * params.Ec)
    return TimelineReport(
        sim_duration=duration,
        sleep_fraction=sleep_time / processed if processed > 0.0 else 0.0,
        n_transitions=n_transitions,
        energy_saved=energy_saved,
        mean_power_saved=energy_saved / processed if processed > 0.0 else 0.0,
        n_cycles=0,
        cycle_mean_power_saved=None,
        cycle_mean_power_se=None,
        complete=complete,
        processed_time=processed)


def run_timeline(params: ModelParams, duration: float, window_length: float,
                 speed_mode: str, rng: Union[RngSpec, np.random.Generator],
                 v: Optional[float] = None) -> TimelineReport:
    """Simulate one base station with coverage of width D centered on it.

    The station is active exactly while some cluster head is inside its
    coverage; Ec is charged once per off/on switching pair.  In `common`
    mode every vehicle moves at speed v, clusters are rigid, and state
    transitions happen exactly when cluster heads cross coverage edges.
    In `heterogeneous` mode each vehicle keeps its own sampled speed and
    cluster membership is recomputed at every event (gap crossings and
    edge crossings); the run stops early with complete=False if it exceeds
    MAX_EVENTS events.
    """
    if duration <= 0.0:
        raise ValueError("duration must be positive")
    gen = _as_generator(rng)
    if speed_mode == "common":
        if v is None or v <= 0.0:
            raise ValueError("common mode requires a positive speed v")
        return _common_timeline(params, duration, window_length, v, gen)
    if speed_mode == "heterogeneous":
        return _heterogeneous_timeline(params, duration, window_length, gen)
    raise ValueError(f"unknown speed_mode {speed_mode!r}; "
                     "expected 'common' or 'heterogeneous'")
