"""Quintic-spline reference trajectories, curvature and regime classification."""

import bisect
import enum
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import polynomial as poly

logger = logging.getLogger(__name__)

EPS_SPEED = 1e-6
SPAN_TOLERANCE_S = 1e-9
KNOT_TOLERANCE_S = 1e-12
SOLVE_RESIDUAL_LIMIT = 1e-10
DEFAULT_SAMPLE_RATE_HZ = 50.0


class DegenerateSegmentError(ValueError):
    """Raised when a segment has no positive duration."""


class OutOfSpanError(ValueError):
    """Raised when a trajectory is sampled outside its time span."""


class UndefinedCurvatureError(ValueError):
    """Raised when curvature is requested at (near) zero speed."""


class Regime(enum.Enum):
    """Closed-loop response regime along the path."""

    ANTIFRAGILE = "Antifragile"
    FRAGILE = "Fragile"


@dataclass(frozen=True)
class Waypoint:
    """Planar waypoint with arrival time and an optional heading."""

    x: float
    y: float
    t: float
    heading: Optional[float] = None


@dataclass(frozen=True)
class KnotState:
    """Position, velocity and acceleration of both axes at one time."""

    t: float
    x: float
    y: float
    vx: float = 0.0
    vy: float = 0.0
    ax: float = 0.0
    ay: float = 0.0


@dataclass(frozen=True)
class QuinticSegment:
    """Degree-5 polynomial per axis in local time tau = t - t_start.

    Coefficients are stored in ascending powers of tau.
    """

    coeffs_x: Tuple[float, ...]
    coeffs_y: Tuple[float, ...]
    t_start: float
    t_end: float

    def derivatives(self, t: float, order: int = 3) -> List[Tuple[float, float]]:
        """Return [(x, y), (x', y'), ...] up to the given derivative order."""
        tau = t - self.t_start
        cx = np.asarray(self.coeffs_x)
        cy = np.asarray(self.coeffs_y)
        out = []
        for m in range(order + 1):
            out.append((
                float(poly.polyval(tau, poly.polyder(cx, m) if m else cx)),
                float(poly.polyval(tau, poly.polyder(cy, m) if m else cy)),
            ))
        return out


@dataclass(frozen=True)
class ReferenceSample:
    """Desired pose, velocities, accelerations and curvature at time t."""

    t: float
    x: float
    y: float
    phi: float
    v: float
    omega: float
    a_v: float
    a_omega: float
    curvature: float


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Time-contiguous chain of quintic segments."""

    segments: Tuple[QuinticSegment, ...]
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("trajectory needs at least one segment")
        for i in range(len(self.segments) - 1):
            gap = self.segments[i + 1].t_start - self.segments[i].t_end
            if abs(gap) > KNOT_TOLERANCE_S:
                raise ValueError(
                    f"segments {i} and {i + 1} are not contiguous (gap {gap} s)"
                )

    @property
    def t_start(self) -> float:
        return self.segments[0].t_start

    @property
    def t_end(self) -> float:
        return self.segments[-1].t_end

    def segment_at(self, t: float) -> QuinticSegment:
        """Segment covering t; a knot time belongs to the following segment."""
        starts = [seg.t_start for seg in self.segments]
        idx = bisect.bisect_right(starts, t) - 1
        return self.segments[min(max(idx, 0), len(self.segments) - 1)]


#########################################################
# Segment fitting
#########################################################

def _boundary_matrix(duration: float) -> np.ndarray:
    T = duration
    return np.array([
        [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 2.0, 0.0, 0.0, 0.0],
        [1.0, T, T ** 2, T ** 3, T ** 4, T ** 5],
        [0.0, 1.0, 2 * T, 3 * T ** 2, 4 * T ** 3, 5 * T ** 4],
        [0.0, 0.0, 2.0, 6 * T, 12 * T ** 2, 20 * T ** 3],
    ])


def fit_quintic(start: KnotState, end: KnotState) -> QuinticSegment:
    """Fit the unique quintic per axis matching both boundary states.

    Args:
        start: Position, velocity and acceleration at the segment start
        end: Position, velocity and acceleration at the segment end

    Returns:
        QuinticSegment spanning [start.t, end.t]

    Raises:
        DegenerateSegmentError: If end.t <= start.t
    """
    duration = end.t - start.t
    if not duration > 0:
        raise DegenerateSegmentError(
            f"segment must have positive duration, got t_start={start.t}, t_end={end.t}"
        )
    values = (start.x, start.y, start.vx, start.vy, start.ax, start.ay,
              end.x, end.y, end.vx, end.vy, end.ax, end.ay)
    if not all(math.isfinite(v) for v in values):
        raise ValueError(f"boundary values must be finite: {values}")

    A = _boundary_matrix(duration)
    rhs = np.array([
        [start.x, start.y],
        [start.vx, start.vy],
        [start.ax, start.ay],
        [end.x, end.y],
        [end.vx, end.vy],
        [end.ax, end.ay],
    ])
    coeffs = np.linalg.solve(A, rhs)
    residual = float(np.max(np.abs(A @ coeffs - rhs)))
    scale = max(1.0, float(np.max(np.abs(rhs))))
    if residual > SOLVE_RESIDUAL_LIMIT * scale:
        logger.warning("quintic solve residual %.3g on [%s, %s]", residual, start.t, end.t)
    return QuinticSegment(
        coeffs_x=tuple(float(c) for c in coeffs[:, 0]),
        coeffs_y=tuple(float(c) for c in coeffs[:, 1]),
        t_start=float(start.t),
        t_end=float(end.t),
    )


def _chord_velocity(first: Waypoint, second: Waypoint, knot: Waypoint,
                    speed: float) -> Tuple[float, float]:
    """Velocity at an end knot: chord speed along the knot heading or the chord."""
    if knot.heading is not None:
        heading = knot.heading
    else:
        heading = math.atan2(second.y - first.y, second.x - first.x)
    return speed * math.cos(heading), speed * math.sin(heading)


def _knot_velocities(waypoints: Sequence[Waypoint], rolling_start: bool = False,
                     rolling_end: bool = False) -> List[Tuple[float, float]]:
    n = len(waypoints)
    speeds = []
    for a, b in zip(waypoints[:-1], waypoints[1:]):
        speeds.append(math.hypot(b.x - a.x, b.y - a.y) / (b.t - a.t))

    velocities = [(0.0, 0.0)]
    if rolling_start:
        velocities[0] = _chord_velocity(waypoints[0], waypoints[1], waypoints[0], speeds[0])
    for i in range(1, n - 1):
        prev, cur, nxt = waypoints[i - 1], waypoints[i], waypoints[i + 1]
        if cur.heading is not None:
            ux, uy = math.cos(cur.heading), math.sin(cur.heading)
        else:
            dx, dy = nxt.x - prev.x, nxt.y - prev.y
            norm = math.hypot(dx, dy)
            ux, uy = (dx / norm, dy / norm) if norm > 0 else (0.0, 0.0)
        magnitude = 0.5 * (speeds[i - 1] + speeds[i])
        velocities.append((magnitude * ux, magnitude * uy))
    if rolling_end:
        velocities.append(_chord_velocity(waypoints[-2], waypoints[-1], waypoints[-1], speeds[-1]))
    else:
        velocities.append((0.0, 0.0))
    return velocities


def build_trajectory(
    waypoints: Sequence[Waypoint],
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ,
    rolling_start: bool = False,
    rolling_end: bool = False,
) -> ReferenceTrajectory:
    """Plan a C2 quintic spline through timed waypoints.

    The path starts at rest unless rolling_start is set, in which case the
    first knot moves at the first chord speed along the first waypoint
    heading (or the first chord). rolling_end does the same for the last
    knot with the last chord, otherwise the path stops at rest.

    Interior knot velocities point along the waypoint heading (or the
    neighbour chord) with the mean speed of the two adjacent chords;
    interior knot accelerations are central differences of those velocities.

    Raises:
        ValueError: If fewer than two waypoints are given or times are not
            strictly increasing
    """
    if len(waypoints) < 2:
        raise ValueError(f"need at least 2 waypoints, got {len(waypoints)}")
    for i in range(len(waypoints) - 1):
        if not waypoints[i + 1].t > waypoints[i].t:
            raise ValueError(
                f"waypoint times must increase strictly: "
                f"t[{i}]={waypoints[i].t}, t[{i + 1}]={waypoints[i + 1].t}"
            )

    velocities = _knot_velocities(waypoints, rolling_start, rolling_end)
    accelerations = [(0.0, 0.0)]
    for i in range(1, len(waypoints) - 1):
        span = waypoints[i + 1].t - waypoints[i - 1].t
        accelerations.append((
            (velocities[i + 1][0] - velocities[i - 1][0]) / span,
            (velocities[i + 1][1] - velocities[i - 1][1]) / span,
        ))
    accelerations.append((0.0, 0.0))

    knots = [
        KnotState(t=w.t, x=w.x, y=w.y, vx=v[0], vy=v[1], ax=a[0], ay=a[1])
        for w, v, a in zip(waypoints, velocities, accelerations)
    ]
    segments = tuple(fit_quintic(a, b) for a, b in zip(knots[:-1], knots[1:]))
    logger.debug("planned %d segments over [%s, %s] s",
                 len(segments), waypoints[0].t, waypoints[-1].t)
    return ReferenceTrajectory(segments=segments, sample_rate_hz=sample_rate_hz)


#########################################################
# Sampling
#########################################################

def curvature(xd1: float, yd1: float, xd2: float, yd2: float,
              eps_speed: float = EPS_SPEED) -> float:
    """Signed curvature (x' y'' - x'' y') / (x'^2 + y'^2)^(3/2).

    Raises:
        UndefinedCurvatureError: If the speed is at or below eps_speed
    """
    speed_sq = xd1 * xd1 + yd1 * yd1
    if math.sqrt(speed_sq) <= eps_speed:
        raise UndefinedCurvatureError(
            f"curvature undefined at speed {math.sqrt(speed_sq)} <= {eps_speed}"
        )
    return (xd1 * yd2 - xd2 * yd1) / speed_sq ** 1.5


def classify_regime(k: float) -> Regime:
    """Negative curvature is antifragile; zero and positive are fragile."""
    if not math.isfinite(k):
        raise ValueError(f"curvature must be finite, got {k}")
    return Regime.ANTIFRAGILE if k < 0 else Regime.FRAGILE


def _rest_heading(derivs: List[Tuple[float, float]]) -> float:
    # At rest the heading follows the first non-vanishing higher derivative
    for dx, dy in derivs[2:]:
        if math.hypot(dx, dy) > EPS_SPEED:
            return math.atan2(dy, dx)
    return 0.0


def sample(traj: ReferenceTrajectory, t: float) -> ReferenceSample:
    """Evaluate the reference and its derivatives analytically at time t.

    Raises:
        OutOfSpanError: If t lies outside the trajectory span
    """
    if t < traj.t_start - SPAN_TOLERANCE_S or t > traj.t_end + SPAN_TOLERANCE_S:
        raise OutOfSpanError(
            f"t={t} outside trajectory span [{traj.t_start}, {traj.t_end}]"
        )
    seg = traj.segment_at(t)
    derivs = seg.derivatives(t, order=3)
    (x, y), (xd1, yd1), (xd2, yd2), (xd3, yd3) = derivs
    speed_sq = xd1 * xd1 + yd1 * yd1
    v = math.sqrt(speed_sq)

    try:
        k = curvature(xd1, yd1, xd2, yd2)
    except UndefinedCurvatureError:
        return ReferenceSample(
            t=t, x=x, y=y, phi=_rest_heading(derivs), v=v, omega=0.0,
            a_v=math.hypot(xd2, yd2), a_omega=0.0, curvature=0.0,
        )

    cross = xd1 * yd2 - xd2 * yd1
    dot = xd1 * xd2 + yd1 * yd2
    a_omega = (xd1 * yd3 - xd3 * yd1) / speed_sq - 2.0 * cross * dot / speed_sq ** 2
    return ReferenceSample(
        t=t, x=x, y=y, phi=math.atan2(yd1, xd1), v=v, omega=k * v,
        a_v=dot / v, a_omega=a_omega, curvature=k,
    )


def sample_clamped(traj: ReferenceTrajectory, t: float) -> ReferenceSample:
    """Sample at t, holding the final reference pose beyond the span end."""
    if t <= traj.t_end:
        return sample(traj, max(t, traj.t_start))
    last = sample(traj, traj.t_end)
    return ReferenceSample(
        t=t, x=last.x, y=last.y, phi=last.phi, v=0.0, omega=0.0,
        a_v=0.0, a_omega=0.0, curvature=0.0,
    )


def reference_window(traj: ReferenceTrajectory, t: float, steps: int,
                     dt: float) -> List[ReferenceSample]:
    """Samples at t, t + dt, ..., t + steps*dt, padded with the final sample."""
    return [sample_clamped(traj, t + i * dt) for i in range(steps + 1)]


def regime_series(traj: ReferenceTrajectory,
                  times: Sequence[float]) -> List[Tuple[float, float, Regime]]:
    """Curvature and regime of the reference at each time."""
    out = []
    for t in times:
        ref = sample_clamped(traj, t)
        out.append((t, ref.curvature, classify_regime(ref.curvature)))
    return out
