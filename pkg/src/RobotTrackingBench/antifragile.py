"""Variable-structure antifragile tracking controller.

The controller drives two coupled sliding manifolds to zero,

    s1 = x_e' + lambda1 x_e
    s2 = y_e' + lambda2 y_e + lambda0 sgn(y_e) phi_e

with the reaching law s' = -Q s - P sat(s). The linear channel outputs an
acceleration that is integrated into v_c; the angular channel outputs
omega_c around the omega_d feedforward.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

from .planner import ReferenceSample
from .tracking import (
    ControlCommand, Controller, RateFilter, TrackingError, guard_denominator,
    make_command, measure_tracking, sat, sgn
)
from .vehicle import DEFAULT_ROBOT, RobotParams, RobotState

logger = logging.getLogger(__name__)

LAMBDA0 = 0.1
LAMBDA1 = 0.75
LAMBDA2 = 1.5
Q_GAIN = 2.0
P_GAIN = 0.1
SAT_WIDTH = 0.05
SWITCHING_MODES = ("sat", "sgn")
# Heading errors below this do not trigger the lambda0 condition flag
LAMBDA0_CHECK_MIN_PHI = 1e-3


class InvalidGainError(ValueError):
    """Raised when a gain set violates its stability conditions."""


@dataclass(frozen=True)
class AntifragileGains:
    """Manifold coefficients, reaching-law gains and boundary-layer width."""

    lambda0: float = LAMBDA0
    lambda1: float = LAMBDA1
    lambda2: float = LAMBDA2
    q1: float = Q_GAIN
    q2: float = Q_GAIN
    p1: float = P_GAIN
    p2: float = P_GAIN
    sat_width: float = SAT_WIDTH
    switching: str = "sat"

    def __post_init__(self) -> None:
        for name in ("lambda0", "lambda1", "lambda2"):
            value = getattr(self, name)
            if not value > 0:
                raise InvalidGainError(f"{name} must be > 0 (lambda > 0), got {value}")
        for name in ("q1", "q2", "p1", "p2"):
            value = getattr(self, name)
            if not value >= 0:
                raise InvalidGainError(
                    f"{name} must be >= 0 so that Q_i P_i >= 0, got {value}"
                )
        if not self.sat_width > 0:
            raise InvalidGainError(f"sat_width must be > 0, got {self.sat_width}")
        if self.switching not in SWITCHING_MODES:
            raise InvalidGainError(
                f"switching must be one of {SWITCHING_MODES}, got {self.switching!r}"
            )

    def switch(self, s: float) -> float:
        """Switching term: sat(s) by default, sgn(s) when selected."""
        return sgn(s) if self.switching == "sgn" else sat(s, self.sat_width)


@dataclass
class SlidingState:
    """Controller memory: last manifold values, velocity integrator, rate filters."""

    s1: float = 0.0
    s2: float = 0.0
    v_c: Optional[float] = None
    last_error: Optional[TrackingError] = None
    v_rate: RateFilter = field(default_factory=RateFilter)
    phi_rate: RateFilter = field(default_factory=lambda: RateFilter(angular=True))


def sliding_values(err: TrackingError, gains: AntifragileGains) -> Tuple[float, float]:
    """Evaluate both sliding manifolds for an error and its rates."""
    s1 = err.dx_e + gains.lambda1 * err.x_e
    s2 = err.dy_e + gains.lambda2 * err.y_e + gains.lambda0 * sgn(err.y_e) * err.phi_e
    return s1, s2


def reaching_time(p: float, q: float, s0: float) -> float:
    """Finite time for s' = -p s - q sgn(s) to reach s = 0 from s0.

    Raises:
        InvalidGainError: If p or q is not positive
    """
    if not (p > 0 and q > 0):
        raise InvalidGainError(f"reaching-law gains must be > 0, got p={p}, q={q}")
    return math.log((p * abs(s0) + q) / q) / p


def lyapunov_value(s1: float, s2: float) -> float:
    """V = 1/2 s^T s."""
    return 0.5 * (s1 * s1 + s2 * s2)


def lyapunov_rate(s1: float, s2: float, gains: AntifragileGains) -> float:
    """V' = -Q1 s1^2 - Q2 s2^2 - P1 |s1| - P2 |s2| along the reaching law."""
    return (-gains.q1 * s1 * s1 - gains.q2 * s2 * s2
            - gains.p1 * abs(s1) - gains.p2 * abs(s2))


def antifragile_control(
    state: RobotState,
    ref: ReferenceSample,
    mem: SlidingState,
    gains: AntifragileGains,
    dt: float,
    params: RobotParams = DEFAULT_ROBOT,
) -> ControlCommand:
    """Compute the antifragile command and update the controller memory.

    Args:
        state: Fed-back robot state (pose and measured v, omega)
        ref: Current reference sample
        mem: Controller memory, updated in place
        gains: Manifold and reaching-law gains
        dt: Outer-loop period in seconds
        params: Robot geometry for the wheel setpoints

    Returns:
        ControlCommand; near-singular denominators are clamped to
        +/-1e-3 and reported in its flags
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    err = measure_tracking(state, ref)
    s1, s2 = sliding_values(err, gains)
    v_r = state.v
    dv_r = mem.v_rate.update(v_r, dt)
    dphi_e = mem.phi_rate.update(err.phi_e, dt)
    cos_e, sin_e = math.cos(err.phi_e), math.sin(err.phi_e)
    flags = []

    num_v = (-gains.q1 * s1 - gains.p1 * gains.switch(s1)
             - gains.lambda1 * err.dx_e
             - ref.a_omega * err.y_e - ref.omega * err.dy_e
             + v_r * dphi_e * sin_e + ref.a_v)
    den_v, clamped = guard_denominator(cos_e)
    if clamped:
        flags.append("cos-clamped")
    dv_c = num_v / den_v
    if mem.v_c is None:
        mem.v_c = v_r
    mem.v_c += dv_c * dt

    num_w = (-gains.q2 * s2 - gains.p2 * gains.switch(s2)
             - gains.lambda2 * err.dy_e - dv_r * sin_e
             + ref.a_omega * err.x_e + ref.omega * err.dx_e)
    den_w, clamped = guard_denominator(v_r * cos_e + gains.lambda0 * sgn(err.y_e))
    if clamped:
        flags.append("omega-den-clamped")
    omega_c = ref.omega + num_w / den_w

    if (abs(err.phi_e) > LAMBDA0_CHECK_MIN_PHI
            and gains.lambda0 >= gains.lambda2 * abs(err.y_e) / abs(err.phi_e)):
        flags.append("lambda0-condition")
    if flags:
        logger.debug("t=%.3f antifragile flags %s", ref.t, flags)

    mem.s1, mem.s2, mem.last_error = s1, s2, err
    return make_command(mem.v_c, dv_c, omega_c, params, flags)


class AntifragileController(Controller):
    """Stateful wrapper of antifragile_control."""

    name = "ANTIFRAGILE"

    def __init__(self, *, gains: AntifragileGains = AntifragileGains(),
                 params: RobotParams = DEFAULT_ROBOT) -> None:
        super().__init__(params=params)
        self.gains = gains
        self.memory = SlidingState()

    def reset(self) -> None:
        self.memory = SlidingState()

    def compute(self, state: RobotState, window: Sequence[ReferenceSample],
                dt: float) -> ControlCommand:
        return antifragile_control(state, window[0], self.memory, self.gains, dt,
                                   self.params)

    def describe(self) -> Dict[str, Any]:
        return asdict(self.gains)
