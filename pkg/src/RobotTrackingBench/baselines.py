"""Comparison controllers: robust sliding mode, adaptive receding horizon, resilient fuzzy
and a feedforward-only baseline."""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import skfuzzy as fuzz

from .antifragile import InvalidGainError
from .planner import ReferenceSample
from .tracking import (
    ControlCommand, Controller, guard_denominator, make_command, measure_tracking,
    sat, sgn
)
from .vehicle import DEFAULT_ROBOT, RobotParams, RobotState

logger = logging.getLogger(__name__)

ROBUST_C1 = 1.0
ROBUST_C2 = 2.0
ROBUST_C3 = 1.0
ROBUST_K = 0.5

MPC_HORIZON_STEPS = 10
MPC_Q_WEIGHT = (10.0, 10.0, 1.0)
MPC_R_WEIGHT = (0.05, 0.05)
MPC_ADAPTIVE_GAIN = 5.0

FUZZY_DISTANCE_MAX_M = 0.5
FUZZY_HEADING_MAX_RAD = math.pi / 4
FUZZY_SMALL_GAIN = 0.3
FUZZY_LARGE_GAIN = 0.8
FUZZY_TNORMS = ("product", "min")


#########################################################
# Robust sliding mode
#########################################################

@dataclass(frozen=True)
class RobustGains:
    """Surface coefficients c1..c3, switching gains and boundary-layer width."""

    c1: float = ROBUST_C1
    c2: float = ROBUST_C2
    c3: float = ROBUST_C3
    k1: float = ROBUST_K
    k2: float = ROBUST_K
    sat_width: float = 0.05

    def __post_init__(self) -> None:
        for name in ("c1", "c2", "c3", "sat_width"):
            if not getattr(self, name) > 0:
                raise InvalidGainError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("k1", "k2"):
            if not getattr(self, name) >= 0:
                raise InvalidGainError(f"{name} must be >= 0, got {getattr(self, name)}")


@dataclass
class RobustMemory:
    # Integrated departures of (v_c, omega_c) from the reference velocities
    v_corr: float = 0.0
    omega_corr: float = 0.0
    sigma1: float = 0.0
    sigma2: float = 0.0


def robust_control(
    state: RobotState,
    ref: ReferenceSample,
    mem: RobustMemory,
    gains: RobustGains,
    dt: float,
    params: RobotParams = DEFAULT_ROBOT,
) -> ControlCommand:
    """Sliding-mode control on separate along-track and heading surfaces.

    The surfaces are sigma1 = x_e' + c1 x_e and sigma2 = phi_e' + c2 phi_e + c3 y_e.
    Body accelerations v' = alpha u1 and omega' = beta u2, with
    alpha = 1/(r m) and beta = b/(r I). Their departures from the reference
    accelerations are integrated and added to the reference velocities, so
    zero tracking error commands exactly (v_d, omega_d).
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    alpha = 1.0 / (params.wheel_radius * params.total_mass)
    beta = params.half_track / (params.wheel_radius * params.body_inertia)
    err = measure_tracking(state, ref)
    cos_e, sin_e = math.cos(err.phi_e), math.sin(err.phi_e)
    flags = []

    sigma1 = err.dx_e + gains.c1 * err.x_e
    sigma2 = err.dphi_e + gains.c2 * err.phi_e + gains.c3 * err.y_e
    drift1 = (-state.v * sin_e * err.dphi_e - ref.a_v + err.dy_e * ref.omega
              + err.y_e * ref.a_omega + gains.c1 * err.dx_e)
    drift2 = -ref.a_omega + gains.c2 * err.dphi_e + gains.c3 * err.dy_e

    den, clamped = guard_denominator(cos_e)
    if clamped:
        flags.append("cos-clamped")
    u1 = (-drift1 - gains.k1 * sat(sigma1, gains.sat_width)) / (alpha * den)
    u2 = (-drift2 - gains.k2 * sat(sigma2, gains.sat_width)) / beta

    dv_c = alpha * u1
    mem.v_corr += (dv_c - ref.a_v) * dt
    mem.omega_corr += (beta * u2 - ref.a_omega) * dt
    mem.sigma1, mem.sigma2 = sigma1, sigma2
    return make_command(ref.v + mem.v_corr, dv_c, ref.omega + mem.omega_corr, params, flags)


class RobustController(Controller):
    name = "ROBUST"

    def __init__(self, *, gains: RobustGains = RobustGains(),
                 params: RobotParams = DEFAULT_ROBOT) -> None:
        super().__init__(params=params)
        self.gains = gains
        self.memory = RobustMemory()

    def reset(self) -> None:
        self.memory = RobustMemory()

    def compute(self, state: RobotState, window: Sequence[ReferenceSample],
                dt: float) -> ControlCommand:
        return robust_control(state, window[0], self.memory, self.gains, dt, self.params)

    def describe(self) -> Dict[str, Any]:
        return asdict(self.gains)


#########################################################
# Adaptive receding horizon
#########################################################

@dataclass(frozen=True)
class MPCConfig:
    """Receding-horizon settings.

    Attributes:
        horizon_steps: Prediction horizon N in outer-loop steps
        q_weight: Diagonal weight on the predicted (x_e, y_e, phi_e)
        r_weight: Diagonal weight on the (v, omega) deviations from feedforward
        adaptive_gain: Inflation factor g of the y_e and phi_e weights,
            scaled by 1 + g (|y_e| + |phi_e|)
    """

    horizon_steps: int = MPC_HORIZON_STEPS
    q_weight: Tuple[float, float, float] = MPC_Q_WEIGHT
    r_weight: Tuple[float, float] = MPC_R_WEIGHT
    adaptive_gain: float = MPC_ADAPTIVE_GAIN

    def __post_init__(self) -> None:
        if not (isinstance(self.horizon_steps, int) and self.horizon_steps >= 1):
            raise InvalidGainError(f"horizon_steps must be an integer >= 1, got {self.horizon_steps}")
        object.__setattr__(self, "q_weight", tuple(float(w) for w in self.q_weight))
        object.__setattr__(self, "r_weight", tuple(float(w) for w in self.r_weight))
        if len(self.q_weight) != 3 or len(self.r_weight) != 2:
            raise InvalidGainError(
                f"q_weight needs 3 and r_weight 2 entries, got "
                f"{len(self.q_weight)} and {len(self.r_weight)}"
            )
        if min(self.q_weight + self.r_weight) < 0 or self.adaptive_gain < 0:
            raise InvalidGainError(
                f"weights must be >= 0, got q={self.q_weight}, r={self.r_weight}, "
                f"adaptive_gain={self.adaptive_gain}"
            )


@dataclass
class MPCMemory:
    v_c: Optional[float] = None
    cost_feedforward: float = 0.0
    cost_optimal: float = 0.0
    deviations: List[float] = field(default_factory=list)


def error_transition(v_d: float, omega_d: float, dt: float) -> np.ndarray:
    """Discrete error-frame transition matrix linearized about the reference."""
    return np.eye(3) + dt * np.array([
        [0.0, omega_d, 0.0],
        [-omega_d, 0.0, v_d],
        [0.0, 0.0, 0.0],
    ])


def input_matrix(dt: float) -> np.ndarray:
    """Input matrix of the (v, omega) deviations from feedforward."""
    return dt * np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])


def prediction_matrices(
    window: Sequence[ReferenceSample], horizon: int, dt: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Stacked predictions E = Phi e0 + Gamma U over the horizon.

    Returns:
        Tuple (Phi, Gamma) of shapes (3N, 3) and (3N, 2N)
    """
    B = input_matrix(dt)
    phi = np.zeros((3 * horizon, 3))
    gamma = np.zeros((3 * horizon, 2 * horizon))
    transition = np.eye(3)
    for k in range(horizon):
        ref = window[min(k, len(window) - 1)]
        A = error_transition(ref.v, ref.omega, dt)
        transition = A @ transition
        phi[3 * k:3 * k + 3] = transition
        if k > 0:
            gamma[3 * k:3 * k + 3, :2 * k] = A @ gamma[3 * k - 3:3 * k, :2 * k]
        gamma[3 * k:3 * k + 3, 2 * k:2 * k + 2] = B
    return phi, gamma


def adaptive_control(
    state: RobotState,
    window: Sequence[ReferenceSample],
    mem: MPCMemory,
    cfg: MPCConfig,
    dt: float,
    params: RobotParams = DEFAULT_ROBOT,
) -> ControlCommand:
    """Minimize the weighted horizon cost by batch least squares and apply the first input.

    The lateral and heading weights grow with the current |y_e| + |phi_e|.
    A failed or non-finite solve falls back to feedforward and flags it.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    ref = window[0]
    err = measure_tracking(state, ref)
    e0 = np.array([err.x_e, err.y_e, err.phi_e])
    n = cfg.horizon_steps

    inflation = 1.0 + cfg.adaptive_gain * (abs(err.y_e) + abs(err.phi_e))
    q = np.array(cfg.q_weight) * np.array([1.0, inflation, inflation])
    wq = np.tile(np.sqrt(q), n)
    wr = np.tile(np.sqrt(np.array(cfg.r_weight)), n)

    phi, gamma = prediction_matrices(window, n, dt)
    free = phi @ e0
    lhs = np.vstack([wq[:, None] * gamma, np.diag(wr)])
    rhs = np.concatenate([-wq * free, np.zeros(2 * n)])

    flags = []
    try:
        solution, *_ = scipy.linalg.lstsq(lhs, rhs)
        if not np.all(np.isfinite(solution)):
            raise scipy.linalg.LinAlgError("non-finite solution")
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        logger.debug("t=%.3f horizon solve failed: %s", ref.t, exc)
        solution = np.zeros(2 * n)
        flags.append("mpc-fallback")

    mem.cost_feedforward = float(np.sum((wq * free) ** 2))
    mem.cost_optimal = float(np.sum((lhs @ solution - rhs) ** 2))
    mem.deviations = [float(u) for u in solution[:2]]

    v_c = ref.v + solution[0]
    omega_c = ref.omega + solution[1]
    dv_c = ref.a_v if mem.v_c is None else (v_c - mem.v_c) / dt
    mem.v_c = float(v_c)
    return make_command(float(v_c), float(dv_c), float(omega_c), params, flags)


class AdaptiveController(Controller):
    name = "ADAPTIVE"

    def __init__(self, *, config: MPCConfig = MPCConfig(),
                 params: RobotParams = DEFAULT_ROBOT) -> None:
        super().__init__(params=params)
        self.config = config
        self.horizon_steps = config.horizon_steps
        self.memory = MPCMemory()

    def reset(self) -> None:
        self.memory = MPCMemory()

    def compute(self, state: RobotState, window: Sequence[ReferenceSample],
                dt: float) -> ControlCommand:
        return adaptive_control(state, window, self.memory, self.config, dt, self.params)

    def describe(self) -> Dict[str, Any]:
        return asdict(self.config)


#########################################################
# Resilient fuzzy
#########################################################

@dataclass(frozen=True)
class FuzzyConfig:
    """Two-input, four-rule Takagi-Sugeno-Kang controller.

    Each input has a Small and a Large triangular set spanning
    [0, distance_max] or [0, heading_max]. Rule gains (k_d, k_t) are listed
    in the order Small-Small, Small-Large, Large-Small, Large-Large, the
    first word naming the distance set.
    """

    distance_max: float = FUZZY_DISTANCE_MAX_M
    heading_max: float = FUZZY_HEADING_MAX_RAD
    rule_gains: Tuple[Tuple[float, float], ...] = (
        (FUZZY_SMALL_GAIN, FUZZY_SMALL_GAIN),
        (FUZZY_SMALL_GAIN, FUZZY_LARGE_GAIN),
        (FUZZY_LARGE_GAIN, FUZZY_SMALL_GAIN),
        (FUZZY_LARGE_GAIN, FUZZY_LARGE_GAIN),
    )
    tnorm: str = "product"

    def __post_init__(self) -> None:
        if not (self.distance_max > 0 and self.heading_max > 0):
            raise InvalidGainError(
                f"membership breakpoints must be > 0, got "
                f"{self.distance_max}, {self.heading_max}"
            )
        gains = tuple(tuple(float(g) for g in pair) for pair in self.rule_gains)
        object.__setattr__(self, "rule_gains", gains)
        if len(gains) != 4 or any(len(pair) != 2 for pair in gains):
            raise InvalidGainError(f"need 4 rule gain pairs (k_d, k_t), got {gains}")
        for pair in gains:
            for g in pair:
                if not 0 < g < 1:
                    raise InvalidGainError(f"rule gains must lie in (0, 1), got {g}")
        if self.tnorm not in FUZZY_TNORMS:
            raise InvalidGainError(f"tnorm must be one of {FUZZY_TNORMS}, got {self.tnorm!r}")


def memberships(value: float, upper: float) -> Tuple[float, float]:
    """Degrees of the Small and Large sets on [0, upper], inputs clipped to the universe."""
    x = np.array([min(max(value, 0.0), upper)])
    small = fuzz.trimf(x, [0.0, 0.0, upper])[0]
    large = fuzz.trimf(x, [0.0, upper, upper])[0]
    return float(small), float(large)


def rule_firing(d_e: float, phi_e: float, cfg: FuzzyConfig) -> List[float]:
    """Firing strength of each rule for the inputs |d_e| and |phi_e|."""
    dist = memberships(abs(d_e), cfg.distance_max)
    head = memberships(abs(phi_e), cfg.heading_max)
    combine = min if cfg.tnorm == "min" else (lambda a, b: a * b)
    return [combine(dist[i], head[j]) for i in (0, 1) for j in (0, 1)]


def fuzzy_wheel_corrections(d_e: float, phi_e: float, cfg: FuzzyConfig) -> Tuple[float, float]:
    """Weighted-average rule output (v_l, v_r).

    Each rule proposes v_l = k_d d_e + k_t phi_e and v_r = k_d d_e - k_t phi_e.
    """
    weights = rule_firing(d_e, phi_e, cfg)
    total = sum(weights)
    v_l = sum(w * (kd * d_e + kt * phi_e) for w, (kd, kt) in zip(weights, cfg.rule_gains))
    v_r = sum(w * (kd * d_e - kt * phi_e) for w, (kd, kt) in zip(weights, cfg.rule_gains))
    return v_l / total, v_r / total


def resilient_control(
    state: RobotState,
    ref: ReferenceSample,
    cfg: FuzzyConfig,
    params: RobotParams = DEFAULT_ROBOT,
) -> ControlCommand:
    """Fuzzy wheel-speed corrections added to the reference feedforward.

    The distance error is the Euclidean position error signed negative when
    the robot is ahead of the reference along its heading.
    """
    err = measure_tracking(state, ref)
    d_e = -sgn(err.x_e) * math.hypot(err.x_e, err.y_e)
    v_l, v_r = fuzzy_wheel_corrections(d_e, err.phi_e, cfg)
    v_c = ref.v + 0.5 * (v_l + v_r)
    omega_c = ref.omega + (v_r - v_l) / (2.0 * params.half_track)
    return make_command(v_c, ref.a_v, omega_c, params)


class ResilientController(Controller):
    name = "RESILIENT"

    def __init__(self, *, config: FuzzyConfig = FuzzyConfig(),
                 params: RobotParams = DEFAULT_ROBOT) -> None:
        super().__init__(params=params)
        self.config = config

    def compute(self, state: RobotState, window: Sequence[ReferenceSample],
                dt: float) -> ControlCommand:
        return resilient_control(state, window[0], self.config, self.params)

    def describe(self) -> Dict[str, Any]:
        return asdict(self.config)


#########################################################
# Feedforward only
#########################################################

class BaselineController(Controller):
    """Applies the reference velocities without any feedback."""

    name = "BASELINE"

    def compute(self, state: RobotState, window: Sequence[ReferenceSample],
                dt: float) -> ControlCommand:
        ref = window[0]
        return make_command(ref.v, ref.a_v, ref.omega, self.params)
