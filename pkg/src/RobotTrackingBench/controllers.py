"""Registry of the outer-loop tracking controllers."""

import logging
from typing import Any, Dict, Mapping, Optional

from .antifragile import AntifragileController, AntifragileGains, InvalidGainError
from .baselines import (
    AdaptiveController, BaselineController, FuzzyConfig, MPCConfig,
    ResilientController, RobustController, RobustGains
)
from .tracking import Controller
from .vehicle import DEFAULT_ROBOT, RobotParams

logger = logging.getLogger(__name__)

# Controllers ranked against each other, in the order of the rank table
COMPARED_CONTROLLERS = ("ROBUST", "ADAPTIVE", "RESILIENT", "ANTIFRAGILE")
CONTROLLER_IDS = COMPARED_CONTROLLERS + ("BASELINE",)

_GAIN_TYPES = {
    "ANTIFRAGILE": AntifragileGains,
    "ROBUST": RobustGains,
    "ADAPTIVE": MPCConfig,
    "RESILIENT": FuzzyConfig,
}


def build_gains(controller_id: str, values: Optional[Mapping[str, Any]] = None) -> Any:
    """Gain object of a controller with the given fields overridden.

    Raises:
        ValueError: If the controller id is unknown
        InvalidGainError: If a field is unknown or a value breaks a gain invariant
    """
    if controller_id not in CONTROLLER_IDS:
        raise ValueError(
            f"unknown controller id {controller_id!r}, expected one of {CONTROLLER_IDS}"
        )
    values = dict(values or {})
    gain_type = _GAIN_TYPES.get(controller_id)
    if gain_type is None:
        if values:
            raise InvalidGainError(f"{controller_id} takes no gains, got {sorted(values)}")
        return None
    try:
        return gain_type(**values)
    except TypeError as exc:
        raise InvalidGainError(f"{controller_id} gains: {exc}") from exc


def make_controller(
    controller_id: str,
    gains: Optional[Mapping[str, Any]] = None,
    params: RobotParams = DEFAULT_ROBOT,
) -> Controller:
    """Create a fresh controller instance by id."""
    built = build_gains(controller_id, gains)
    logger.debug("creating %s controller with %s", controller_id, built)
    if controller_id == "ANTIFRAGILE":
        return AntifragileController(gains=built, params=params)
    if controller_id == "ROBUST":
        return RobustController(gains=built, params=params)
    if controller_id == "ADAPTIVE":
        return AdaptiveController(config=built, params=params)
    if controller_id == "RESILIENT":
        return ResilientController(config=built, params=params)
    return BaselineController(params=params)


def describe_controllers() -> Dict[str, str]:
    """One-line description per controller id."""
    return {
        "ANTIFRAGILE": "coupled sliding manifolds with a proportional plus constant reaching law",
        "ROBUST": "sliding mode on separate along-track and heading surfaces",
        "ADAPTIVE": "receding horizon with error-dependent weights",
        "RESILIENT": "four-rule Takagi-Sugeno-Kang fuzzy wheel corrections",
        "BASELINE": "reference feedforward without feedback",
    }
