"""Point-mass vehicle model in road-frame coordinates.

State ``x = [V, n, chi, ax, ay]``: speed, lateral offset, orientation
relative to the road frame, and the two acceleration components. The input
is the jerk vector ``u = [jx, jy]``, i.e. accelerations are integrator
states, which keeps acceleration profiles continuous and lets jerk be
penalized directly.

The model is written for a flat track: the road-frame angular velocities
``omega_x``, ``omega_y`` and the vertical offset rate ``w`` appear as
explicit parameters fixed to zero so a banked/sloped extension only has to
supply values for them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, SingularityError, SpecError


@dataclass
class VehicleState:
    """Road-frame point-mass state."""

    V: float
    n: float
    chi: float
    ax: float
    ay: float

    def as_array(self) -> np.ndarray:
        return np.array([self.V, self.n, self.chi, self.ax, self.ay])


@dataclass
class VehicleInput:
    """Jerk input vector."""

    jx: float
    jy: float

    def as_array(self) -> np.ndarray:
        return np.array([self.jx, self.jy])


def s_dot(V, n, chi, kappa):
    """Progress rate along the spine, ``V cos(chi) / (1 - n kappa)``.

    Scalar or elementwise on arrays. The denominator vanishes when the
    vehicle reaches the curvature centre of the spine; beyond it the road
    frame is not a valid chart.
    """
    V = np.asarray(V, dtype=float)
    if np.any(V <= 0):
        raise DomainError("speed must be positive")
    if np.any(np.abs(chi) >= np.pi / 2):
        raise DomainError("orientation must stay within +/- pi/2 of the road frame")
    denom = 1.0 - np.asarray(n) * np.asarray(kappa)
    if np.any(denom <= 0):
        raise SingularityError("1 - n*kappa <= 0: outside the ribbon's valid region")
    out = V * np.cos(chi) / denom
    return float(out) if out.ndim == 0 else out


def dynamics(
    x: VehicleState,
    u: VehicleInput,
    kappa: float,
    w: float = 0.0,
    omega_x: float = 0.0,
    omega_y: float = 0.0,
) -> np.ndarray:
    """Time derivative of the state at spine curvature ``kappa``.

    Returns ``[dV, dn, dchi, dax, day]``. The ``w``/``omega`` terms are the
    flat-track zeros; see module docstring.
    """
    if x.V <= 0:
        raise DomainError("speed must be positive")
    sd = s_dot(x.V, x.n, x.chi, kappa)
    return np.array(
        [
            x.ax - w * omega_y,
            x.V * np.sin(x.chi),
            (x.ay + w * omega_x) / x.V - kappa * sd,
            u.jx,
            u.jy,
        ]
    )


@dataclass
class GgDiagram:
    """Speed-dependent acceleration limits with a p-norm combination rule.

    The admissible set at speed V is
    ``(ax+/axa)^p + (ax-/axb)^p + (|ay|/aya)^p <= 1`` where the three limits
    are linearly interpolated over the speed grid. ``p = 1`` is a diamond
    with separate driving/braking vertices; ``p = 2`` an ellipse.
    """

    speeds: np.ndarray
    ax_acc: np.ndarray
    ax_brake: np.ndarray
    ay_max: np.ndarray
    p: float = 1.0
    v_max: float = field(init=False)

    def __post_init__(self):
        self.speeds = np.asarray(self.speeds, dtype=float)
        self.ax_acc = np.asarray(self.ax_acc, dtype=float)
        self.ax_brake = np.asarray(self.ax_brake, dtype=float)
        self.ay_max = np.asarray(self.ay_max, dtype=float)
        if self.speeds.size < 2 or not np.all(np.diff(self.speeds) > 0):
            raise SpecError("speed grid must be increasing with at least 2 points")
        for name in ("ax_acc", "ax_brake", "ay_max"):
            if np.any(getattr(self, name) <= 0):
                raise SpecError(f"{name} must be positive at every grid speed")
        if not 1.0 <= self.p <= 2.0:
            raise SpecError("exponent p must lie in [1, 2]")
        self.v_max = float(self.speeds[-1])

    def limits(self, V):
        """Interpolated (ax_acc, ax_brake, ay_max) at speed V, clamped to the grid."""
        Vc = np.clip(V, self.speeds[0], self.speeds[-1])
        return (
            np.interp(Vc, self.speeds, self.ax_acc),
            np.interp(Vc, self.speeds, self.ax_brake),
            np.interp(Vc, self.speeds, self.ay_max),
        )

    def margin(self, V, ax, ay):
        """Signed membership margin; <= 0 means the acceleration is admissible.

        Speeds outside the grid are clamped (with a warning), not rejected:
        the velocity constraint is the planner's job, not the diagram's.
        """
        if np.any(np.asarray(V) < self.speeds[0] - 1e-9) or np.any(
            np.asarray(V) > self.speeds[-1] + 1e-9
        ):
            warnings.warn("speed outside gg grid; limits clamped", stacklevel=2)
        axa, axb, aya = self.limits(V)
        ax = np.asarray(ax, dtype=float)
        ay = np.asarray(ay, dtype=float)
        m = (
            (np.maximum(ax, 0.0) / axa) ** self.p
            + (np.maximum(-ax, 0.0) / axb) ** self.p
            + (np.abs(ay) / aya) ** self.p
            - 1.0
        )
        return float(m) if np.ndim(m) == 0 else m


def gg_margin(gg: GgDiagram, V, ax, ay):
    """Module-level alias for :meth:`GgDiagram.margin`."""
    return gg.margin(V, ax, ay)


def default_gg() -> GgDiagram:
    """Desk-scale default limits: invented values, see the shipped config.

    Driving force fades with speed (8 down to 4 m/s^2) while braking and
    cornering stay at 15 m/s^2 up to a 83 m/s top speed.
    """
    speeds = np.linspace(0.0, 83.0, 5)
    return GgDiagram(
        speeds=speeds,
        ax_acc=np.linspace(8.0, 4.0, 5),
        ax_brake=np.full(5, 15.0),
        ay_max=np.full(5, 15.0),
        p=1.0,
    )
