"""Sampled ego trajectory shared between the planner stages.

Stores parallel arrays over a monotone arc-length grid. ``sdot`` is the
progress rate along the spine, which the behavioral layer treats as the
canonical speed profile of a previous plan.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SpecError


@dataclass
class Trajectory:
    """Planned motion, indexed by spine arc length ``s``."""

    s: np.ndarray
    t: np.ndarray
    sdot: np.ndarray
    V: np.ndarray
    n: np.ndarray
    chi: np.ndarray
    ax: np.ndarray
    ay: np.ndarray
    jx: np.ndarray | None = None
    jy: np.ndarray | None = None

    def __post_init__(self):
        for name in ("s", "t", "sdot", "V", "n", "chi", "ax", "ay"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        m = self.s.size
        if m < 2:
            raise SpecError("trajectory needs at least 2 samples")
        for name in ("t", "sdot", "V", "n", "chi", "ax", "ay"):
            if getattr(self, name).size != m:
                raise SpecError(f"trajectory field {name} has mismatched length")
        if not np.all(np.diff(self.s) > 0):
            raise SpecError("trajectory s grid must be strictly increasing")
        if np.any(self.sdot <= 0):
            raise SpecError("trajectory must make forward progress everywhere")

    def sdot_at(self, s):
        """Progress rate at ``s``; constant beyond the stored range."""
        return np.interp(s, self.s, self.sdot)

    def n_at(self, s):
        return np.interp(s, self.s, self.n)

    def t_at(self, s):
        """Arrival time at ``s``; linear extrapolation at terminal speed."""
        s = np.asarray(s, dtype=float)
        t = np.interp(s, self.s, self.t)
        over = s > self.s[-1]
        if np.any(over):
            t = np.where(over, self.t[-1] + (s - self.s[-1]) / self.sdot[-1], t)
        return float(t) if t.ndim == 0 else t

    def s_at_time(self, t):
        """Position at time ``t``; extrapolates at the boundary speeds."""
        t = np.asarray(t, dtype=float)
        s = np.interp(t, self.t, self.s)
        over = t > self.t[-1]
        if np.any(over):
            s = np.where(over, self.s[-1] + (t - self.t[-1]) * self.sdot[-1], s)
        return float(s) if s.ndim == 0 else s

    def state_at(self, s):
        """Interpolated (V, n, chi, ax, ay) at position ``s``."""
        return tuple(
            float(np.interp(s, self.s, getattr(self, name)))
            for name in ("V", "n", "chi", "ax", "ay")
        )


def constant_speed_trajectory(s0: float, n0: float, V: float, length: float,
                              ds: float = 5.0) -> Trajectory:
    """Straight-ahead constant-speed stub, used to bootstrap the first plan."""
    m = max(int(np.ceil(length / ds)) + 1, 2)
    s = np.linspace(s0, s0 + length, m)
    zeros = np.zeros(m)
    return Trajectory(
        s=s,
        t=(s - s0) / V,
        sdot=np.full(m, V),
        V=np.full(m, V),
        n=np.full(m, n0),
        chi=zeros,
        ax=zeros,
        ay=zeros.copy(),
    )
