"""Curvilinear ribbon track model.

A track is an arc-length-parameterized spine with signed lateral road
boundaries. The ``s`` axis runs along the spine, ``n`` is the lateral offset
(positive to the left, matching the y-axis of the road frame). Geometry
between samples is linearly interpolated, which keeps queries O(1) and is
adequate at the documented maximum sample spacing of 5 m.

File format (CSV):
    header ``s,kappa,n_left,n_right[,x,y,psi]``; comment lines start with
    ``#``; a closed track is marked with a ``# closed=true`` comment line and
    must repeat the start pose in the final row at ``s = length``. The
    ``kappa`` column may be omitted when ``x,y`` are present, in which case
    curvature and heading are estimated by finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConsistencyError,
    GeometryError,
    OutOfRangeError,
    ParseError,
    SpecError,
)

MAX_SAMPLE_SPACING = 5.0

_REQUIRED_COLS = ("s", "n_left", "n_right")
_KNOWN_COLS = ("s", "kappa", "n_left", "n_right", "x", "y", "psi")

# Consistency tolerances between stored and finite-difference geometry.
_PSI_TOL = 1e-2          # rad
_KAPPA_RTOL = 0.05
_KAPPA_ATOL = 5e-4       # 1/m floor so straights do not trip the relative check


@dataclass
class TrackQuery:
    """Interpolated track properties at a single arc-length position."""

    s: float
    kappa: float
    n_left: float
    n_right: float


@dataclass
class TrackRibbon:
    """Sampled ribbon: spine curvature and lateral bounds over arc length.

    Treated as immutable after construction; safe to share across threads.
    """

    s: np.ndarray
    kappa: np.ndarray
    n_left: np.ndarray
    n_right: np.ndarray
    closed: bool = False
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    psi: np.ndarray | None = None
    length: float = field(init=False)

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        self.kappa = np.asarray(self.kappa, dtype=float)
        self.n_left = np.asarray(self.n_left, dtype=float)
        self.n_right = np.asarray(self.n_right, dtype=float)
        if self.s.size < 4:
            raise GeometryError("track needs at least 4 samples")
        if not np.all(np.diff(self.s) > 0):
            raise GeometryError("arc length s must be strictly increasing")
        if abs(self.s[0]) > 1e-9:
            raise GeometryError("track must start at s = 0")
        if not np.all(self.n_left > self.n_right):
            raise GeometryError("n_left must exceed n_right everywhere")
        self.length = float(self.s[-1])

    @property
    def has_cartesian(self) -> bool:
        return self.x is not None and self.y is not None and self.psi is not None

    def _wrap(self, s):
        if self.closed:
            return np.mod(s, self.length)
        return s

    def _check_range(self, s) -> None:
        if self.closed:
            return
        s = np.asarray(s, dtype=float)
        if np.any(s < -1e-9) or np.any(s > self.length + 1e-9):
            raise OutOfRangeError(
                f"s outside [0, {self.length}] on an open track"
            )

    def kappa_at(self, s):
        """Curvature at ``s`` (scalar or array); wraps on closed tracks."""
        self._check_range(s)
        return np.interp(self._wrap(s), self.s, self.kappa)

    def n_left_at(self, s):
        self._check_range(s)
        return np.interp(self._wrap(s), self.s, self.n_left)

    def n_right_at(self, s):
        self._check_range(s)
        return np.interp(self._wrap(s), self.s, self.n_right)

    def query(self, s: float) -> TrackQuery:
        """Linearly interpolated geometry at a single position."""
        self._check_range(s)
        sw = float(self._wrap(float(s)))
        return TrackQuery(
            s=float(s),
            kappa=float(np.interp(sw, self.s, self.kappa)),
            n_left=float(np.interp(sw, self.s, self.n_left)),
            n_right=float(np.interp(sw, self.s, self.n_right)),
        )

    def spine_point(self, s):
        """Cartesian spine position and heading at ``s``."""
        if not self.has_cartesian:
            raise GeometryError("track has no Cartesian columns")
        self._check_range(s)
        sw = self._wrap(s)
        return (
            np.interp(sw, self.s, self.x),
            np.interp(sw, self.s, self.y),
            np.interp(sw, self.s, self.psi),
        )

    def ribbon_point(self, s, n):
        """Cartesian position of the ribbon point (s, n); n > 0 is left."""
        px, py, ppsi = self.spine_point(s)
        return px - n * np.sin(ppsi), py + n * np.cos(ppsi)


def query(track: TrackRibbon, s: float) -> TrackQuery:
    """Module-level alias for :meth:`TrackRibbon.query`."""
    return track.query(s)


def _finite_difference_heading(x: np.ndarray, y: np.ndarray, closed: bool) -> np.ndarray:
    """Estimate spine heading from Cartesian samples by central differences.

    On a closed track (final row repeats the start pose) the stencil wraps
    around the seam, so the estimate has no one-sided endpoint bias; on an
    open track the two outermost samples carry a half-spacing chordal bias.
    """
    if closed and np.hypot(x[-1] - x[0], y[-1] - y[0]) < 1e-6:
        xc, yc = x[:-1], y[:-1]
        dx = np.roll(xc, -1) - np.roll(xc, 1)
        dy = np.roll(yc, -1) - np.roll(yc, 1)
        psi = np.unwrap(np.arctan2(dy, dx))
        step = (psi[-1] - psi[0]) / max(len(psi) - 1, 1)
        winding = round((psi[-1] - psi[0] + step) / (2.0 * np.pi))
        return np.append(psi, psi[0] + 2.0 * np.pi * winding)
    dx = np.gradient(x)
    dy = np.gradient(y)
    return np.unwrap(np.arctan2(dy, dx))


def _check_consistency(s, kappa, x, y, psi, closed) -> None:
    psi_fd = _finite_difference_heading(x, y, closed)
    # Finite differences are meaningless where the stencil straddles a
    # curvature discontinuity (e.g. a straight-to-arc join), so mask samples
    # near large second differences of the stored curvature. Also skip the
    # two outermost samples of an open track, where the stencil is one-sided.
    if closed:
        ku = kappa[:-1]
        kink_u = np.abs(np.roll(ku, -1) - 2.0 * ku + np.roll(ku, 1)) > 2.0 * _KAPPA_ATOL
        dil = kink_u.copy()
        for shift in (-2, -1, 1, 2):
            dil |= np.roll(kink_u, shift)
        check = ~np.append(dil, dil[0])
    else:
        kink = np.zeros_like(kappa, dtype=bool)
        kink[1:-1] = (
            np.abs(kappa[2:] - 2.0 * kappa[1:-1] + kappa[:-2]) > 2.0 * _KAPPA_ATOL
        )
        check = ~(np.convolve(kink, np.ones(5), mode="same") > 0)
        check[:2] = check[-2:] = False
    dpsi = np.angle(np.exp(1j * (psi_fd - psi)))
    if np.any(np.abs(dpsi[check]) > _PSI_TOL):
        worst = float(np.max(np.abs(dpsi[check])))
        raise ConsistencyError(
            f"stored psi deviates from finite differences by {worst:.3g} rad"
        )
    kappa_fd = np.gradient(np.unwrap(psi_fd), s)
    tol = np.maximum(_KAPPA_RTOL * np.abs(kappa), _KAPPA_ATOL)
    if np.any(np.abs(kappa_fd - kappa)[check] > tol[check]):
        raise ConsistencyError("stored kappa deviates from finite differences")


def load_track(path: str) -> TrackRibbon:
    """Load a ribbon from a CSV track file.

    Raises ParseError on malformed rows, GeometryError on invalid geometry
    and ConsistencyError when redundant columns disagree.
    """
    closed = False
    header: list[str] | None = None
    rows: list[list[float]] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                flag = line.lstrip("#").strip().replace(" ", "").lower()
                if flag == "closed=true":
                    closed = True
                continue
            if header is None:
                header = [c.strip() for c in line.split(",")]
                continue
            parts = line.split(",")
            if len(parts) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc

    if header is None:
        raise ParseError(f"{path}: missing header row")
    unknown = set(header) - set(_KNOWN_COLS)
    if unknown:
        raise ParseError(f"{path}: unknown columns {sorted(unknown)}")
    missing = [c for c in _REQUIRED_COLS if c not in header]
    if missing:
        raise ParseError(f"{path}: missing columns {missing}")
    if len(rows) < 4:
        raise GeometryError(f"{path}: need at least 4 samples")

    data = np.asarray(rows, dtype=float)
    col = {name: data[:, i] for i, name in enumerate(header)}

    have_xy = "x" in col and "y" in col
    if "kappa" not in col and not have_xy:
        raise ParseError(f"{path}: need a kappa column or x,y columns")

    if have_xy and "psi" not in col:
        col["psi"] = _finite_difference_heading(col["x"], col["y"], closed)
    if "kappa" not in col:
        col["kappa"] = np.gradient(np.unwrap(col["psi"]), col["s"])
    elif have_xy:
        _check_consistency(
            col["s"], col["kappa"], col["x"], col["y"], col["psi"], closed
        )

    return TrackRibbon(
        s=col["s"],
        kappa=col["kappa"],
        n_left=col["n_left"],
        n_right=col["n_right"],
        closed=closed,
        x=col.get("x"),
        y=col.get("y"),
        psi=col.get("psi"),
    )


def save_track(track: TrackRibbon, path: str) -> None:
    """Write a ribbon back to the CSV track file format."""
    cols = ["s", "kappa", "n_left", "n_right"]
    arrays = [track.s, track.kappa, track.n_left, track.n_right]
    if track.has_cartesian:
        cols += ["x", "y", "psi"]
        arrays += [track.x, track.y, track.psi]
    with open(path, "w") as fh:
        if track.closed:
            fh.write("# closed=true\n")
        fh.write(",".join(cols) + "\n")
        for row in zip(*arrays):
            fh.write(",".join(f"{v:.12g}" for v in row) + "\n")


def make_synthetic_track(
    segments,
    n_left: float = 6.0,
    n_right: float = -6.0,
    ds_max: float = MAX_SAMPLE_SPACING,
    closed: bool = False,
) -> TrackRibbon:
    """Build a piecewise-constant-curvature ribbon from (length, curvature) segments.

    Cartesian columns are generated from the exact arc geometry of each
    segment. The stored curvature is the finite-difference curvature of the
    exact heading so that reloading a saved synthetic track passes the
    consistency check; within segments it equals the segment value.
    """
    if not segments:
        raise SpecError("segment list is empty")
    if n_left <= n_right:
        raise SpecError("n_left must exceed n_right")

    s_list = [0.0]
    psi_list = [0.0]
    x_list = [0.0]
    y_list = [0.0]
    for i, (seg_len, seg_kappa) in enumerate(segments):
        if seg_len <= 0:
            raise SpecError(f"segment {i} has nonpositive length {seg_len}")
        n_sub = max(1, int(np.ceil(seg_len / ds_max)))
        ds = seg_len / n_sub
        for _ in range(n_sub):
            s0, psi0, x0, y0 = s_list[-1], psi_list[-1], x_list[-1], y_list[-1]
            psi1 = psi0 + seg_kappa * ds
            if abs(seg_kappa) < 1e-12:
                x1 = x0 + ds * np.cos(psi0)
                y1 = y0 + ds * np.sin(psi0)
            else:
                x1 = x0 + (np.sin(psi1) - np.sin(psi0)) / seg_kappa
                y1 = y0 - (np.cos(psi1) - np.cos(psi0)) / seg_kappa
            s_list.append(s0 + ds)
            psi_list.append(psi1)
            x_list.append(x1)
            y_list.append(y1)

    s = np.asarray(s_list)
    psi = np.asarray(psi_list)
    x = np.asarray(x_list)
    y = np.asarray(y_list)

    if closed:
        gap = float(np.hypot(x[-1] - x[0], y[-1] - y[0]))
        turns = (psi[-1] - psi[0]) / (2.0 * np.pi)
        if gap > 1e-3 or abs(turns - round(turns)) > 1e-6:
            raise SpecError(
                f"segments do not close the loop (gap {gap:.3g} m, "
                f"{turns:.6f} turns)"
            )
        x[-1], y[-1] = x[0], y[0]

    kappa = np.gradient(psi, s)
    if closed:
        # The seam sample is shared by the first and last segments; store the
        # mean of the adjacent slopes (the value is a convention whenever the
        # curvature is discontinuous across the seam).
        slope_in = (psi[-1] - psi[-2]) / (s[-1] - s[-2])
        slope_out = (psi[1] - psi[0]) / (s[1] - s[0])
        kappa[0] = kappa[-1] = 0.5 * (slope_in + slope_out)
    ones = np.ones_like(s)
    return TrackRibbon(
        s=s,
        kappa=kappa,
        n_left=n_left * ones,
        n_right=n_right * ones,
        closed=closed,
        x=x,
        y=y,
        psi=psi,
    )
