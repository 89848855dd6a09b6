"""Experiment harness: four desk-scale RTK accuracy experiments on a rigid
square board of rovers, plus analysis of recorded fixes into per-side
distance series and summary verdicts.

Experiments are fully deterministic given their seed: same spec, same seed,
byte-identical bag.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .bag import read_bag, record
from .bus import Bus
from .geo import (CorrectionLink, DisturbanceWindow, EnuCoord,
                  GeodeticCoord, Rover, RoverConfig, RtkFix, WGS84_A, WGS84_E2,
                  decode_fix, encode_fix, enu_to_geodetic, _enu_basis,
                  geodetic_to_ecef)

DEFAULT_BASE = GeodeticCoord(48.70, 6.15, 220.0)
DEFAULT_SIDE_M = 0.90

CORNERS = ("top_left", "top_right", "bottom_right", "bottom_left")
SIDES = ("top", "right", "bottom", "left")
SIDE_PAIRS = {
    "top": ("top_left", "top_right"),
    "right": ("top_right", "bottom_right"),
    "bottom": ("bottom_right", "bottom_left"),
    "left": ("bottom_left", "top_left"),
}
# board-frame corner offsets in units of the side length
_CORNER_LOCAL = {
    "top_left": (-0.5, 0.5),
    "top_right": (0.5, 0.5),
    "bottom_right": (0.5, -0.5),
    "bottom_left": (-0.5, -0.5),
}
# per corner: (side name, unit vector from the side's other rover toward the corner)
_CORNER_SIDES = {
    "top_left": (("top", (-1.0, 0.0)), ("left", (0.0, 1.0))),
    "top_right": (("top", (1.0, 0.0)), ("right", (0.0, 1.0))),
    "bottom_right": (("right", (0.0, -1.0)), ("bottom", (1.0, 0.0))),
    "bottom_left": (("bottom", (-1.0, 0.0)), ("left", (0.0, -1.0))),
}

CONVERGENCE_S = 120.0
WITHIN_LIMIT_M = 0.20
STABLE_SLOPE_LIMIT = 0.001 / 60.0  # 1 mm per minute, in m/s
PEAK_SIGMA_FACTOR = 2.0
PEAK_MIN_SAMPLES = 2


# -- rig and trajectories ------------------------------------------------


@dataclass(frozen=True)
class BoardPose:
    center: np.ndarray  # ENU, meters
    yaw: float          # radians about up


@dataclass(frozen=True)
class BoardRig:
    """Rigid square of four rovers; corner geometry is exact at every instant."""

    side_m: float
    rover_ids: tuple[str, str, str, str]
    trajectory: Callable[[float], BoardPose]

    def __post_init__(self) -> None:
        if self.side_m <= 0.0:
            raise ValueError("board side must be positive")
        if len(set(self.rover_ids)) != 4:
            raise ValueError("need four distinct rover ids")

    def corner_positions(self, t: float) -> dict[str, np.ndarray]:
        """rover id -> true ENU position at time t."""
        pose = self.trajectory(t)
        c, s = math.cos(pose.yaw), math.sin(pose.yaw)
        out = {}
        for corner, rover_id in zip(CORNERS, self.rover_ids):
            lx, ly = _CORNER_LOCAL[corner]
            lx *= self.side_m
            ly *= self.side_m
            out[rover_id] = pose.center + np.array([c * lx - s * ly, s * lx + c * ly, 0.0])
        return out


@dataclass(frozen=True)
class RoverWindow:
    """Disturbance pulse on one rover: displacement of ``magnitude_m`` meters
    along ``direction_en`` (unit, board frame; None = outward diagonal)."""

    rover_id: str
    start_s: float
    end_s: float
    magnitude_m: float
    direction_en: tuple[float, float] | None = None

    def offset_en(self) -> tuple[float, float]:
        if self.direction_en is None:
            dx, dy = _CORNER_LOCAL[self.rover_id]
            norm = math.hypot(dx, dy)
            direction = (dx / norm, dy / norm)
        else:
            direction = self.direction_en
        return self.magnitude_m * direction[0], self.magnitude_m * direction[1]


@dataclass(frozen=True)
class RotationTimeline:
    lift_end_s: float = 20.0
    cw_end_s: float = 33.0
    pause_end_s: float = 43.0
    ccw_end_s: float = 50.0
    lift_height_m: float = 1.0


@dataclass(frozen=True)
class TranslationLegs:
    line_length_m: float = 30.0
    line_duration_s: float = 45.0
    hold_s: float = 10.0
    square_side_m: float = 25.0
    overshoot_m: float = 1.0
    walk_speed_mps: float = 30.0 / 45.0

    def path_length_m(self) -> float:
        return self.line_length_m + 4.0 * self.square_side_m + self.overshoot_m

    def duration_s(self) -> float:
        square = (3.0 * self.square_side_m
                  + self.square_side_m + self.overshoot_m) / self.walk_speed_mps
        return self.line_duration_s + self.hold_s + square


EXPERIMENT_KINDS = ("static", "static_disturbed", "rotation", "translation_square")


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    duration_s: float
    seed: int
    side_m: float = DEFAULT_SIDE_M
    base: GeodeticCoord = DEFAULT_BASE
    center_en: tuple[float, float] = (2.0, 3.0)
    fix_rate_hz: float = 14.0
    noiseless: bool = False
    disturbances: tuple[RoverWindow, ...] = ()
    rotation: RotationTimeline = RotationTimeline()
    legs: TranslationLegs = TranslationLegs()

    def __post_init__(self) -> None:
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.duration_s <= 0.0:
            raise ValueError("duration must be positive")
        if self.fix_rate_hz <= 0.0:
            raise ValueError("fix rate must be positive")
        for w in self.disturbances:
            if w.rover_id not in CORNERS:
                raise ValueError(f"disturbance names unknown rover {w.rover_id!r}")
            if not 0.0 <= w.start_s <= w.end_s <= self.duration_s:
                raise ValueError(f"disturbance window [{w.start_s}, {w.end_s}] "
                                 f"outside the {self.duration_s}s run")


def corner_displacement_for_peaks(side_m: float, corner: str,
                                  peaks_m: tuple[float, float]) -> tuple[float, float]:
    """Board-frame displacement of ``corner`` producing exactly ``peaks_m``
    distance errors on its two adjacent sides (closed-form two-circle solve)."""
    (_, u1), (_, u2) = _CORNER_SIDES[corner]
    e1, e2 = peaks_m
    s = side_m
    k = ((s + e1) ** 2 - (s + e2) ** 2) / (2.0 * s)
    disc = 2.0 * (s + e1) ** 2 - (k + s) ** 2
    if disc <= 0.0:
        raise ValueError(f"no displacement realizes side-error pair {peaks_m}")
    beta = (-(k + s) + math.sqrt(disc)) / 2.0
    alpha = beta + k
    return (alpha * u1[0] + beta * u2[0], alpha * u1[1] + beta * u2[1])


def static_spec(seed: int, duration_s: float = 300.0, noiseless: bool = False,
                **overrides) -> ExperimentSpec:
    return ExperimentSpec("static", duration_s, seed, noiseless=noiseless, **overrides)


def disturbed_spec(seed: int, duration_s: float = 300.0, noiseless: bool = False,
                   twist_magnitude_m: float = 0.10,
                   obstruction_magnitude_m: float = 0.12, **overrides) -> ExperimentSpec:
    """Board on the ground: three corner twists plus two longer hand-over-antenna
    windows (timings follow the narrated run)."""
    windows = tuple(
        [RoverWindow("top_right", t0, t0 + 1.5, twist_magnitude_m)
         for t0 in (140.0, 160.0, 230.0)]
        + [RoverWindow("top_left", 170.0, 220.0, obstruction_magnitude_m),
           RoverWindow("top_left", 235.0, duration_s, obstruction_magnitude_m)])
    return ExperimentSpec("static_disturbed", duration_s, seed, noiseless=noiseless,
                          disturbances=windows, **overrides)


def rotation_spec(seed: int, duration_s: float = 60.0, noiseless: bool = False,
                  obstruction_peaks_m: tuple[float, float] = (1.4, 1.5),
                  obstructed_corner: str = "top_right",
                  obstruction_window_s: tuple[float, float] = (51.0, 54.0),
                  side_m: float = DEFAULT_SIDE_M, **overrides) -> ExperimentSpec:
    """Lift, full turn each way, then a short receiver obstruction whose
    displacement is solved so the two adjacent sides peak at the target pair."""
    dx, dy = corner_displacement_for_peaks(side_m, obstructed_corner, obstruction_peaks_m)
    magnitude = math.hypot(dx, dy)
    window = RoverWindow(obstructed_corner, *obstruction_window_s, magnitude,
                         (dx / magnitude, dy / magnitude))
    return ExperimentSpec("rotation", duration_s, seed, side_m=side_m,
                          noiseless=noiseless, disturbances=(window,), **overrides)


def translation_spec(seed: int, noiseless: bool = False,
                     legs: TranslationLegs = TranslationLegs(), **overrides) -> ExperimentSpec:
    return ExperimentSpec("translation_square", legs.duration_s(), seed,
                          noiseless=noiseless, legs=legs, **overrides)


_SPEC_BUILDERS = {
    "static": static_spec,
    "static_disturbed": disturbed_spec,
    "rotation": rotation_spec,
    "translation_square": translation_spec,
}


def make_spec(kind: str, seed: int, **kwargs) -> ExperimentSpec:
    if kind not in _SPEC_BUILDERS:
        raise ValueError(f"unknown experiment kind {kind!r}; "
                         f"expected one of {EXPERIMENT_KINDS}")
    return _SPEC_BUILDERS[kind](seed, **kwargs)


def build_trajectory(spec: ExperimentSpec) -> Callable[[float], BoardPose]:
    cx, cy = spec.center_en
    if spec.kind in ("static", "static_disturbed"):
        center = np.array([cx, cy, 0.0])

        def static_traj(t: float) -> BoardPose:
            return BoardPose(center, 0.0)

        return static_traj

    if spec.kind == "rotation":
        r = spec.rotation
        knots_t = [0.0, r.lift_end_s, r.cw_end_s, r.pause_end_s, r.ccw_end_s, spec.duration_s]
        yaw_knots = [0.0, 0.0, -2.0 * math.pi, -2.0 * math.pi, 0.0, 0.0]
        z_t = [0.0, r.lift_end_s - 2.0, r.lift_end_s, r.ccw_end_s,
               r.ccw_end_s + 1.0, spec.duration_s]
        z_knots = [0.0, 0.0, r.lift_height_m, r.lift_height_m, 0.0, 0.0]

        def rotation_traj(t: float) -> BoardPose:
            yaw = float(np.interp(t, knots_t, yaw_knots))
            z = float(np.interp(t, z_t, z_knots))
            return BoardPose(np.array([cx, cy, z]), yaw)

        return rotation_traj

    legs = spec.legs
    v = legs.walk_speed_mps
    side = legs.square_side_m
    t0 = legs.line_duration_s
    t1 = t0 + legs.hold_s
    leg_t = side / v
    times = [0.0, t0, t1, t1 + leg_t, t1 + 2 * leg_t, t1 + 3 * leg_t,
             t1 + 3 * leg_t + (side + legs.overshoot_m) / v]
    ln = legs.line_length_m
    xs = [0.0, ln, ln, ln, ln - side, ln - side, ln + legs.overshoot_m]
    ys = [0.0, 0.0, 0.0, side, side, 0.0, 0.0]

    def translation_traj(t: float) -> BoardPose:
        x = cx + float(np.interp(t, times, xs))
        y = cy + float(np.interp(t, times, ys))
        return BoardPose(np.array([x, y, 1.0]), 0.0)

    return translation_traj


# -- running ---------------------------------------------------------------


def _draw_biases(spec: ExperimentSpec,
                 ss: np.random.SeedSequence) -> dict[str, tuple[float, float]]:
    """Seeded per-rover constant biases, structured so one or two board sides
    carry a persistent sub-20 cm offset and the rest sit near the true side."""
    biases = {corner: (0.0, 0.0) for corner in CORNERS}
    if spec.noiseless:
        return biases
    rng = np.random.default_rng(ss)
    corner = CORNERS[int(rng.integers(0, 4))]
    mode = int(rng.integers(0, 3))
    magnitude = float(rng.uniform(0.02, 0.14))
    (_, u1), (_, u2) = _CORNER_SIDES[corner]
    if mode == 0:
        direction = u1
    elif mode == 1:
        direction = u2
    else:
        direction = ((u1[0] + u2[0]) / math.sqrt(2.0), (u1[1] + u2[1]) / math.sqrt(2.0))
    biases[corner] = (magnitude * direction[0], magnitude * direction[1])
    return biases


def run_experiment(spec: ExperimentSpec, out) -> Path:
    """Drive the rig through the spec's trajectory, step four rovers at the
    fix rate, and record every ``/*/gps/fix`` topic into the sink bag."""
    trajectory = build_trajectory(spec)
    rig = BoardRig(spec.side_m, CORNERS, trajectory)
    root = np.random.SeedSequence(spec.seed)
    bias_ss, link_ss, *rover_ss = root.spawn(2 + len(CORNERS))
    biases = _draw_biases(spec, bias_ss)

    windows: dict[str, list[DisturbanceWindow]] = {c: [] for c in CORNERS}
    if not spec.noiseless:  # noiseless = every injected error source off
        for w in spec.disturbances:
            ox, oy = w.offset_en()
            windows[w.rover_id].append(DisturbanceWindow(w.start_s, w.end_s, (ox, oy, 0.0)))

    bus = Bus()
    pubs = {}
    for corner in CORNERS:
        node = bus.create_node(corner, "gps")
        pubs[corner] = bus.advertise(node, "gps/fix")
    recorder = record(bus, ["/*/gps/fix"], out)

    link = CorrectionLink(spec.base, seed=link_ss)
    rovers = {}
    for corner, ss in zip(CORNERS, rover_ss):
        config = (RoverConfig.noiseless(fix_rate_hz=spec.fix_rate_hz) if spec.noiseless
                  else RoverConfig(fix_rate_hz=spec.fix_rate_hz, bias_en=biases[corner]))
        rovers[corner] = Rover(corner, config, seed=ss, disturbances=windows[corner])

    steps = round(spec.duration_s * spec.fix_rate_hz)
    for i in range(1, steps + 1):
        t = i / spec.fix_rate_hz
        corrections = link.poll(t)
        positions = rig.corner_positions(t)
        for corner in CORNERS:
            truth = enu_to_geodetic(EnuCoord(*positions[corner]), spec.base)
            fix = rovers[corner].step(truth, corrections, t)
            if fix is not None:
                pubs[corner].publish(fix.stamp, encode_fix(fix))
    return recorder.stop()


def load_bag_fixes(path) -> dict[str, list[RtkFix]]:
    """All fixes in a bag, grouped by rover id (bag order, i.e. stamp order)."""
    fixes: dict[str, list[RtkFix]] = {}
    for rec in read_bag(path):
        fix = decode_fix(rec.payload)
        fixes.setdefault(fix.rover_id, []).append(fix)
    return fixes


# -- analysis ----------------------------------------------------------------


@dataclass(frozen=True)
class DistanceSeries:
    """Per side: stamps (strictly increasing) and measured 3D distances."""

    sides: dict[str, tuple[np.ndarray, np.ndarray]]

    def __post_init__(self) -> None:
        for name, (stamps, dists) in self.sides.items():
            if len(stamps) != len(dists) or len(stamps) == 0:
                raise ValueError(f"side {name!r} series is empty or misaligned")
            if np.any(np.diff(stamps) <= 0.0):
                raise ValueError(f"side {name!r} stamps are not strictly increasing")
            if np.any(dists < 0.0):
                raise ValueError(f"side {name!r} has negative distances")


def _geodetic_to_enu_array(lats, lons, alts, base: GeodeticCoord) -> np.ndarray:
    """Vectorized geodetic -> ENU (Nx3) about ``base``."""
    lat = np.radians(np.asarray(lats, dtype=float))
    lon = np.radians(np.asarray(lons, dtype=float))
    alt = np.asarray(alts, dtype=float)
    s, c = np.sin(lat), np.cos(lat)
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * s * s)
    ecef = np.stack([(n + alt) * c * np.cos(lon),
                     (n + alt) * c * np.sin(lon),
                     (n * (1.0 - WGS84_E2) + alt) * s], axis=1)
    origin = geodetic_to_ecef(base)
    return (ecef - np.array([origin.x, origin.y, origin.z])) @ _enu_basis(base).T


def side_distances(fixes: Mapping[str, Sequence[RtkFix]], base: GeodeticCoord,
                   corners: Mapping[str, str] | None = None,
                   pair_tolerance_s: float | None = None) -> DistanceSeries:
    """Per-side 3D rover distances about ``base``, pairing the two rovers of a
    side by nearest stamp within half a fix period (or ``pair_tolerance_s``).

    ``corners`` maps corner names (top_left, ...) to rover ids when logs use
    different naming; by default the ids are the corner names themselves.
    """
    corner_map = dict(corners) if corners is not None else {c: c for c in CORNERS}
    tracks: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for corner in CORNERS:
        rover_id = corner_map[corner]
        series = fixes.get(rover_id, ())
        if len(series) == 0:
            raise ValueError(f"no fixes for rover {rover_id!r} (corner {corner})")
        stamps = np.array([f.stamp for f in series])
        order = np.argsort(stamps, kind="stable")
        stamps = stamps[order]
        enu = _geodetic_to_enu_array(
            [series[i].position.lat for i in order],
            [series[i].position.lon for i in order],
            [series[i].position.alt for i in order], base)
        tracks[corner] = (stamps, enu)

    sides: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for side in SIDES:
        ca, cb = SIDE_PAIRS[side]
        sa, ea = tracks[ca]
        sb, eb = tracks[cb]
        if pair_tolerance_s is None:
            tol = 0.5 * float(np.median(np.diff(sa))) if len(sa) > 1 else math.inf
        else:
            tol = pair_tolerance_s
        idx = np.clip(np.searchsorted(sb, sa), 0, len(sb) - 1)
        prev = np.maximum(idx - 1, 0)
        use_prev = np.abs(sb[prev] - sa) < np.abs(sb[idx] - sa)
        nearest = np.where(use_prev, prev, idx)
        ok = np.abs(sb[nearest] - sa) <= tol
        # collapse duplicate stamps defensively (strictly increasing output)
        if np.any(ok):
            keep = np.ones(int(np.count_nonzero(ok)), dtype=bool)
            stamps_ok = sa[ok]
            keep[1:] = np.diff(stamps_ok) > 0.0
            d = np.linalg.norm(ea[ok][keep] - eb[nearest[ok]][keep], axis=1)
            sides[side] = (stamps_ok[keep], d)
        else:
            raise ValueError(
                f"rovers {corner_map[ca]!r} and {corner_map[cb]!r} have no "
                f"overlapping fixes within {tol} s (side {side})")
    return DistanceSeries(sides)


@dataclass(frozen=True)
class Peak:
    stamp: float
    magnitude_m: float


@dataclass(frozen=True)
class SideSummary:
    mean_m: float
    max_abs_error_m: float
    slope_m_per_s: float
    peaks: tuple[Peak, ...]
    within_20cm: bool
    stable: bool


@dataclass(frozen=True)
class Report:
    expected_side_m: float
    convergence_s: float
    sides: dict[str, SideSummary]
    within_20cm: bool
    stable: bool


def summarize(series: DistanceSeries, expected_side_m: float,
              windows: Mapping[str, Sequence[tuple[float, float]]] | None = None,
              convergence_s: float = CONVERGENCE_S) -> Report:
    """Post-convergence per-side statistics and verdicts.

    Samples inside declared disturbance ``windows`` (per side, already
    including any decay tail) are excluded from the quiet statistics and the
    verdicts; peaks are excursions beyond twice the quiet standard deviation
    around the quiet mean, lasting at least two samples.
    """
    windows = windows or {}
    summaries: dict[str, SideSummary] = {}
    for side, (stamps, dists) in series.sides.items():
        conv = stamps >= convergence_s
        if not np.any(conv):
            raise ValueError(
                f"side {side!r} series ends before the {convergence_s}s "
                f"convergence window")
        quiet = conv.copy()
        for start, end in windows.get(side, ()):
            quiet &= ~((stamps >= start) & (stamps <= end))
        if not np.any(quiet):
            raise ValueError(f"side {side!r} has no samples outside disturbance windows")
        mu = float(np.mean(dists[quiet]))
        sigma = float(np.std(dists[quiet]))
        err_quiet = dists[quiet] - expected_side_m
        max_abs = float(np.max(np.abs(err_quiet)))
        slope = _fit_slope(stamps[quiet], dists[quiet])
        peaks = _find_peaks(stamps[conv], dists[conv], mu, sigma)
        summaries[side] = SideSummary(
            mean_m=mu,
            max_abs_error_m=max_abs,
            slope_m_per_s=slope,
            peaks=peaks,
            within_20cm=max_abs <= WITHIN_LIMIT_M,
            stable=abs(slope) <= STABLE_SLOPE_LIMIT,
        )
    return Report(expected_side_m, convergence_s, summaries,
                  all(s.within_20cm for s in summaries.values()),
                  all(s.stable for s in summaries.values()))


def _fit_slope(stamps: np.ndarray, values: np.ndarray) -> float:
    if len(stamps) < 2:
        return 0.0
    t = stamps - stamps.mean()
    denom = float(np.dot(t, t))
    if denom == 0.0:
        return 0.0
    return float(np.dot(t, values - values.mean()) / denom)


def _find_peaks(stamps: np.ndarray, dists: np.ndarray, mu: float,
                sigma: float) -> tuple[Peak, ...]:
    dev = np.abs(dists - mu)
    over = dev > PEAK_SIGMA_FACTOR * sigma
    peaks = []
    i = 0
    n = len(over)
    while i < n:
        if not over[i]:
            i += 1
            continue
        j = i
        while j < n and over[j]:
            j += 1
        if j - i >= PEAK_MIN_SAMPLES:
            k = i + int(np.argmax(dev[i:j]))
            peaks.append(Peak(float(stamps[k]), float(dev[k])))
        i = j
    return tuple(peaks)


def side_windows(spec: ExperimentSpec,
                 decay_s: float = 3.0) -> dict[str, list[tuple[float, float]]]:
    """Disturbance exclusion intervals per affected side, decay tail included."""
    out: dict[str, list[tuple[float, float]]] = {}
    for w in spec.disturbances:
        for side, _ in _CORNER_SIDES[w.rover_id]:
            out.setdefault(side, []).append((w.start_s, w.end_s + decay_s))
    return out


def analyze_bag(path, base: GeodeticCoord = DEFAULT_BASE,
                expected_side_m: float = DEFAULT_SIDE_M,
                windows: Mapping[str, Sequence[tuple[float, float]]] | None = None,
                convergence_s: float = CONVERGENCE_S,
                corners: Mapping[str, str] | None = None) -> tuple[DistanceSeries, Report]:
    series = side_distances(load_bag_fixes(path), base, corners=corners)
    return series, summarize(series, expected_side_m, windows, convergence_s)


# -- output -------------------------------------------------------------------


def emit_csv(obj, out) -> None:
    """Write a DistanceSeries or Report as deterministic fixed-format CSV."""
    if isinstance(obj, DistanceSeries):
        text = _series_csv(obj)
    elif isinstance(obj, Report):
        text = _report_csv(obj)
    else:
        raise TypeError(f"cannot emit {type(obj).__name__} as CSV")
    Path(out).write_text(text)


def _series_csv(series: DistanceSeries) -> str:
    all_stamps = sorted(set().union(*(map(float, s) for s, _ in series.sides.values())))
    lookups = {}
    for side, (stamps, dists) in series.sides.items():
        tol = 0.5 * float(np.median(np.diff(stamps))) if len(stamps) > 1 else 0.0
        lookups[side] = (stamps, dists, tol)
    lines = ["stamp_s,d_top,d_right,d_bottom,d_left"]
    for stamp in all_stamps:
        cells = [f"{stamp:.6f}"]
        for side in SIDES:
            stamps, dists, tol = lookups[side]
            i = int(np.searchsorted(stamps, stamp))
            best = None
            for j in (i - 1, i):
                if 0 <= j < len(stamps) and abs(stamps[j] - stamp) <= tol:
                    if best is None or abs(stamps[j] - stamp) < abs(stamps[best] - stamp):
                        best = j
            cells.append(f"{dists[best]:.6f}" if best is not None else "")
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _report_csv(report: Report) -> str:
    rows: list[tuple[str, str]] = [
        ("expected_side_m", f"{report.expected_side_m:.6f}"),
        ("convergence_s", f"{report.convergence_s:.6f}"),
    ]
    for side in SIDES:
        if side not in report.sides:
            continue
        s = report.sides[side]
        rows.append((f"{side}_mean_m", f"{s.mean_m:.6f}"))
        rows.append((f"{side}_max_abs_error_m", f"{s.max_abs_error_m:.6f}"))
        rows.append((f"{side}_slope_mm_per_min", f"{s.slope_m_per_s * 60000.0:.6f}"))
        rows.append((f"{side}_within_20cm", _bool(s.within_20cm)))
        rows.append((f"{side}_stable", _bool(s.stable)))
        rows.append((f"{side}_peak_count", str(len(s.peaks))))
        for i, peak in enumerate(s.peaks, start=1):
            rows.append((f"{side}_peak_{i}_stamp_s", f"{peak.stamp:.6f}"))
            rows.append((f"{side}_peak_{i}_magnitude_m", f"{peak.magnitude_m:.6f}"))
    rows.append(("within_20cm", _bool(report.within_20cm)))
    rows.append(("stable", _bool(report.stable)))
    return "key,value\n" + "\n".join(f"{k},{v}" for k, v in rows) + "\n"


def _bool(value: bool) -> str:
    return "true" if value else "false"
