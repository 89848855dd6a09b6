"""Geolocation pipeline: geodetic/ECEF/ENU conversions anchored at a fixed
RTK base, a simulated correction link, and a stochastic rover fix model.

Conversions use the WGS84 closed forms (a = 6378137 m, f = 1/298.257223563);
the inverse is Bowring's start refined by a short fixed-point iteration.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)
WGS84_B = WGS84_A * (1.0 - WGS84_F)
_EP2 = WGS84_E2 / (1.0 - WGS84_E2)  # second eccentricity squared

DEFAULT_FIX_RATE_HZ = 14.0
DEFAULT_CORRECTION_TIMEOUT_S = 5.0
DEFAULT_CORRECTION_INTERVAL_S = 1.0
DISTURBANCE_DECAY_S = 3.0


@dataclass(frozen=True)
class GeodeticCoord:
    """Latitude/longitude in degrees, altitude in meters above the ellipsoid."""

    lat: float
    lon: float
    alt: float

    def __post_init__(self) -> None:
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 < self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside (-180, 180]")
        if not math.isfinite(self.alt):
            raise ValueError(f"altitude {self.alt} is not finite")


@dataclass(frozen=True)
class EcefCoord:
    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError("ECEF coordinates must be finite")


@dataclass(frozen=True)
class EnuCoord:
    east: float
    north: float
    up: float


class FixQuality(Enum):
    SINGLE = "single"
    FLOAT = "float"
    FIXED = "fixed"


_QUALITY_ORDER = (FixQuality.SINGLE, FixQuality.FLOAT, FixQuality.FIXED)


@dataclass(frozen=True)
class RtkFix:
    rover_id: str
    position: GeodeticCoord
    quality: FixQuality
    stamp: float


@dataclass(frozen=True)
class CorrectionMsg:
    base_position: GeodeticCoord
    epoch: int
    stamp: float


# -- conversions -------------------------------------------------------


def geodetic_to_ecef(g: GeodeticCoord) -> EcefCoord:
    lat = math.radians(g.lat)
    lon = math.radians(g.lon)
    s, c = math.sin(lat), math.cos(lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * s * s)
    return EcefCoord(
        (n + g.alt) * c * math.cos(lon),
        (n + g.alt) * c * math.sin(lon),
        (n * (1.0 - WGS84_E2) + g.alt) * s,
    )


def ecef_to_geodetic(p: EcefCoord) -> GeodeticCoord:
    """Bowring's starting latitude refined by <= 5 fixed-point iterations."""
    x, y, z = p.x, p.y, p.z
    rho = math.hypot(x, y)
    if rho < 1e-12 and abs(z) < 1e-12:
        raise ValueError("ECEF point at Earth center has no geodetic image")
    lon = math.atan2(y, x)
    if rho < 1e-9:
        lat = math.copysign(math.pi / 2.0, z)
        return GeodeticCoord(math.degrees(lat), math.degrees(lon), abs(z) - WGS84_B)
    beta = math.atan2(WGS84_A * z, WGS84_B * rho)
    lat = math.atan2(z + _EP2 * WGS84_B * math.sin(beta) ** 3,
                     rho - WGS84_E2 * WGS84_A * math.cos(beta) ** 3)
    for _ in range(5):
        s = math.sin(lat)
        n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * s * s)
        new_lat = math.atan2(z + WGS84_E2 * n * s, rho)
        if abs(new_lat - lat) < 1e-14:
            lat = new_lat
            break
        lat = new_lat
    s, c = math.sin(lat), math.cos(lat)
    alt = rho * c + z * s - WGS84_A * math.sqrt(1.0 - WGS84_E2 * s * s)
    lon_deg = math.degrees(lon)
    if lon_deg <= -180.0:
        lon_deg += 360.0
    return GeodeticCoord(math.degrees(lat), lon_deg, alt)


def _enu_basis(base: GeodeticCoord) -> np.ndarray:
    """Rows are the east/north/up unit vectors at ``base`` in ECEF."""
    lat = math.radians(base.lat)
    lon = math.radians(base.lon)
    sp, cp = math.sin(lat), math.cos(lat)
    sl, cl = math.sin(lon), math.cos(lon)
    return np.array([
        [-sl, cl, 0.0],
        [-sp * cl, -sp * sl, cp],
        [cp * cl, cp * sl, sp],
    ])


def ecef_to_enu(p: EcefCoord, base: GeodeticCoord) -> EnuCoord:
    origin = geodetic_to_ecef(base)
    d = np.array([p.x - origin.x, p.y - origin.y, p.z - origin.z])
    e = _enu_basis(base) @ d
    return EnuCoord(float(e[0]), float(e[1]), float(e[2]))


def enu_to_ecef(e: EnuCoord, base: GeodeticCoord) -> EcefCoord:
    origin = geodetic_to_ecef(base)
    d = _enu_basis(base).T @ np.array([e.east, e.north, e.up])
    return EcefCoord(float(origin.x + d[0]), float(origin.y + d[1]),
                     float(origin.z + d[2]))


def geodetic_to_enu(g: GeodeticCoord, base: GeodeticCoord) -> EnuCoord:
    return ecef_to_enu(geodetic_to_ecef(g), base)


def enu_to_geodetic(e: EnuCoord, base: GeodeticCoord) -> GeodeticCoord:
    return ecef_to_geodetic(enu_to_ecef(e, base))


# -- fix wire/file formats ----------------------------------------------

_FIX_HEAD = struct.Struct("<ddddB")
_QUALITY_CODE = {q: i for i, q in enumerate(_QUALITY_ORDER)}

FIX_CSV_HEADER = ["stamp_s", "rover_id", "lat_deg", "lon_deg", "alt_m", "quality"]


def encode_fix(fix: RtkFix) -> bytes:
    rid = fix.rover_id.encode()
    head = _FIX_HEAD.pack(fix.stamp, fix.position.lat, fix.position.lon,
                          fix.position.alt, _QUALITY_CODE[fix.quality])
    return head + struct.pack("<I", len(rid)) + rid


def decode_fix(payload: bytes) -> RtkFix:
    stamp, lat, lon, alt, qcode = _FIX_HEAD.unpack_from(payload)
    (rid_len,) = struct.unpack_from("<I", payload, _FIX_HEAD.size)
    start = _FIX_HEAD.size + 4
    rover_id = payload[start:start + rid_len].decode()
    return RtkFix(rover_id, GeodeticCoord(lat, lon, alt), _QUALITY_ORDER[qcode], stamp)


def write_fix_csv(path, fixes: Iterable[RtkFix]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FIX_CSV_HEADER)
        for fix in fixes:
            writer.writerow([
                f"{fix.stamp:.6f}", fix.rover_id,
                f"{fix.position.lat:.12f}", f"{fix.position.lon:.12f}",
                f"{fix.position.alt:.6f}", fix.quality.value,
            ])


def read_fix_csv(path) -> list[RtkFix]:
    fixes = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(FIX_CSV_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"fix CSV {path} is missing columns {sorted(missing)}")
        for row in reader:
            fixes.append(RtkFix(
                row["rover_id"],
                GeodeticCoord(float(row["lat_deg"]), float(row["lon_deg"]),
                              float(row["alt_m"])),
                FixQuality(row["quality"]),
                float(row["stamp_s"]),
            ))
    return fixes


# -- rover model --------------------------------------------------------


@dataclass(frozen=True)
class RoverConfig:
    """Error model and cadence of one simulated RTK rover.

    Horizontal/vertical sigmas are per fix-quality grade; ``bias_en`` pins the
    constant horizontal bias (east, north) or, when None, draws magnitude
    uniformly from [0, 0.20] m in a random direction.
    """

    fix_rate_hz: float = DEFAULT_FIX_RATE_HZ
    correction_timeout_s: float = DEFAULT_CORRECTION_TIMEOUT_S
    fixed_sigma_h: float = 0.01
    fixed_sigma_v: float = 0.02
    float_sigma_h: float = 0.25
    float_sigma_v: float = 0.50
    single_sigma_h: float = 1.5
    single_sigma_v: float = 3.0
    bias_en: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.fix_rate_hz <= 0.0:
            raise ValueError(f"fix rate must be positive, got {self.fix_rate_hz}")
        if self.correction_timeout_s <= 0.0:
            raise ValueError("correction timeout must be positive")

    def sigmas(self, quality: FixQuality) -> tuple[float, float]:
        if quality is FixQuality.FIXED:
            return self.fixed_sigma_h, self.fixed_sigma_v
        if quality is FixQuality.FLOAT:
            return self.float_sigma_h, self.float_sigma_v
        return self.single_sigma_h, self.single_sigma_v

    @classmethod
    def noiseless(cls, **overrides) -> "RoverConfig":
        params = dict(fixed_sigma_h=0.0, fixed_sigma_v=0.0, float_sigma_h=0.0,
                      float_sigma_v=0.0, single_sigma_h=0.0, single_sigma_v=0.0,
                      bias_en=(0.0, 0.0))
        params.update(overrides)
        return cls(**params)


def fix_rate(config: RoverConfig | None = None) -> float:
    """Configured rover report frequency in hertz (default 14)."""
    return (config if config is not None else RoverConfig()).fix_rate_hz


@dataclass(frozen=True)
class DisturbanceWindow:
    """Additive position-error pulse: full offset inside [start, end], then a
    linear decay to zero over ``decay_s``."""

    start_s: float
    end_s: float
    offset_enu: tuple[float, float, float]
    decay_s: float = DISTURBANCE_DECAY_S

    def __post_init__(self) -> None:
        if self.end_s < self.start_s:
            raise ValueError("disturbance window ends before it starts")

    def envelope(self, t: float) -> float:
        if t < self.start_s or t > self.end_s + self.decay_s:
            return 0.0
        if t <= self.end_s:
            return 1.0
        return 1.0 - (t - self.end_s) / self.decay_s


class CorrectionLink:
    """Fixed-interval correction stream from the base, with optional latency
    and seeded drops standing in for a lossy radio link."""

    def __init__(self, base: GeodeticCoord, interval_s: float = DEFAULT_CORRECTION_INTERVAL_S,
                 latency_s: float = 0.0, drop_prob: float = 0.0,
                 seed: int | np.random.SeedSequence = 0) -> None:
        if interval_s <= 0.0:
            raise ValueError("correction interval must be positive")
        if latency_s < 0.0:
            raise ValueError("latency cannot be negative")
        if not 0.0 <= drop_prob <= 1.0:
            raise ValueError("drop probability must be in [0, 1]")
        self.base = base
        self.interval_s = interval_s
        self.latency_s = latency_s
        self.drop_prob = drop_prob
        self._rng = np.random.default_rng(seed)
        self._next_epoch = 1

    def poll(self, now: float) -> list[CorrectionMsg]:
        """Corrections that have arrived by ``now`` since the previous poll."""
        out = []
        while True:
            send_t = self._next_epoch * self.interval_s
            if send_t + self.latency_s > now:
                break
            dropped = self.drop_prob > 0.0 and self._rng.random() < self.drop_prob
            if not dropped:
                out.append(CorrectionMsg(self.base, self._next_epoch, send_t))
            self._next_epoch += 1
        return out


class Rover:
    """One mobile receiver: correction-freshness-driven fix quality plus a
    seeded error model (constant bias, per-grade Gaussian noise, transients).

    The reported position offsets the true position by the ENU error vector in
    the local tangent plane at the true position. Quality moves at most one
    grade per fix, toward `fixed` while corrections stay fresher than the
    timeout and down one grade per additional timeout elapsed.
    """

    def __init__(self, rover_id: str, config: RoverConfig | None = None,
                 seed: int | np.random.SeedSequence = 0,
                 disturbances: Sequence[DisturbanceWindow] = ()) -> None:
        self.rover_id = rover_id
        self.config = config if config is not None else RoverConfig()
        self._rng = np.random.default_rng(seed)
        if self.config.bias_en is None:
            magnitude = self._rng.uniform(0.0, 0.20)
            angle = self._rng.uniform(0.0, 2.0 * math.pi)
            self._bias = np.array([magnitude * math.cos(angle),
                                   magnitude * math.sin(angle), 0.0])
        else:
            self._bias = np.array([*self.config.bias_en, 0.0])
        self._disturbances = list(disturbances)
        self._quality = FixQuality.SINGLE
        self._last_corr_stamp: float | None = None
        self._last_epoch = 0
        self._next_fix_index = 1
        self._last_now: float | None = None

    @property
    def quality(self) -> FixQuality:
        return self._quality

    @property
    def bias_en(self) -> tuple[float, float]:
        return float(self._bias[0]), float(self._bias[1])

    def add_disturbance(self, window: DisturbanceWindow) -> None:
        self._disturbances.append(window)

    def receive_correction(self, msg: CorrectionMsg) -> None:
        if msg.epoch <= self._last_epoch:
            raise ValueError(
                f"correction epoch {msg.epoch} does not advance past {self._last_epoch}")
        self._last_epoch = msg.epoch
        if self._last_corr_stamp is None or msg.stamp > self._last_corr_stamp:
            self._last_corr_stamp = msg.stamp

    def step(self, true_position: GeodeticCoord, corrections: Iterable[CorrectionMsg],
             now: float) -> RtkFix | None:
        """Ingest corrections and emit the fix due by ``now``, if any.

        ``now`` must be monotone. Stepping slower than the fix period emits
        only the latest due epoch.
        """
        if self._last_now is not None and now < self._last_now:
            raise ValueError(f"time went backwards: {now} < {self._last_now}")
        self._last_now = now
        for msg in corrections:
            self.receive_correction(msg)
        rate = self.config.fix_rate_hz
        stamp = None
        while self._next_fix_index / rate <= now + 1e-9:
            stamp = self._next_fix_index / rate
            self._next_fix_index += 1
        if stamp is None:
            return None
        self._update_quality(stamp)
        error = self._error_vector(stamp)
        if np.any(error):
            measured = enu_to_geodetic(EnuCoord(*error), true_position)
        else:
            measured = true_position
        return RtkFix(self.rover_id, measured, self._quality, stamp)

    def _update_quality(self, now: float) -> None:
        timeout = self.config.correction_timeout_s
        if self._last_corr_stamp is None:
            target = FixQuality.SINGLE
        else:
            staleness = now - self._last_corr_stamp
            if staleness <= timeout:
                target = FixQuality.FIXED
            elif staleness <= 2.0 * timeout:
                target = FixQuality.FLOAT
            else:
                target = FixQuality.SINGLE
        cur = _QUALITY_ORDER.index(self._quality)
        tgt = _QUALITY_ORDER.index(target)
        if tgt > cur:
            self._quality = _QUALITY_ORDER[cur + 1]
        elif tgt < cur:
            self._quality = _QUALITY_ORDER[cur - 1]

    def _error_vector(self, stamp: float) -> np.ndarray:
        sigma_h, sigma_v = self.config.sigmas(self._quality)
        draws = self._rng.standard_normal(3)
        error = self._bias + draws * np.array([sigma_h, sigma_h, sigma_v])
        for window in self._disturbances:
            k = window.envelope(stamp)
            if k > 0.0:
                error = error + k * np.array(window.offset_enu)
        return error
