"""Declarative experiment description: load, validate, serialize.

Scenario files are TOML with the sections ``[array]``, ``[waveform]``,
``[pa]``, ``[[users]]``, ``[grid]``, ``[channel]``, ``[precoder]`` and
``[output]``, plus the top-level keys ``name``, ``seed`` and
``los_elevated``.  Physical quantities carry their unit in the key name.
Angles are written in degrees and converted to radians on access.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SPEED_OF_LIGHT = 299_792_458.0
PA_ALPHA = 1.0 - 10.0 ** (-1.0 / 20.0)

ELEMENT_PATTERNS = ("isotropic", "cosine-patch")
CHANNEL_MODELS = ("los", "cluster", "rayleigh", "imported")
PRECODERS = ("MR", "ZF", "RZF")
PA_MODES = ("baseband", "literal")
PA_NORMALIZATIONS = ("per-antenna", "array")
HEATMAP_QUANTITIES = ("oob_power", "ib_power", "aclr")

ELEVATED_HEIGHT_M = 50.0

PROFILES: dict[str, dict[str, Any]] = {
    "desk": {"array.num_antennas": 32},
    "paper": {"array.num_antennas": 128},
}


class ScenarioError(ValueError):
    """Schema or invariant violation, tagged with the offending field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True)
class ArraySpec:
    num_antennas: int = 128
    element_spacing_m: float = 0.5 * SPEED_OF_LIGHT / 3.5e9
    element_pattern: str = "cosine-patch"
    bs_position_m: tuple[float, float, float] = (0.0, 222.0, 29.0)
    boresight_azimuth_deg: float = 0.0

    @property
    def boresight_azimuth(self) -> float:
        return math.radians(self.boresight_azimuth_deg)

    @property
    def bs_position(self) -> np.ndarray:
        return np.asarray(self.bs_position_m, dtype=float)

    @property
    def boresight(self) -> np.ndarray:
        a = self.boresight_azimuth
        return np.array([math.cos(a), math.sin(a), 0.0])

    @property
    def axis(self) -> np.ndarray:
        """Unit vector from element m to element m+1.

        Elements run towards the negative-angle side so that a point at
        positive angle sees element m delayed by ``m*d*sin(theta)/c``.
        """
        a = self.boresight_azimuth
        return np.array([math.sin(a), -math.cos(a), 0.0])

    def element_positions(self) -> np.ndarray:
        m = np.arange(self.num_antennas)[:, None]
        return self.bs_position[None, :] + m * self.element_spacing_m * self.axis[None, :]


@dataclass(frozen=True)
class WaveformSpec:
    center_frequency_hz: float = 3.5e9
    bandwidth_hz: float = 40e6
    num_subcarriers: int = 256
    num_active_subcarriers: int = 192
    qam_order: int = 16
    rrc_rolloff: float = 0.22
    rrc_span_symbols: int = 128
    oversampling_factor: int = 4
    num_ofdm_symbols: int = 14
    edge_window_samples: int = 8

    @property
    def cp_length(self) -> int:
        return self.num_subcarriers // 8

    @property
    def subcarrier_spacing_hz(self) -> float:
        return self.bandwidth_hz / self.num_subcarriers

    @property
    def sample_rate_hz(self) -> float:
        return self.oversampling_factor * self.bandwidth_hz

    @property
    def num_qam_symbols(self) -> int:
        return self.num_ofdm_symbols * self.num_active_subcarriers


@dataclass(frozen=True)
class PaSpec:
    enabled: bool = True
    back_off_db: float = 7.0
    alpha: float = PA_ALPHA
    mode: str = "baseband"
    normalization: str = "per-antenna"


@dataclass(frozen=True)
class UserSpec:
    angle_deg: float | None = None
    range_m: float = 200.0
    position_m: tuple[float, float, float] | None = None
    height_m: float = 1.5

    @property
    def angle(self) -> float | None:
        return None if self.angle_deg is None else math.radians(self.angle_deg)


@dataclass(frozen=True)
class GridSpec:
    area_width_m: float = 440.0
    area_height_m: float = 444.0
    points_x: int = 25
    points_y: int = 25
    observer_height_m: float = 1.5

    @property
    def dx(self) -> float:
        return self.area_width_m / self.points_x

    @property
    def dy(self) -> float:
        return self.area_height_m / self.points_y

    def cell_centers(self, height_m: float | None = None) -> np.ndarray:
        """Observer positions ``[points_y, points_x, 3]``; row 0 is the top (max y) row."""
        z = self.observer_height_m if height_m is None else height_m
        x = (np.arange(self.points_x) + 0.5) * self.dx
        y = self.area_height_m - (np.arange(self.points_y) + 0.5) * self.dy
        xx, yy = np.meshgrid(x, y)
        return np.stack([xx, yy, np.full_like(xx, z)], axis=-1)


@dataclass(frozen=True)
class ChannelSpec:
    model: str = "los"
    path_loss: bool = True
    spherical_wavefront: bool = False
    num_clusters: int = 8
    rays_per_cluster: int = 20
    cluster_angular_spread_deg: float = 5.0
    cluster_angle_range_deg: float = 60.0
    rms_delay_spread_s: float = 300e-9
    intra_cluster_delay_spread_s: float = 10e-9
    num_taps: int = 8
    tap_spacing_s: float = 25e-9
    file: str | None = None


@dataclass(frozen=True)
class PrecoderSpec:
    kind: str = "MR"
    regularization: float | None = None
    nominal_snr_db: float = 10.0


@dataclass(frozen=True)
class OutputSpec:
    heatmap_quantity: str = "oob_power"
    image_min_db: float | None = None
    image_max_db: float | None = None
    azimuth_bin_deg: float = 1.0
    peak_threshold_db: float = 10.0
    range_compensation: bool = True
    point_chunk: int = 16


@dataclass(frozen=True)
class ScenarioSpec:
    users: tuple[UserSpec, ...]
    name: str = "scenario"
    seed: int = 0
    los_elevated: bool = False
    array: ArraySpec = field(default_factory=ArraySpec)
    waveform: WaveformSpec = field(default_factory=WaveformSpec)
    pa: PaSpec = field(default_factory=PaSpec)
    grid: GridSpec = field(default_factory=GridSpec)
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    precoder: PrecoderSpec = field(default_factory=PrecoderSpec)
    output: OutputSpec = field(default_factory=OutputSpec)
    base_dir: str | None = field(default=None, compare=False)

    @property
    def num_users(self) -> int:
        return len(self.users)

    @property
    def bs_position(self) -> np.ndarray:
        pos = self.array.bs_position.copy()
        if self.los_elevated:
            pos[2] = ELEVATED_HEIGHT_M
        return pos

    @property
    def observer_height_m(self) -> float:
        return ELEVATED_HEIGHT_M if self.los_elevated else self.grid.observer_height_m

    def effective_array(self) -> ArraySpec:
        """The array with the elevated-LoS height applied."""
        return replace(self.array, bs_position_m=tuple(float(v) for v in self.bs_position))

    def observer_positions(self) -> np.ndarray:
        """Observer positions flattened in heatmap (row-major, row 0 = max y) order."""
        return self.grid.cell_centers(self.observer_height_m).reshape(-1, 3)

    def receive_points(self) -> np.ndarray:
        """All receive points: users first, then observers."""
        return np.vstack([resolve_user_positions(self), self.observer_positions()])

    def channel_file(self) -> Path | None:
        if self.channel.file is None:
            return None
        p = Path(self.channel.file)
        if not p.is_absolute() and self.base_dir is not None:
            p = Path(self.base_dir) / p
        return p


_SECTIONS: dict[str, type] = {
    "array": ArraySpec,
    "waveform": WaveformSpec,
    "pa": PaSpec,
    "grid": GridSpec,
    "channel": ChannelSpec,
    "precoder": PrecoderSpec,
    "output": OutputSpec,
}
_TOP_LEVEL = {"name", "seed", "los_elevated", "users", *_SECTIONS}


def _field_types(cls: type) -> dict[str, Any]:
    return {f.name: f for f in dataclasses.fields(cls)}


def _coerce(path: str, value: Any, default: Any, annotation: str) -> Any:
    # Annotations are strings because of ``from __future__ import annotations``.
    if value is None:
        raise ScenarioError(path, "null is not allowed")
    if "tuple" in annotation:
        if not isinstance(value, (list, tuple)) or len(value) != 3:
            raise ScenarioError(path, "expected a list of three numbers")
        try:
            return tuple(float(v) for v in value)
        except (TypeError, ValueError):
            raise ScenarioError(path, "expected numbers") from None
    if annotation.startswith("bool"):
        if not isinstance(value, bool):
            raise ScenarioError(path, f"expected a boolean, got {value!r}")
        return value
    if annotation.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ScenarioError(path, f"expected an integer, got {value!r}")
        return value
    if annotation.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ScenarioError(path, f"expected a number, got {value!r}")
        return float(value)
    if annotation.startswith("str"):
        if not isinstance(value, str):
            raise ScenarioError(path, f"expected a string, got {value!r}")
        return value
    return value


def _build(cls: type, data: Any, path: str):
    if not isinstance(data, dict):
        raise ScenarioError(path, "expected a table")
    fields = _field_types(cls)
    kwargs = {}
    for key, value in data.items():
        if key not in fields or key == "base_dir":
            raise ScenarioError(f"{path}.{key}", "unknown key")
        kwargs[key] = _coerce(f"{path}.{key}", value, fields[key].default, str(fields[key].type))
    return cls(**kwargs)


def _check(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ScenarioError(path, message)


def validate(spec: ScenarioSpec) -> ScenarioSpec:
    """Check every invariant; returns ``spec`` unchanged on success."""
    a, w, pa, g, ch, pc, out = (spec.array, spec.waveform, spec.pa, spec.grid,
                                spec.channel, spec.precoder, spec.output)
    _check(spec.seed >= 0, "seed", "must be a nonnegative integer")
    _check(a.num_antennas >= 1, "array.num_antennas", "must be >= 1")
    _check(a.element_spacing_m > 0, "array.element_spacing_m", "must be > 0")
    _check(a.element_pattern in ELEMENT_PATTERNS, "array.element_pattern",
           f"must be one of {ELEMENT_PATTERNS}")

    _check(w.center_frequency_hz > 0, "waveform.center_frequency_hz", "must be > 0")
    _check(w.bandwidth_hz > 0, "waveform.bandwidth_hz", "must be > 0")
    _check(w.num_subcarriers >= 2 and w.num_subcarriers % 2 == 0,
           "waveform.num_subcarriers", "must be a positive even integer")
    _check(1 <= w.num_active_subcarriers <= w.num_subcarriers,
           "waveform.num_active_subcarriers", "must be in [1, num_subcarriers]")
    order = w.qam_order
    _check(order >= 4 and (order & (order - 1)) == 0 and int(math.log2(order)) % 2 == 0,
           "waveform.qam_order", "must be a square power of two (4, 16, 64, ...)")
    _check(0 < w.rrc_rolloff <= 1, "waveform.rrc_rolloff", "must be in (0, 1]")
    _check(w.rrc_span_symbols >= 2 and w.rrc_span_symbols % 2 == 0,
           "waveform.rrc_span_symbols", "must be an even integer >= 2")
    _check(w.oversampling_factor >= 4, "waveform.oversampling_factor",
           "must be >= 4: the sampled span must cover both adjacent bands (-3B/2..3B/2)")
    _check(w.num_ofdm_symbols >= 1, "waveform.num_ofdm_symbols", "must be >= 1")
    _check(0 <= w.edge_window_samples <= w.cp_length, "waveform.edge_window_samples",
           "must be in [0, cp_length]")

    _check(pa.back_off_db >= 0, "pa.back_off_db", "must be >= 0")
    _check(0 <= pa.alpha < 1, "pa.alpha", "must be in [0, 1)")
    _check(pa.mode in PA_MODES, "pa.mode", f"must be one of {PA_MODES}")
    _check(pa.normalization in PA_NORMALIZATIONS, "pa.normalization",
           f"must be one of {PA_NORMALIZATIONS}")

    _check(len(spec.users) >= 1, "users", "at least one user is required")
    for i, u in enumerate(spec.users):
        p = f"users[{i}]"
        _check((u.angle_deg is None) != (u.position_m is None), p,
               "give exactly one of angle_deg or position_m")
        if u.angle_deg is not None:
            _check(-90.0 < u.angle_deg < 90.0, f"{p}.angle_deg", "must be in (-90, 90)")
            _check(u.range_m > 0, f"{p}.range_m", "must be > 0")
        _check(u.height_m >= 0, f"{p}.height_m", "must be >= 0")

    _check(g.area_width_m > 0, "grid.area_width_m", "must be > 0")
    _check(g.area_height_m > 0, "grid.area_height_m", "must be > 0")
    _check(g.points_x >= 1, "grid.points_x", "must be >= 1")
    _check(g.points_y >= 1, "grid.points_y", "must be >= 1")

    _check(ch.model in CHANNEL_MODELS, "channel.model", f"must be one of {CHANNEL_MODELS}")
    _check(ch.num_clusters >= 1, "channel.num_clusters", "must be >= 1")
    _check(ch.rays_per_cluster >= 1, "channel.rays_per_cluster", "must be >= 1")
    _check(ch.cluster_angular_spread_deg >= 0, "channel.cluster_angular_spread_deg", "must be >= 0")
    _check(ch.rms_delay_spread_s >= 0, "channel.rms_delay_spread_s", "must be >= 0")
    _check(ch.intra_cluster_delay_spread_s >= 0, "channel.intra_cluster_delay_spread_s",
           "must be >= 0")
    _check(ch.num_taps >= 1, "channel.num_taps", "must be >= 1")
    _check(ch.tap_spacing_s > 0, "channel.tap_spacing_s", "must be > 0")
    _check(ch.model != "imported" or ch.file is not None, "channel.file",
           "required when model = 'imported'")

    _check(pc.kind in PRECODERS, "precoder.kind", f"must be one of {PRECODERS}")
    _check(pc.regularization is None or pc.regularization >= 0, "precoder.regularization",
           "must be >= 0")
    _check(pc.kind == "MR" or spec.num_users <= a.num_antennas, "precoder.kind",
           "zero-forcing needs num_users <= num_antennas")

    _check(out.heatmap_quantity in HEATMAP_QUANTITIES, "output.heatmap_quantity",
           f"must be one of {HEATMAP_QUANTITIES}")
    _check(out.azimuth_bin_deg > 0, "output.azimuth_bin_deg", "must be > 0")
    _check(out.peak_threshold_db > 0, "output.peak_threshold_db", "must be > 0")
    _check(out.point_chunk >= 1, "output.point_chunk", "must be >= 1")
    if out.image_min_db is not None and out.image_max_db is not None:
        _check(out.image_min_db < out.image_max_db, "output.image_max_db",
               "must exceed image_min_db")
    return spec


def scenario_from_dict(doc: dict[str, Any], base_dir: str | None = None) -> ScenarioSpec:
    for key in doc:
        if key not in _TOP_LEVEL:
            raise ScenarioError(key, "unknown key")
    if "users" not in doc:
        raise ScenarioError("users", "missing required key")
    users_raw = doc["users"]
    if not isinstance(users_raw, list):
        raise ScenarioError("users", "expected a list of tables")
    users = tuple(_build(UserSpec, u, f"users[{i}]") for i, u in enumerate(users_raw))

    kwargs: dict[str, Any] = {"users": users, "base_dir": base_dir}
    top = _field_types(ScenarioSpec)
    for key in ("name", "seed", "los_elevated"):
        if key in doc:
            kwargs[key] = _coerce(key, doc[key], top[key].default, str(top[key].type))
    for section, cls in _SECTIONS.items():
        if section in doc:
            kwargs[section] = _build(cls, doc[section], section)
    try:
        spec = ScenarioSpec(**kwargs)
    except TypeError as exc:  # pragma: no cover - guarded by _build
        raise ScenarioError("<root>", str(exc)) from None
    return validate(spec)


def load_scenario(source: str | bytes, base_dir: str | None = None) -> ScenarioSpec:
    """Parse a TOML scenario document and return a validated spec with defaults applied."""
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    try:
        doc = tomllib.loads(source)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError("<document>", f"malformed TOML: {exc}") from None
    return scenario_from_dict(doc, base_dir=base_dir)


def load_scenario_file(path: str | Path, overrides: dict[str, Any] | None = None,
                       profile: str | None = None) -> ScenarioSpec:
    """Read a scenario file, apply profile defaults and dotted-key overrides."""
    path = Path(path)
    doc = tomllib.loads(path.read_text(encoding="utf-8"))
    if profile is not None:
        if profile not in PROFILES:
            raise ScenarioError("profile", f"unknown profile {profile!r}")
        for key, value in PROFILES[profile].items():
            section, _, name = key.partition(".")
            doc.setdefault(section, {}).setdefault(name, value)
    for key, value in (overrides or {}).items():
        set_dotted(doc, key, value)
    return scenario_from_dict(doc, base_dir=str(path.parent))


def _drop_none(d: dict[str, Any]) -> dict[str, Any]:
    out = {}
    for k, v in d.items():
        if v is None:
            continue
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def scenario_to_dict(spec: ScenarioSpec) -> dict[str, Any]:
    doc: dict[str, Any] = {"name": spec.name, "seed": spec.seed, "los_elevated": spec.los_elevated}
    for section in _SECTIONS:
        doc[section] = _drop_none(dataclasses.asdict(getattr(spec, section)))
    doc["users"] = [_drop_none(dataclasses.asdict(u)) for u in spec.users]
    return doc


def serialize_scenario(spec: ScenarioSpec) -> str:
    return tomli_w.dumps(scenario_to_dict(spec))


def scenario_hash(spec: ScenarioSpec) -> str:
    return hashlib.sha256(serialize_scenario(spec).encode("utf-8")).hexdigest()


def set_dotted(doc: dict[str, Any], key: str, value: Any) -> None:
    """Set ``section.name`` (or a top-level key) in a raw scenario document."""
    section, dot, name = key.partition(".")
    if not dot:
        if key not in _TOP_LEVEL or key in _SECTIONS or key == "users":
            raise ScenarioError(key, "unknown or non-scalar key")
        doc[key] = value
        return
    if section not in _SECTIONS or name not in _field_types(_SECTIONS[section]):
        raise ScenarioError(key, "unknown key")
    doc.setdefault(section, {})[name] = value


def parse_override_value(spec: ScenarioSpec, key: str, text: str) -> Any:
    """Convert a command-line string to the type of the scenario field ``key``."""
    section, dot, name = key.partition(".")
    if not dot:
        cls, name = ScenarioSpec, section
    else:
        cls = _SECTIONS.get(section)
        if cls is None:
            raise ScenarioError(key, "unknown key")
    fields = _field_types(cls)
    if name not in fields or name in ("users", "base_dir") or name in _SECTIONS:
        raise ScenarioError(key, "unknown key")
    annotation = str(fields[name].type)
    try:
        if annotation.startswith("bool"):
            low = text.strip().lower()
            if low not in ("true", "false"):
                raise ValueError(text)
            return low == "true"
        if annotation.startswith("int"):
            return int(text)
        if annotation.startswith("float"):
            return float(text)
        if annotation.startswith("str"):
            return text.strip()
    except ValueError:
        raise ScenarioError(key, f"cannot convert {text!r} to {annotation}") from None
    raise ScenarioError(key, "parameter is not numeric or enum")


def resolve_user_positions(spec: ScenarioSpec) -> np.ndarray:
    """Cartesian user positions ``[K, 3]`` in meters.

    Angle-specified users sit at horizontal distance ``range_m`` from the
    BS along ``boresight + angle``; absolute positions pass through.
    """
    bs = spec.bs_position
    out = np.empty((spec.num_users, 3))
    for i, u in enumerate(spec.users):
        if u.position_m is not None:
            out[i] = u.position_m
            continue
        if not -90.0 < u.angle_deg < 90.0:
            raise ScenarioError(f"users[{i}].angle_deg", "must be in (-90, 90)")
        az = spec.array.boresight_azimuth + u.angle
        z = ELEVATED_HEIGHT_M if spec.los_elevated else u.height_m
        out[i] = (bs[0] + u.range_m * math.cos(az), bs[1] + u.range_m * math.sin(az), z)
    return out


def stage_seed(master_seed: int, label: str) -> int:
    """Sub-seed for one pipeline stage: sha256 of the master seed and the stage label."""
    digest = hashlib.sha256(f"{master_seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stage_rng(master_seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(stage_seed(master_seed, label))
