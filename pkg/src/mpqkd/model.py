"""Shared domain types and configuration handling.

Per-round data is stored column-wise (one numpy array per field) because
desk-scale runs involve 1e8+ rounds; the scalar record types exist for
per-pair APIs and tests.
"""
from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np


class ConfigError(ValueError):
    """A configuration value violates an invariant."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name
        self.reason = message


class IntensityClass(enum.IntEnum):
    VACUUM = 0
    DECOY = 1
    SIGNAL = 2


@dataclass(frozen=True)
class PartyParams:
    """Source settings of one sender (Alice or Bob)."""

    mu: float
    nu: float
    p_mu: float
    p_nu: float
    p_o: float
    loss_to_charlie_db: float

    def intensity(self, cls: IntensityClass | int) -> float:
        return (0.0, self.nu, self.mu)[int(cls)]

    @property
    def intensities(self) -> np.ndarray:
        """Mean photon numbers indexed by IntensityClass."""
        return np.array([0.0, self.nu, self.mu])

    @property
    def probabilities(self) -> np.ndarray:
        """Selection probabilities indexed by IntensityClass."""
        return np.array([self.p_o, self.p_nu, self.p_mu])

    @property
    def channel_transmittance(self) -> float:
        return 10.0 ** (-self.loss_to_charlie_db / 10.0)


@dataclass(frozen=True)
class Epsilons:
    eps_cor: float = 1e-10
    eps_prime: float = 1e-10
    eps_hat: float = 1e-10
    eps_pa: float = 1e-10
    eps_u: float = 1e-10
    eps_l: float = 1e-10
    eps_e: float = 1e-10


@dataclass(frozen=True)
class SystemConfig:
    alice: PartyParams
    bob: PartyParams
    clock_hz: float = 5e8
    n_rounds: int = 100_000_000
    l_max: int = 10_000
    m_slices: int = 16
    det_efficiency: float = 0.55
    dark_rate_hz: float = 30.0
    beat_center_hz: float = 34e6
    beat_jitter_std_hz: float = 652.282
    phase_drift_std_rad: float = 0.0987
    t_r_us: float = 500.0
    epsilons: Epsilons = field(default_factory=Epsilons)
    f_ec: float = 1.16
    ref_rate_hz: float = 1e6
    ref_visibility: float = 1.0
    pad_factor: int = 2
    bin_ns: float = 1.0

    @classmethod
    def symmetric(cls, party: PartyParams, **kwargs) -> "SystemConfig":
        return cls(alice=party, bob=party, **kwargs)

    @property
    def dark_prob(self) -> float:
        """Dark-count probability per detection gate (one gate per clock period)."""
        return self.dark_rate_hz / self.clock_hz

    @property
    def total_loss_db(self) -> float:
        return self.alice.loss_to_charlie_db + self.bob.loss_to_charlie_db

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)


# --- per-round and per-pair records --------------------------------------


class RoundTag(NamedTuple):
    intensity_a: IntensityClass
    intensity_b: IntensityClass
    phase_a: float
    phase_b: float


class DetectionRecord(NamedTuple):
    clicked_l: bool
    clicked_r: bool

    @property
    def valid(self) -> bool:
        return self.clicked_l != self.clicked_r


class PairRecord(NamedTuple):
    """Two paired rounds j < k with both parties' tags and the click results."""

    j: int
    k: int
    tag_j: RoundTag
    tag_k: RoundTag
    click_j: DetectionRecord
    click_k: DetectionRecord


@dataclass(frozen=True)
class RoundTags:
    """Column-wise RoundTag storage."""

    class_a: np.ndarray
    class_b: np.ndarray
    phase_a: np.ndarray
    phase_b: np.ndarray

    def __len__(self) -> int:
        return len(self.class_a)

    def __getitem__(self, i) -> RoundTag:
        return RoundTag(IntensityClass(int(self.class_a[i])), IntensityClass(int(self.class_b[i])),
                        float(self.phase_a[i]), float(self.phase_b[i]))

    def take(self, idx) -> "RoundTags":
        return RoundTags(self.class_a[idx], self.class_b[idx], self.phase_a[idx], self.phase_b[idx])


@dataclass(frozen=True)
class Detections:
    """Column-wise DetectionRecord storage."""

    click_l: np.ndarray
    click_r: np.ndarray

    def __len__(self) -> int:
        return len(self.click_l)

    def __getitem__(self, i) -> DetectionRecord:
        return DetectionRecord(bool(self.click_l[i]), bool(self.click_r[i]))

    @property
    def valid(self) -> np.ndarray:
        """C = L xor R."""
        return self.click_l ^ self.click_r

    def take(self, idx) -> "Detections":
        return Detections(self.click_l[idx], self.click_r[idx])


@dataclass(frozen=True)
class PairArrays:
    """Column-wise PairRecord storage: round indices plus gathered tags and clicks."""

    j: np.ndarray
    k: np.ndarray
    tags_j: RoundTags
    tags_k: RoundTags
    det_j: Detections
    det_k: Detections

    def __len__(self) -> int:
        return len(self.j)

    def __getitem__(self, i) -> PairRecord:
        return PairRecord(int(self.j[i]), int(self.k[i]), self.tags_j[i], self.tags_k[i],
                          self.det_j[i], self.det_k[i])

    def take(self, idx) -> "PairArrays":
        return PairArrays(self.j[idx], self.k[idx], self.tags_j.take(idx), self.tags_k.take(idx),
                          self.det_j.take(idx), self.det_k.take(idx))

    @classmethod
    def from_records(cls, records) -> "PairArrays":
        records = list(records)

        def tags(which):
            ts = [getattr(r, which) for r in records]
            return RoundTags(np.array([int(t.intensity_a) for t in ts], np.uint8),
                             np.array([int(t.intensity_b) for t in ts], np.uint8),
                             np.array([t.phase_a for t in ts], float),
                             np.array([t.phase_b for t in ts], float))

        def dets(which):
            ds = [getattr(r, which) for r in records]
            return Detections(np.array([d.clicked_l for d in ds], bool),
                              np.array([d.clicked_r for d in ds], bool))

        return cls(np.array([r.j for r in records], np.int64), np.array([r.k for r in records], np.int64),
                   tags("tag_j"), tags("tag_k"), dets("click_j"), dets("click_k"))


# --- tallies ----------------------------------------------------------------

# per-party pair labels, in the order used by the tally keys
TALLY_KEYS: tuple[tuple[str, str], ...] = (
    ("mu", "mu"), ("mu", "o"), ("o", "mu"),
    ("nu", "nu"), ("nu", "o"), ("o", "nu"),
    ("o", "o"),
    ("2nu", "2nu"), ("2nu", "o"), ("o", "2nu"),
)


def tally_name(key: tuple[str, str]) -> str:
    return f"n_{key[0]}_{key[1]}"


@dataclass
class TallyTable:
    """Pair counts per (Alice, Bob) pair class plus the two error counts.

    ``n[("2nu", "2nu")]`` only counts X pairs that survived phase sifting.
    """

    n: dict[tuple[str, str], int] = field(default_factory=lambda: {k: 0 for k in TALLY_KEYS})
    m_z: int = 0
    m_x: int = 0

    def __post_init__(self):
        for k in TALLY_KEYS:
            self.n.setdefault(k, 0)
        for k, v in self.n.items():
            if v < 0:
                raise ValueError(f"negative count for {tally_name(k)}")
        if not 0 <= self.m_z <= self.n[("mu", "mu")]:
            raise ValueError("m_mu_mu must lie in [0, n_mu_mu]")
        if not 0 <= self.m_x <= self.n[("2nu", "2nu")]:
            raise ValueError("m_2nu_2nu must lie in [0, n_2nu_2nu]")

    def __getitem__(self, key: tuple[str, str]) -> int:
        return self.n[key]

    def __add__(self, other: "TallyTable") -> "TallyTable":
        return TallyTable({k: self.n[k] + other.n[k] for k in TALLY_KEYS},
                          self.m_z + other.m_z, self.m_x + other.m_x)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TallyTable):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    @property
    def error_rate_z(self) -> float:
        n = self.n[("mu", "mu")]
        return self.m_z / n if n else 0.0

    @property
    def error_rate_x(self) -> float:
        n = self.n[("2nu", "2nu")]
        return self.m_x / n if n else 0.0

    def to_dict(self) -> dict[str, int]:
        d = {tally_name(k): int(self.n[k]) for k in TALLY_KEYS}
        d["m_mu_mu"] = int(self.m_z)
        d["m_2nu_2nu"] = int(self.m_x)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TallyTable":
        missing = [tally_name(k) for k in TALLY_KEYS if tally_name(k) not in d]
        missing += [k for k in ("m_mu_mu", "m_2nu_2nu") if k not in d]
        if missing:
            raise KeyError(f"missing tally keys: {', '.join(missing)}")
        return cls({k: int(d[tally_name(k)]) for k in TALLY_KEYS},
                   int(d["m_mu_mu"]), int(d["m_2nu_2nu"]))


# --- validation ---------------------------------------------------------------


def _check_party(name: str, p: PartyParams) -> None:
    for attr in ("mu", "nu", "p_mu", "p_nu", "p_o", "loss_to_charlie_db"):
        if not math.isfinite(getattr(p, attr)):
            raise ConfigError(f"{name}.{attr}", "must be finite")
    if not 0.0 < p.nu < p.mu:
        raise ConfigError(f"{name}.nu", "intensity ordering: need 0 < nu < mu")
    for attr in ("p_mu", "p_nu", "p_o"):
        if not 0.0 < getattr(p, attr) < 1.0:
            raise ConfigError(f"{name}.{attr}", "probability must lie in (0, 1)")
    if abs(p.p_mu + p.p_nu + p.p_o - 1.0) > 1e-12:
        raise ConfigError(f"{name}.p_o", "probability sum: p_mu + p_nu + p_o must equal 1")
    if p.loss_to_charlie_db < 0:
        raise ConfigError(f"{name}.loss_to_charlie_db", "loss must be non-negative")


def validate_config(cfg: SystemConfig) -> SystemConfig:
    """Return ``cfg`` unchanged, or raise ConfigError naming the first bad field."""
    _check_party("alice", cfg.alice)
    _check_party("bob", cfg.bob)
    if not cfg.clock_hz > 0:
        raise ConfigError("clock_hz", "must be positive")
    if cfg.n_rounds < 0:
        raise ConfigError("n_rounds", "must be non-negative")
    if cfg.l_max < 1:
        raise ConfigError("l_max", "must be at least 1")
    if cfg.m_slices < 2:
        raise ConfigError("m_slices", "must be at least 2")
    if not 0.0 < cfg.det_efficiency <= 1.0:
        raise ConfigError("det_efficiency", "must lie in (0, 1]")
    if cfg.dark_rate_hz < 0 or cfg.dark_prob >= 1:
        raise ConfigError("dark_rate_hz", "dark-count probability per gate must lie in [0, 1)")
    for name in ("beat_jitter_std_hz", "phase_drift_std_rad", "ref_rate_hz"):
        if not getattr(cfg, name) >= 0:
            raise ConfigError(name, "must be non-negative")
    if not cfg.t_r_us > 0:
        raise ConfigError("t_r_us", "must be positive")
    if not 0.0 <= cfg.ref_visibility <= 1.0:
        raise ConfigError("ref_visibility", "must lie in [0, 1]")
    if cfg.pad_factor < 1:
        raise ConfigError("pad_factor", "must be at least 1")
    if not cfg.bin_ns > 0:
        raise ConfigError("bin_ns", "must be positive")
    window_bins = cfg.t_r_us * 1e3 / cfg.bin_ns
    if abs(window_bins - round(window_bins)) > 1e-9:
        raise ConfigError("bin_ns", "bin width must divide the reference window")
    for f in dataclasses.fields(Epsilons):
        v = getattr(cfg.epsilons, f.name)
        if not 0.0 < v < 1.0:
            raise ConfigError(f"epsilons.{f.name}", "must lie in (0, 1)")
    if not cfg.f_ec >= 1.0:
        raise ConfigError("f_ec", "error-correction efficiency factor must be >= 1")
    return cfg


# --- key = value text format ------------------------------------------------

_INT_FIELDS = {"n_rounds", "l_max", "m_slices", "pad_factor"}
_PARTY_FIELDS = [f.name for f in dataclasses.fields(PartyParams)]
_EPS_FIELDS = [f.name for f in dataclasses.fields(Epsilons)]
_TOP_FIELDS = [f.name for f in dataclasses.fields(SystemConfig)
               if f.name not in ("alice", "bob", "epsilons")]


def config_to_dict(cfg: SystemConfig) -> dict[str, float | int]:
    """Flatten to dotted keys (``alice.mu``, ``epsilons.eps_pa``, ...)."""
    out: dict[str, float | int] = {}
    for who in ("alice", "bob"):
        party = getattr(cfg, who)
        for name in _PARTY_FIELDS:
            out[f"{who}.{name}"] = getattr(party, name)
    for name in _TOP_FIELDS:
        out[name] = getattr(cfg, name)
    for name in _EPS_FIELDS:
        out[f"epsilons.{name}"] = getattr(cfg.epsilons, name)
    return out


def format_config(cfg: SystemConfig) -> str:
    lines = []
    for key, value in config_to_dict(cfg).items():
        lines.append(f"{key} = {value!r}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> SystemConfig:
    """Parse ``key = value`` lines (``#`` starts a comment) into a validated config.

    Keys not given fall back to the dataclass defaults, except the party
    fields, which are required.
    """
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value

    def num(key: str, as_int: bool = False):
        raw = values.pop(key)
        try:
            return int(raw) if as_int else float(raw)
        except ValueError:
            raise ConfigError(key, f"not a number: {raw!r}") from None

    parties = {}
    for who in ("alice", "bob"):
        kwargs = {}
        for name in _PARTY_FIELDS:
            key = f"{who}.{name}"
            if key not in values:
                raise ConfigError(key, "missing")
            kwargs[name] = num(key)
        parties[who] = PartyParams(**kwargs)
    eps = {n: num(f"epsilons.{n}") for n in _EPS_FIELDS if f"epsilons.{n}" in values}
    top = {n: num(n, n in _INT_FIELDS) for n in _TOP_FIELDS if n in values}
    if values:
        raise ConfigError(sorted(values)[0], "unknown key")
    cfg = SystemConfig(alice=parties["alice"], bob=parties["bob"], epsilons=Epsilons(**eps), **top)
    return validate_config(cfg)


def load_config(path: str | Path) -> SystemConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))
