"""Structured output layer: taxonomy registry, part-damage compatibility,
severity ratio, confidence aggregation, and the deterministic VDC encoder.

A VDC code is "<PART>:<DAMAGE>:<SEV>:<ORI>" with severity bands S1 (r < 0.1),
S2 (0.1 <= r < 0.4), S3 (r >= 0.4) and orientation snapped to 45-degree
buckets modulo 180.
"""

import json
import logging
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError

log = logging.getLogger(__name__)

N_DAMAGE = 26
N_FAKE = 7
N_PART = 61


@dataclass(frozen=True, eq=False)
class Taxonomy:
    damage: tuple
    fake: tuple
    part: tuple

    def __post_init__(self):
        for name, labels, want in (
            ("damage", self.damage, N_DAMAGE),
            ("fake", self.fake, N_FAKE),
            ("part", self.part, N_PART),
        ):
            if len(labels) != want:
                raise ConfigError(
                    f"taxonomy {name} set has {len(labels)} labels, "
                    f"expected {want}"
                )
            dupes = {x for x in labels if labels.count(x) > 1}
            if dupes:
                raise ConfigError(
                    f"taxonomy {name} set has duplicates: {sorted(dupes)}"
                )
        object.__setattr__(self, "damage_index", {n: i for i, n in enumerate(self.damage)})
        object.__setattr__(self, "part_index", {n: i for i, n in enumerate(self.part)})
        object.__setattr__(self, "fake_index", {n: i for i, n in enumerate(self.fake)})

    def check_part(self, label):
        if label not in self.part_index:
            raise InputError(f"unknown part label {label!r}")

    def check_damage(self, label):
        if label not in self.damage_index:
            raise InputError(f"unknown damage label {label!r}")


def _taxonomy_from_dict(obj, origin):
    if not isinstance(obj, dict):
        raise ConfigError(f"{origin}: taxonomy must be a JSON object")
    for key in ("damage", "fake", "part"):
        if key not in obj or not isinstance(obj[key], list):
            raise ConfigError(f"{origin}: taxonomy needs a {key!r} list")
    return Taxonomy(
        damage=tuple(obj["damage"]), fake=tuple(obj["fake"]), part=tuple(obj["part"])
    )


def load_taxonomy(path):
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read taxonomy {path}: {exc}")
    return _taxonomy_from_dict(obj, str(path))


def default_taxonomy():
    """The bundled registry (26 damage / 7 fake / 61 part labels)."""
    text = resources.files("vdkit.data").joinpath("taxonomy.json").read_text()
    return _taxonomy_from_dict(json.loads(text), "bundled taxonomy")


@dataclass(frozen=True, eq=False)
class CompatibilityTable:
    """Default-valid (part, damage) predicate with an explicit invalid list.

    Optional priors supply soft plausibility weights for the pairs that
    carry them; pairs without a prior score 1.0 when valid, 0.0 otherwise.
    """

    taxonomy: Taxonomy
    invalid_pairs: frozenset
    priors: dict

    def __post_init__(self):
        for part, damage in self.invalid_pairs:
            self.taxonomy.check_part(part)
            self.taxonomy.check_damage(damage)
        for part, damage in self.priors:
            self.taxonomy.check_part(part)
            self.taxonomy.check_damage(damage)

    def is_valid(self, part, damage):
        self.taxonomy.check_part(part)
        self.taxonomy.check_damage(damage)
        return (part, damage) not in self.invalid_pairs

    def prior(self, part, damage):
        """Soft plausibility weight for a pair."""
        if not self.is_valid(part, damage):
            return 0.0
        return float(self.priors.get((part, damage), 1.0))


def _compat_from_dict(obj, taxonomy, origin):
    if not isinstance(obj, dict) or "invalid_pairs" not in obj:
        raise ConfigError(f"{origin}: compatibility needs an 'invalid_pairs' list")
    pairs = set()
    for item in obj["invalid_pairs"]:
        if not (isinstance(item, list) and len(item) == 2):
            raise ConfigError(f"{origin}: invalid_pairs entries must be [part, damage]")
        pairs.add((item[0], item[1]))
    priors = {}
    for item in obj.get("priors", []):
        if not (isinstance(item, list) and len(item) == 3):
            raise ConfigError(f"{origin}: priors entries must be [part, damage, weight]")
        priors[(item[0], item[1])] = float(item[2])
    try:
        return CompatibilityTable(
            taxonomy=taxonomy, invalid_pairs=frozenset(pairs), priors=priors
        )
    except InputError as exc:
        raise ConfigError(f"{origin}: {exc}")


def load_compatibility(path, taxonomy):
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read compatibility table {path}: {exc}")
    return _compat_from_dict(obj, taxonomy, str(path))


def default_compatibility(taxonomy=None):
    taxonomy = taxonomy or default_taxonomy()
    text = resources.files("vdkit.data").joinpath("compatibility.json").read_text()
    return _compat_from_dict(json.loads(text), taxonomy, "bundled compatibility")


def consistency_filter(instances, compat):
    """Split instances into (kept, suppressed) by pair validity, preserving
    order. Each instance needs .part and .damage attributes."""
    kept = []
    suppressed = []
    for inst in instances:
        if compat.is_valid(inst.part, inst.damage):
            kept.append(inst)
        else:
            suppressed.append(inst)
    return kept, suppressed


def severity_ratio(damage_mask, part_mask):
    """Foreground-area ratio damage/part; logs a warning when it exceeds 1."""
    damage_mask = np.asarray(damage_mask, dtype=bool)
    part_mask = np.asarray(part_mask, dtype=bool)
    part_area = int(part_mask.sum())
    if part_area == 0:
        raise InputError("severity ratio needs a non-empty part mask")
    r = int(damage_mask.sum()) / part_area
    if r > 1.0:
        log.warning("damage area exceeds part area: severity ratio %.3f", r)
    return r


@dataclass(frozen=True)
class ConfidenceWeights:
    part: float = 1.0
    damage: float = 1.0
    mask: float = 1.0

    def __post_init__(self):
        for name in ("part", "damage", "mask"):
            if getattr(self, name) < 0:
                raise ValueError(f"lambda_{name} must be >= 0")
        if self.part + self.damage + self.mask <= 0:
            raise ValueError("confidence weights must not all be zero")


def aggregate_confidence(alpha_part, alpha_damage, alpha_mask, w=ConfidenceWeights()):
    """Normalized weighted mean of the three confidences, in [0, 1]."""
    for name, v in (
        ("alpha_part", alpha_part),
        ("alpha_damage", alpha_damage),
        ("alpha_mask", alpha_mask),
    ):
        if not (0.0 <= v <= 1.0):
            raise InputError(f"{name} must be in [0, 1], got {v}")
    total = w.part + w.damage + w.mask
    return (w.part * alpha_part + w.damage * alpha_damage + w.mask * alpha_mask) / total


def severity_band(r):
    if r < 0.1:
        return "S1"
    if r < 0.4:
        return "S2"
    return "S3"


def orientation_bucket(s):
    """Snap an angle to the nearest 45-degree bucket, modulo 180.

    Rounding is half away from zero so 22.5 -> 45 regardless of the
    platform's bankers rounding.
    """
    return int(math.floor(s / 45.0 + 0.5)) * 45 % 180


@dataclass(frozen=True)
class VdcRecord:
    code: str
    part: str
    damage: str
    severity: str
    r: float
    s: float
    orientation: int
    alpha: float

    def to_json_dict(self):
        return {
            "code": self.code,
            "part": self.part,
            "damage": self.damage,
            "r": self.r,
            "s": self.s,
            "alpha": self.alpha,
        }


def encode_vdc(part, damage, r, s, alpha, taxonomy):
    """Deterministic encoder: (part, damage, severity ratio, orientation,
    confidence) -> VdcRecord with the canonical code string."""
    taxonomy.check_part(part)
    taxonomy.check_damage(damage)
    if r < 0:
        raise InputError(f"severity ratio must be >= 0, got {r}")
    if not (0.0 <= alpha <= 1.0):
        raise InputError(f"alpha must be in [0, 1], got {alpha}")
    sev = severity_band(r)
    ori = orientation_bucket(s)
    code = f"{part}:{damage}:{sev}:{ori}"
    return VdcRecord(
        code=code,
        part=part,
        damage=damage,
        severity=sev,
        r=float(r),
        s=float(s),
        orientation=ori,
        alpha=float(alpha),
    )
