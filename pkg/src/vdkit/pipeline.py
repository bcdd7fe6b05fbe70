"""End-to-end inference: features -> quadtree -> attention refinement ->
soft mask -> instances -> polygons -> damage codes.

The runner is deterministic: identical image + config bytes produce
byte-identical artifacts. Every stage failure is re-raised as a StageError
carrying the stage name and the original exception.
"""

import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from .blocks import (
    N_DAMAGE,
    N_FAKE,
    N_PART,
    AttentionWeights,
    FfnWeights,
    classification_heads,
    deformable_conv2d,
    ffn_block,
    fpn_fuse,
    multi_head_attention,
)
from .errors import ConfigError, InputError, StageError
from .fileio import dumps_canonical, load_weight_bundle, pgm_bytes_from_soft
from .geometry import (
    Polygon,
    PolygonConfig,
    SoftMask,
    area_consistency,
    binarize,
    connected_components,
    polygon_area,
    polygon_orientation,
    rdp_simplify,
    reconstruct_mask,
    trace_boundary,
)
from .quadtree import QuadtreeConfig, serialize_sequence
from .tensorops import as_f64
from .vdc import (
    CompatibilityTable,
    ConfidenceWeights,
    Taxonomy,
    aggregate_confidence,
    consistency_filter,
    default_compatibility,
    default_taxonomy,
    encode_vdc,
    load_compatibility,
    load_taxonomy,
    severity_ratio,
)

log = logging.getLogger(__name__)

_WEIGHT_NAMES = (
    "conv_kernel",
    "attn_wq",
    "attn_wk",
    "attn_wv",
    "attn_wo",
    "ffn_w1",
    "ffn_b1",
    "ffn_w2",
    "ffn_b2",
    "mask_w",
    "head_damage",
    "head_part",
    "head_fake",
)


@dataclass(frozen=True, eq=False)
class PipelineConfig:
    """Everything run_pipeline needs, fully loaded and cross-validated."""

    quadtree: QuadtreeConfig
    conv_kernel: np.ndarray  # (3, 3, C_in, C)
    laterals: tuple  # one (C, C) per pyramid level, finest first
    attn: AttentionWeights
    ffn: FfnWeights
    mask_w: np.ndarray  # (C,) or per-region (T, C)
    head_damage: np.ndarray  # (26, C)
    head_part: np.ndarray  # (61, C)
    head_fake: np.ndarray  # (7, C)
    taxonomy: Taxonomy = None
    compat: CompatibilityTable = None
    polygon: PolygonConfig = PolygonConfig()
    confidence: ConfidenceWeights = ConfidenceWeights()
    threshold: float = 0.5
    weights_path: str = None
    taxonomy_path: str = None
    compatibility_path: str = None

    def __post_init__(self):
        try:
            conv = as_f64(self.conv_kernel, "conv_kernel")
            if conv.ndim != 4 or conv.shape[:2] != (3, 3):
                raise ValueError(
                    f"conv_kernel must be (3, 3, C_in, C), got {conv.shape}"
                )
            c = conv.shape[3]
            laterals = tuple(
                as_f64(w, f"lateral_{i}") for i, w in enumerate(self.laterals)
            )
            if not laterals:
                raise ValueError("need at least one pyramid level")
            for i, w in enumerate(laterals):
                if w.shape != (c, c):
                    raise ValueError(
                        f"lateral_{i} shape {w.shape}, expected ({c}, {c})"
                    )
            if self.attn.channels != c:
                raise ValueError(
                    f"attention channels {self.attn.channels} != features {c}"
                )
            mask_w = as_f64(self.mask_w, "mask_w")
            if mask_w.ndim == 1 and mask_w.shape[0] != c:
                raise ValueError(f"mask_w shape {mask_w.shape}, expected ({c},)")
            for name, w, rows in (
                ("head_damage", self.head_damage, N_DAMAGE),
                ("head_part", self.head_part, N_PART),
                ("head_fake", self.head_fake, N_FAKE),
            ):
                w = as_f64(w, name)
                if w.shape != (rows, c):
                    raise ValueError(
                        f"{name} shape {w.shape}, expected ({rows}, {c})"
                    )
            if not (0.0 < self.threshold < 1.0):
                raise ValueError(
                    f"threshold must be in (0, 1), got {self.threshold}"
                )
        except (ValueError, InputError) as exc:
            raise ConfigError(str(exc)) from exc
        object.__setattr__(self, "conv_kernel", conv)
        object.__setattr__(self, "laterals", laterals)
        object.__setattr__(self, "mask_w", mask_w)
        if self.taxonomy is None:
            object.__setattr__(self, "taxonomy", default_taxonomy())
        if self.compat is None:
            object.__setattr__(self, "compat", default_compatibility(self.taxonomy))

    @property
    def channels(self):
        return self.conv_kernel.shape[3]

    @property
    def pyramid_levels(self):
        return len(self.laterals)


_CONFIG_KEYS = {
    "quadtree",
    "weights",
    "taxonomy",
    "compatibility",
    "polygon",
    "confidence",
    "threshold",
}


def _build(kind, factory, raw):
    if not isinstance(raw, dict):
        raise ConfigError(f"{kind} section must be an object, got {type(raw).__name__}")
    try:
        return factory(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {kind} section: {exc}") from exc


def load_pipeline_config(path):
    """Parse a pipeline config JSON and load every file it references.

    Relative paths resolve against the config file's directory. Any missing
    file, unknown key, or inconsistent weight shape raises ConfigError.
    """
    try:
        with open(path, "rb") as fh:
            raw = json.loads(fh.read().decode("utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "weights" not in raw:
        raise ConfigError("config is missing the 'weights' bundle path")
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    weights_path = resolve(raw["weights"])
    tensors, _ = load_weight_bundle(weights_path)
    missing = [n for n in _WEIGHT_NAMES if n not in tensors]
    if missing:
        raise ConfigError(f"weight bundle is missing tensors: {missing}")
    laterals = []
    while f"lateral_{len(laterals)}" in tensors:
        laterals.append(tensors[f"lateral_{len(laterals)}"])
    if not laterals:
        raise ConfigError("weight bundle has no lateral_0 pyramid projection")

    taxonomy_path = raw.get("taxonomy")
    if taxonomy_path is not None:
        taxonomy_path = resolve(taxonomy_path)
        taxonomy = load_taxonomy(taxonomy_path)
    else:
        taxonomy = default_taxonomy()
    compat_path = raw.get("compatibility")
    if compat_path is not None:
        compat_path = resolve(compat_path)
        compat = load_compatibility(compat_path, taxonomy)
    else:
        compat = default_compatibility(taxonomy)

    try:
        attn = AttentionWeights(
            tensors["attn_wq"], tensors["attn_wk"], tensors["attn_wv"], tensors["attn_wo"]
        )
        ffn = FfnWeights(
            tensors["ffn_w1"], tensors["ffn_b1"], tensors["ffn_w2"], tensors["ffn_b2"]
        )
    except (ValueError, InputError) as exc:
        raise ConfigError(f"bad weight bundle: {exc}") from exc

    return PipelineConfig(
        quadtree=_build("quadtree", QuadtreeConfig, raw.get("quadtree", {})),
        conv_kernel=tensors["conv_kernel"],
        laterals=tuple(laterals),
        attn=attn,
        ffn=ffn,
        mask_w=tensors["mask_w"],
        head_damage=tensors["head_damage"],
        head_part=tensors["head_part"],
        head_fake=tensors["head_fake"],
        taxonomy=taxonomy,
        compat=compat,
        polygon=_build("polygon", PolygonConfig, raw.get("polygon", {})),
        confidence=_build("confidence", ConfidenceWeights, raw.get("confidence", {})),
        threshold=float(raw.get("threshold", 0.5)),
        weights_path=weights_path,
        taxonomy_path=taxonomy_path,
        compatibility_path=compat_path,
    )


def _require_dyadic(n, name):
    if n < 1 or n > 256 or (n & (n - 1)):
        raise InputError(
            f"{name}={n} must be a power of two <= 256 in reference mode"
        )


def extract_features(image, cfg):
    """Feature map (H, W, C): fixed 3x3 convolution, mean-pool pyramid,
    top-down fusion. H and W must be powers of two <= 256."""
    image = as_f64(image, "image")
    if image.ndim != 3:
        raise InputError(f"image must be (H, W, C_in), got shape {image.shape}")
    h, w, _ = image.shape
    _require_dyadic(h, "H")
    _require_dyadic(w, "W")
    n_levels = cfg.pyramid_levels
    if min(h, w) < (1 << (n_levels - 1)):
        raise InputError(
            f"{n_levels} pyramid levels need min(H, W) >= {1 << (n_levels - 1)}"
        )
    base = deformable_conv2d(image, cfg.conv_kernel)
    levels = [base]
    for _ in range(1, n_levels):
        prev = levels[-1]
        ph, pw, c = prev.shape
        levels.append(prev.reshape(ph // 2, 2, pw // 2, 2, c).mean(axis=(1, 3)))
    return fpn_fuse(levels, list(cfg.laterals))


@dataclass(frozen=True, eq=False)
class InstancePrediction:
    """One damage instance: its mask, polygon, labels, and confidences."""

    mask: SoftMask  # instance-only soft values, zero off-component
    polygon: Polygon
    part: str
    alpha_part: float
    damage: str
    alpha_damage: float
    fake: np.ndarray  # (7,) sigmoid scores
    alpha_mask: float
    severity_r: float
    orientation_deg: float
    confidence: float
    area_ok: bool
    area_rel_err: float

    def __post_init__(self):
        for name in ("alpha_part", "alpha_damage", "alpha_mask", "confidence"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise InputError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True, eq=False)
class PipelineResult:
    records: tuple  # VdcRecord per kept instance, component order
    instances: tuple  # kept InstancePrediction, aligned with records
    suppressed: tuple  # instances removed by the compatibility filter
    soft_mask: SoftMask
    artifacts: dict  # file name -> bytes


def _stage(name, fn, *args):
    try:
        return fn(*args)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def _component_instance(comp, soft, seq, refined, cfg):
    boundary = trace_boundary(comp)
    polygon = rdp_simplify(boundary, cfg.polygon)
    rows = [
        refined[i]
        for i, r in enumerate(seq.regions)
        if comp[r.y0 : r.y0 + r.height, r.x0 : r.x0 + r.width].any()
    ]
    q = np.asarray(rows, dtype=np.float64).mean(axis=0)
    damage_p, part_p, fake_p = classification_heads(
        q, cfg.head_damage, cfg.head_part, cfg.head_fake
    )
    di = int(np.argmax(damage_p))
    pi = int(np.argmax(part_p))
    alpha_mask = float(soft.values[comp].mean())
    # part extent proxy: the component's bounding box (no part segmentation
    # at desk scale), so r = |component| / |bbox|
    ys, xs = np.nonzero(comp)
    bbox = np.zeros_like(comp)
    bbox[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1] = True
    r = severity_ratio(comp, bbox)
    alpha_part = float(part_p[pi])
    alpha_damage = float(damage_p[di])
    ok, rel = area_consistency(comp, polygon, cfg.polygon)
    if not ok:
        log.warning(
            "polygon area deviates %.1f%% from pixel area (tolerance %.1f%%)",
            rel * 100.0,
            cfg.polygon.area_tolerance * 100.0,
        )
    return InstancePrediction(
        mask=SoftMask(np.where(comp, soft.values, 0.0)),
        polygon=polygon,
        part=cfg.taxonomy.part[pi],
        alpha_part=alpha_part,
        damage=cfg.taxonomy.damage[di],
        alpha_damage=alpha_damage,
        fake=fake_p,
        alpha_mask=alpha_mask,
        severity_r=r,
        orientation_deg=polygon_orientation(polygon),
        confidence=aggregate_confidence(
            alpha_part, alpha_damage, alpha_mask, cfg.confidence
        ),
        area_ok=ok,
        area_rel_err=rel,
    )


def _collect_instances(soft, seq, refined, cfg):
    fg = binarize(soft, cfg.threshold)
    labels, count = connected_components(fg)
    instances = []
    for k in range(1, count + 1):
        comp = labels == k
        try:
            instances.append(_component_instance(comp, soft, seq, refined, cfg))
        except InputError as exc:
            # a component too small or thin to carry a simple polygon is
            # dropped, not fatal
            log.warning("skipping component %d: %s", k, exc)
    return instances


def _render_artifacts(soft, kept, suppressed, records):
    artifacts = {"soft_mask.pgm": pgm_bytes_from_soft(soft.values)}
    polys = []
    for idx, inst in enumerate(kept, start=1):
        artifacts[f"instance_{idx:02d}.pgm"] = pgm_bytes_from_soft(inst.mask.values)
        polys.append(
            {
                "instance": idx,
                "part": inst.part,
                "damage": inst.damage,
                "vertices": [[float(x), float(y)] for x, y in inst.polygon.vertices],
                "orientation_deg": inst.orientation_deg,
                "area": polygon_area(inst.polygon),
            }
        )
    artifacts["polygons.json"] = dumps_canonical(
        {
            "image_height": soft.height,
            "image_width": soft.width,
            "polygons": polys,
        }
    ).encode("utf-8")
    artifacts["vdc.json"] = dumps_canonical(
        {
            "records": [rec.to_json_dict() for rec in records],
            "suppressed": len(suppressed),
        }
    ).encode("utf-8")
    return artifacts


def run_pipeline(image, cfg):
    """Run the full stack on one RGB image; returns a PipelineResult.

    Zero instances is a valid empty result. Stage failures raise StageError
    naming the stage; the cause keeps its original type.
    """
    feat = _stage("features", extract_features, image, cfg)
    seq = _stage("quadtree", serialize_sequence, feat, cfg.quadtree)

    def refine(z):
        return ffn_block(z + multi_head_attention(z, cfg.attn), cfg.ffn)

    refined = _stage("attention", refine, seq.features)
    soft = _stage("mask", reconstruct_mask, seq, refined, cfg.mask_w)
    instances = _stage("instances", _collect_instances, soft, seq, refined, cfg)

    def encode(found):
        kept, suppressed = consistency_filter(found, cfg.compat)
        records = tuple(
            encode_vdc(
                i.part, i.damage, i.severity_r, i.orientation_deg, i.confidence,
                cfg.taxonomy,
            )
            for i in kept
        )
        return kept, suppressed, records

    kept, suppressed, records = _stage("encode", encode, instances)
    artifacts = _stage("artifacts", _render_artifacts, soft, kept, suppressed, records)
    return PipelineResult(
        records=records,
        instances=tuple(kept),
        suppressed=tuple(suppressed),
        soft_mask=soft,
        artifacts=artifacts,
    )


def write_artifacts(result, out_dir):
    """Write every artifact blob under out_dir; returns the paths written."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name in sorted(result.artifacts):
        p = os.path.join(out_dir, name)
        with open(p, "wb") as fh:
            fh.write(result.artifacts[name])
        paths.append(p)
    return paths


def stage_error_cause(exc):
    """Innermost non-StageError cause, for exit-code mapping."""
    while isinstance(exc, StageError):
        exc = exc.cause
    return exc


__all__ = [
    "InstancePrediction",
    "PipelineConfig",
    "PipelineResult",
    "extract_features",
    "load_pipeline_config",
    "run_pipeline",
    "stage_error_cause",
    "write_artifacts",
]
