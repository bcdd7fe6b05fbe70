"""Self-contained synthetic scene for the end-to-end golden run.

Two solid red rectangles on a navy background, plus hand-set weights that
drive the whole stack to a known answer: every red pixel becomes foreground,
the part head fires on "frontbumper", the damage head on "dent". The colors
are chosen so the red/navy channel means differ (the quadtree statistic sees
them) and every weight value is exactly representable in float32.
"""

import argparse
import importlib.resources
import json
import os

import numpy as np

from .fileio import dumps_canonical, save_weight_bundle, write_ppm

IMAGE_SIZE = 64
RED = (230, 25, 25)
NAVY = (15, 15, 80)
# (x0, y0, width, height): A is a square, B is taller than wide so the two
# expected codes differ in orientation (0 vs 90 degrees)
RECT_A = (8, 8, 24, 24)
RECT_B = (36, 36, 20, 24)

EXPECTED_CODES = ("frontbumper:dent:S3:0", "frontbumper:dent:S3:90")


def _corners(rect):
    x0, y0, w, h = rect
    return [[x0, y0], [x0 + w - 1, y0], [x0 + w - 1, y0 + h - 1], [x0, y0 + h - 1]]


EXPECTED_POLYGONS = (_corners(RECT_A), _corners(RECT_B))


def demo_image():
    img = np.empty((IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.uint8)
    img[:, :] = NAVY
    for x0, y0, w, h in (RECT_A, RECT_B):
        img[y0 : y0 + h, x0 : x0 + w] = RED
    return img


def demo_weights():
    """Weight tensors rigged for a saturated, unambiguous forward pass."""
    eye3 = np.eye(3)
    conv = np.zeros((3, 3, 3, 3))
    conv[1, 1] = eye3  # center-tap identity: features == input colors
    # q.k scale 30^2/sqrt(3) turns the small red/navy dot-product gap into a
    # saturated attention split, so rows only mix with same-color rows
    w = {
        "conv_kernel": conv,
        "lateral_0": eye3,
        "attn_wq": 30.0 * eye3,
        "attn_wk": 30.0 * eye3,
        "attn_wv": eye3,
        "attn_wo": eye3,
        "ffn_w1": np.zeros((3, 4)),
        "ffn_b1": np.zeros(4),
        "ffn_w2": np.zeros((4, 3)),
        "ffn_b2": np.zeros(3),
    }
    # after the zero FFN the block is plain layer norm; red rows normalize to
    # (+a, -b, -b) and navy rows to (-b, -b, +a), so (12, 0, -12) separates
    # them by about +-25 logits
    split = np.array([12.0, 0.0, -12.0])
    w["mask_w"] = split
    head_damage = np.zeros((26, 3))
    head_damage[1] = split  # index 1: dent
    head_part = np.zeros((61, 3))
    head_part[0] = split  # index 0: frontbumper
    w["head_damage"] = head_damage
    w["head_part"] = head_part
    w["head_fake"] = np.zeros((7, 3))
    return w


def demo_config_dict():
    return {
        "quadtree": {"tau": 1e-6, "max_depth": 6, "min_side": 1},
        "weights": "weights/manifest.json",
        "taxonomy": "taxonomy.json",
        "compatibility": "compatibility.json",
        "polygon": {"rdp_epsilon": 1.0, "area_tolerance": 0.1},
        "confidence": {"part": 1.0, "damage": 1.0, "mask": 1.0},
        "threshold": 0.5,
    }


def build_demo_scene(out_dir):
    """Write image, weights, taxonomy, config, and the expected outcome.

    Returns the path of the written config.json.
    """
    os.makedirs(out_dir, exist_ok=True)
    write_ppm(os.path.join(out_dir, "image.ppm"), demo_image())
    save_weight_bundle(os.path.join(out_dir, "weights"), demo_weights())
    data = importlib.resources.files("vdkit.data")
    for name in ("taxonomy.json", "compatibility.json"):
        with open(os.path.join(out_dir, name), "wb") as fh:
            fh.write((data / name).read_bytes())
    config_path = os.path.join(out_dir, "config.json")
    with open(config_path, "w", encoding="utf-8") as fh:
        fh.write(dumps_canonical(demo_config_dict()))
    with open(os.path.join(out_dir, "expected.json"), "w", encoding="utf-8") as fh:
        fh.write(
            dumps_canonical(
                {
                    "records": list(EXPECTED_CODES),
                    "polygons": [list(p) for p in EXPECTED_POLYGONS],
                }
            )
        )
    return config_path


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="python -m vdkit.demo",
        description="write the bundled synthetic scene to a directory",
    )
    ap.add_argument("out_dir", help="directory to create the scene in")
    args = ap.parse_args(argv)
    config_path = build_demo_scene(args.out_dir)
    print(json.dumps({"config": config_path.replace(os.sep, "/")}))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
