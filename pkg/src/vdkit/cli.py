"""Command-line front end.

Subcommands: decompose, segment, eval, ctc-loss, decode, vdc. Exit codes:
0 success, 2 config/usage error, 3 input error, 4 internal invariant
violation.
"""

import argparse
import json
import os
import sys

import numpy as np

from .decode import BeamConfig, ctc_beam_search, ctc_greedy_decode
from .errors import ConfigError, InputError, InvariantError, StageError, VdkitError
from .fileio import (
    dumps_canonical,
    read_mask_pgm,
    read_mten,
    read_pgm,
    read_ppm,
    write_mten,
)
from .losses import CtcProblem, FocalCtcConfig, focal_ctc_grad, focal_ctc_loss
from .metrics import Detection, GroundTruth, coco_suite
from .pipeline import load_pipeline_config, run_pipeline, stage_error_cause, write_artifacts
from .quadtree import ORDER_TAG, QuadtreeConfig, decompose_info
from .vdc import default_taxonomy, encode_vdc, load_taxonomy


def _emit(obj, out_dir, file_name):
    text = dumps_canonical(obj)
    sys.stdout.write(text)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, file_name), "w", encoding="utf-8") as fh:
            fh.write(text)


def _load_image_channels(path):
    """Any supported raster as float64 (H, W, C) in [0, 1]."""
    lower = path.lower()
    if lower.endswith(".ppm"):
        return read_ppm(path)
    if lower.endswith(".pgm"):
        return read_pgm(path).astype(np.float64)[:, :, None] / 255.0
    if lower.endswith(".mten"):
        arr = read_mten(path)
        if arr.ndim == 2:
            return arr[:, :, None]
        if arr.ndim == 3:
            return arr
        raise InputError(f"{path}: tensor rank {arr.ndim}, expected 2 or 3")
    raise InputError(f"{path}: unsupported image format (use .ppm/.pgm/.mten)")


def _cmd_decompose(args):
    feat = _load_image_channels(args.image)
    try:
        cfg = QuadtreeConfig(
            tau=args.tau, max_depth=args.max_depth, min_side=args.min_side
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    info = decompose_info(feat, cfg)
    _emit(
        {
            "order": ORDER_TAG,
            "regions": [
                {
                    "x0": r.x0,
                    "y0": r.y0,
                    "w": r.width,
                    "h": r.height,
                    "depth": depth,
                    "variance": variance,
                }
                for r, depth, variance in info
            ],
        },
        args.out,
        "decompose.json",
    )
    return 0


def _cmd_segment(args):
    if not args.config:
        raise ConfigError("segment requires --config")
    cfg = load_pipeline_config(args.config)
    image = read_ppm(args.image)
    result = run_pipeline(image, cfg)
    if args.out:
        write_artifacts(result, args.out)
    sys.stdout.write(
        dumps_canonical(
            {
                "records": [rec.code for rec in result.records],
                "instances": len(result.instances),
                "suppressed": len(result.suppressed),
                "artifacts": sorted(result.artifacts),
            }
        )
    )
    return 0


def _require(obj, key, where):
    if key not in obj:
        raise InputError(f"{where}: missing '{key}'")
    return obj[key]


def _load_eval_file(path, cls, need_conf):
    try:
        with open(path, "rb") as fh:
            raw = json.loads(fh.read().decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(
            f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    base = os.path.dirname(os.path.abspath(path))
    if not isinstance(raw, dict) or "images" not in raw:
        raise InputError(f"{path}: root must be an object with an 'images' list")
    items = []
    for i, img in enumerate(raw["images"]):
        where = f"{path}: images[{i}]"
        image_id = _require(img, "id", where)
        for j, det in enumerate(img.get("detections", ())):
            where_d = f"{where}.detections[{j}]"
            label = _require(det, "class", where_d)
            has_mask = "mask_pgm" in det
            has_box = "box" in det
            if has_mask == has_box:
                raise InputError(f"{where_d}: need exactly one of mask_pgm/box")
            if has_mask:
                mask_path = det["mask_pgm"]
                if not os.path.isabs(mask_path):
                    mask_path = os.path.join(base, mask_path)
                geo = {"mask": read_mask_pgm(mask_path)}
            else:
                geo = {"box": det["box"]}
            if need_conf:
                conf = _require(det, "conf", where_d)
                items.append(cls(image_id=image_id, label=label, confidence=conf, **geo))
            else:
                items.append(cls(image_id=image_id, label=label, **geo))
    return items


def _cmd_eval(args):
    dets = _load_eval_file(args.predictions, Detection, need_conf=True)
    gts = _load_eval_file(args.ground_truth, GroundTruth, need_conf=False)
    report = coco_suite(dets, gts)
    _emit(report.to_json_dict(), args.out, "report.json")
    return 0


def _log_rows_from_mten(path):
    """Probability rows from an MTEN file, renormalized in log space.

    Storage is float32, so rows that summed to 1 before quantization are a
    few ulp off afterwards; subtracting each row's log-sum-exp restores exact
    distributions without disturbing well-formed input beyond rounding.
    """
    p = read_mten(path)
    if p.ndim != 2 or p.shape[1] < 2:
        raise InputError(f"{path}: need a (T, A+1) matrix, got shape {p.shape}")
    if np.any(p < 0.0) or not np.all(np.isfinite(p)):
        raise InputError(f"{path}: probabilities must be finite and >= 0")
    with np.errstate(divide="ignore"):
        lp = np.log(p)
    out = np.empty_like(lp)
    for t in range(lp.shape[0]):
        row = lp[t]
        m = row.max()
        if m == -np.inf:
            raise InputError(f"{path}: row {t} has zero total mass")
        out[t] = row - (m + np.log(np.exp(row - m).sum()))
    return out


def _parse_labels(args, alphabet_size):
    if (args.labels is None) == (args.text is None):
        raise ConfigError("give exactly one of --labels or --text")
    if args.labels is not None:
        try:
            labels = tuple(int(tok) for tok in args.labels.split(",") if tok.strip())
        except ValueError as exc:
            raise ConfigError(f"bad --labels {args.labels!r}: {exc}") from exc
        return labels
    if not args.alphabet:
        raise ConfigError("--text requires --alphabet")
    _check_alphabet(args.alphabet, alphabet_size)
    index = {ch: i + 1 for i, ch in enumerate(args.alphabet)}
    missing = sorted({ch for ch in args.text if ch not in index})
    if missing:
        raise InputError(f"--text characters not in alphabet: {missing}")
    return tuple(index[ch] for ch in args.text)


def _check_alphabet(alphabet, alphabet_size):
    if len(set(alphabet)) != len(alphabet):
        raise ConfigError("--alphabet characters must be unique")
    if len(alphabet) != alphabet_size:
        raise ConfigError(
            f"--alphabet has {len(alphabet)} symbols but the matrix allows "
            f"{alphabet_size}"
        )


def _cmd_ctc_loss(args):
    lp = _log_rows_from_mten(args.probs)
    labels = _parse_labels(args, lp.shape[1] - 1)
    problem = CtcProblem(lp, labels)
    cfg = FocalCtcConfig(gamma=args.gamma)
    if args.grad_out:
        loss, p_t, grad = focal_ctc_grad(problem, cfg)
        write_mten(args.grad_out, grad)
    else:
        loss, p_t = focal_ctc_loss(problem, cfg)
    nll, _ = focal_ctc_loss(problem, FocalCtcConfig(gamma=0.0))
    _emit(
        {"nll": nll, "loss": loss, "p_t": p_t, "gamma": args.gamma},
        args.out,
        "ctc_loss.json",
    )
    return 0


def _cmd_decode(args):
    lp = _log_rows_from_mten(args.probs)
    if args.alphabet:
        _check_alphabet(args.alphabet, lp.shape[1] - 1)
    if args.greedy:
        labels = ctc_greedy_decode(lp)
        log_prob = None
    else:
        try:
            beam = BeamConfig(beam_width=args.beam_width)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        ranked = ctc_beam_search(lp, beam)
        labels, log_prob = ranked[0]
    text = None
    if args.alphabet:
        text = "".join(args.alphabet[k - 1] for k in labels)
    _emit(
        {
            "labels": list(labels),
            "log_prob": log_prob,
            "text": text,
        },
        args.out,
        "decode.json",
    )
    return 0


def _cmd_vdc(args):
    taxonomy = load_taxonomy(args.taxonomy) if args.taxonomy else default_taxonomy()
    record = encode_vdc(
        args.part, args.damage, args.ratio, args.orientation, args.alpha, taxonomy
    )
    body = record.to_json_dict()
    body["severity"] = record.severity
    body["orientation"] = record.orientation
    _emit(body, args.out, "vdc.json")
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--out", help="directory for output artifacts")
    common.add_argument(
        "--seed",
        type=int,
        default=0,
        help="reserved for sampling modes; reference mode is deterministic",
    )
    ap = argparse.ArgumentParser(prog="vdkit", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "decompose", parents=[common], help="quadtree-decompose an image"
    )
    p.add_argument("image", help="input .ppm/.pgm/.mten")
    p.add_argument("--tau", type=float, default=QuadtreeConfig.tau)
    p.add_argument("--max-depth", type=int, default=QuadtreeConfig.max_depth)
    p.add_argument("--min-side", type=int, default=QuadtreeConfig.min_side)
    p.set_defaults(func=_cmd_decompose)

    p = sub.add_parser(
        "segment", parents=[common], help="run the full pipeline on an image"
    )
    p.add_argument("image", help="input .ppm")
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser(
        "eval", parents=[common], help="score predictions against ground truth"
    )
    p.add_argument("predictions", help="predictions JSON")
    p.add_argument("ground_truth", help="ground-truth JSON")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser(
        "ctc-loss", parents=[common], help="sequence loss for a probability matrix"
    )
    p.add_argument("--probs", required=True, help="(T, A+1) probabilities, .mten")
    p.add_argument("--labels", help="comma-separated target labels, e.g. 1,2,1")
    p.add_argument("--text", help="target text (needs --alphabet)")
    p.add_argument("--alphabet", help="one character per non-blank label")
    p.add_argument("--gamma", type=float, default=0.0, help="focal exponent")
    p.add_argument("--grad-out", help="write d loss / d log_probs as .mten")
    p.set_defaults(func=_cmd_ctc_loss)

    p = sub.add_parser(
        "decode", parents=[common], help="decode a probability matrix to labels"
    )
    p.add_argument("--probs", required=True, help="(T, A+1) probabilities, .mten")
    p.add_argument("--beam-width", type=int, default=BeamConfig.beam_width)
    p.add_argument("--greedy", action="store_true", help="argmax-collapse instead")
    p.add_argument("--alphabet", help="one character per non-blank label")
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser(
        "vdc", parents=[common], help="encode one damage record"
    )
    p.add_argument("--part", required=True)
    p.add_argument("--damage", required=True)
    p.add_argument("--ratio", type=float, required=True, help="severity ratio r")
    p.add_argument(
        "--orientation", type=float, required=True, help="orientation degrees"
    )
    p.add_argument("--alpha", type=float, required=True, help="confidence in [0,1]")
    p.add_argument("--taxonomy", help="taxonomy JSON (default: bundled)")
    p.set_defaults(func=_cmd_vdc)
    return ap


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        cause = stage_error_cause(exc)
        if isinstance(cause, ConfigError):
            return 2
        if isinstance(cause, InputError):
            return 3
        return 4
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except InvariantError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except VdkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
