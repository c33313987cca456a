"""Command-line entry point: ``deepmark <command> [flags]``.

Exit codes: 0 success, 1 domain error (bad input data, missing file,
undecodable watermark), 2 usage error (bad flags, malformed JSON).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("deepmark")


class UsageError(Exception):
    pass


def _read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed JSON in {path} at line {exc.lineno} column {exc.colno} "
                         f"(char {exc.pos}): {exc.msg}") from None


def _need(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"file not found: {p}")
    return p


def _load_model(path):
    from .checkpoint import load_checkpoint
    return load_checkpoint(_need(path)).model


def _write_bits(path, bits) -> None:
    from .imageio import write_pbm, write_png
    path = Path(path)
    if path.suffix.lower() == ".png":
        write_png(path, np.asarray(bits, np.float32)[..., 0])
    else:
        write_pbm(path, bits)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_version(args) -> int:
    print(__version__)
    return 0


def cmd_train(args) -> int:
    from .trainer import TrainConfig, train
    cfg_path = _need(args.config)
    try:
        cfg = TrainConfig.from_dict(_read_json(cfg_path), base_dir=cfg_path.parent)
    except TypeError as exc:
        raise UsageError(f"bad config {cfg_path}: {exc}") from None
    result = train(cfg)
    print(f"trained {result.steps} steps; checkpoint {cfg.checkpoint_path}; log {cfg.log_path}")
    return 0


def cmd_embed(args) -> int:
    from .data import load_cover, load_watermark
    from .imageio import write_png
    model = _load_model(args.model)
    cover = load_cover(_need(args.cover))
    mark = load_watermark(_need(args.watermark))
    m = model.mark(mark, cover).data
    write_png(args.out, m)
    return 0


def cmd_extract(args) -> int:
    from .data import load_cover
    from .metrics import binarize
    model = _load_model(args.model)
    marked = load_cover(_need(args.marked))
    bits = binarize(model.recover(marked).data)
    _write_bits(args.out, bits)
    return 0


def _attack_spec(args):
    from .attacks import AttackSpec
    if args.spec:
        return AttackSpec.from_dict(_read_json(args.spec))
    if not args.kind:
        raise UsageError("attack needs --spec or --kind")
    return AttackSpec(args.kind, args.strength, args.seed)


def cmd_attack(args) -> int:
    from .attacks import apply_attack
    from .imageio import read_image, write_png
    spec = _attack_spec(args)
    img = read_image(_need(args.input))
    write_png(args.out, apply_attack(img, spec))
    return 0


def _dataset(covers_dir, marks_dir):
    from .data import load_covers, load_watermarks
    covers = load_covers(_need(covers_dir))
    marks = load_watermarks(_need(marks_dir))
    if len(covers) != len(marks):
        raise ValueError(f"{len(covers)} covers but {len(marks)} watermarks; pairs are matched by sorted file name")
    return np.stack(marks), np.stack(covers)


def cmd_sweep(args) -> int:
    from .metrics import robustness_sweep
    model = _load_model(args.model)
    marks, covers = _dataset(args.covers, args.watermarks)
    grid = _read_json(args.grid)
    if not isinstance(grid, dict) or not grid:
        raise UsageError(f"{args.grid}: grid must be a JSON object mapping attack kind to a strength list")
    results = robustness_sweep(model, marks, covers, grid, seed=args.seed, csv_path=args.out, svg_dir=args.svg)
    for res in results:
        for s, b, p, n in res.rows:
            print(f"{res.kind} strength={s:g} mean_ber={b:.3f}% mean_psnr={p:.2f}dB n={n}")
    return 0


def cmd_ablation(args) -> int:
    from .metrics import ablation_tau
    spec = _attack_spec(args)
    with_tau = _load_model(args.with_tau)
    without_tau = _load_model(args.without_tau)
    marks, covers = _dataset(args.covers, args.watermarks)
    res = ablation_tau(with_tau, without_tau, marks, covers, spec, csv_path=args.out)
    print(f"with_tau mean_ber={res['with_tau']:.3f}% without_tau mean_ber={res['without_tau']:.3f}%")
    return 0


def cmd_ecc_encode(args) -> int:
    from .ecc import PAYLOAD_BYTES, watermark_pack
    data = _need(args.input).read_bytes()
    if len(data) > PAYLOAD_BYTES:
        raise ValueError(f"payload is {len(data)} bytes; at most {PAYLOAD_BYTES} fit in one watermark")
    _write_bits(args.out, watermark_pack(data.ljust(PAYLOAD_BYTES, b"\0")))
    return 0


def cmd_ecc_decode(args) -> int:
    from .data import load_watermark
    from .ecc import watermark_unpack
    payload, fixed = watermark_unpack(load_watermark(_need(args.input)))
    Path(args.out).write_bytes(payload)
    print(f"corrected {fixed} byte errors")
    return 0


def cmd_camera_sim(args) -> int:
    from .camera import CaptureSpec, extract_from_photo, simulate_capture
    from .data import load_cover, load_watermark
    from .imageio import write_png
    model = _load_model(args.model)
    marked = load_cover(_need(args.marked))
    spec = CaptureSpec.from_dict(_read_json(args.spec))
    reference = load_watermark(_need(args.reference)) if args.reference else None
    photo, corners = simulate_capture(marked, spec)
    result = extract_from_photo(photo, corners, model, reference=reference)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_png(out / "photo.png", photo)
    write_png(out / "rectified.png", result.rectified)
    _write_bits(out / "extracted.pbm", result.bits)
    payload = result.to_dict()
    payload["corners"] = corners.tolist()
    (out / "result.json").write_text(json.dumps(payload, indent=2) + "\n")
    print(json.dumps(result.to_dict()))
    return 0 if result.payload is not None else 1


def cmd_gradcheck(args) -> int:
    from .gradcheck import TOLERANCE, run_suite
    results = run_suite(instances=args.instances, seed=args.seed, full_graph=not args.ops_only, report=print)
    worst = max(results.values())
    ok = worst < TOLERANCE
    print(f"{'PASS' if ok else 'FAIL'} worst={worst:.3e} tolerance={TOLERANCE:.0e}")
    return 0 if ok else 1


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="deepmark", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("version").set_defaults(func=cmd_version)

    s = sub.add_parser("train")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("embed")
    s.add_argument("--model", required=True)
    s.add_argument("--cover", required=True)
    s.add_argument("--watermark", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("extract")
    s.add_argument("--model", required=True)
    s.add_argument("--marked", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract)

    def attack_flags(s):
        s.add_argument("--spec", help="JSON {kind, strength, seed}")
        s.add_argument("--kind")
        s.add_argument("--strength", type=float, default=0.0)
        s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("attack")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    attack_flags(s)
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("sweep")
    s.add_argument("--model", required=True)
    s.add_argument("--covers", required=True)
    s.add_argument("--watermarks", required=True)
    s.add_argument("--grid", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--svg")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("ablation")
    s.add_argument("--with-tau", required=True)
    s.add_argument("--without-tau", required=True)
    s.add_argument("--covers", required=True)
    s.add_argument("--watermarks", required=True)
    s.add_argument("--out", required=True)
    attack_flags(s)
    s.set_defaults(func=cmd_ablation)

    s = sub.add_parser("ecc-encode")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ecc_encode)

    s = sub.add_parser("ecc-decode")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ecc_decode)

    s = sub.add_parser("camera-sim")
    s.add_argument("--model", required=True)
    s.add_argument("--marked", required=True)
    s.add_argument("--spec", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--reference")
    s.set_defaults(func=cmd_camera_sim)

    s = sub.add_parser("gradcheck")
    s.add_argument("--instances", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--ops-only", action="store_true", help="skip the whole-network check")
    s.set_defaults(func=cmd_gradcheck)
    return p


def run(argv=None) -> int:
    from .checkpoint import CheckpointError
    from .ecc import DecodeError
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CheckpointError, DecodeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
