"""``occlubench`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import harness
from .synthdata import SynthConfig, SynthError, generate_corpus


def _jobs(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("--jobs must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="occlubench",
                                description="Occlusion attacks against classical face PAD baselines.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, manifest=True):
        if manifest:
            sp.add_argument("--manifest", required=True, type=Path)
        sp.add_argument("--out", required=True, type=Path)
        sp.add_argument("--seed", type=int, default=7)
        sp.add_argument("--jobs", type=_jobs, default=os.cpu_count() or 1)

    sp = sub.add_parser("synth", help="generate a synthetic face/attack corpus")
    common(sp, manifest=False)
    sp.add_argument("--subjects", type=int, default=20)
    sp.add_argument("--frames", type=int, default=10)
    sp.add_argument("--size", default="240x320", help="HEIGHTxWIDTH")
    sp.add_argument("--attacks", default="print,replay")

    sp = sub.add_parser("occlude", help="write occluded copies of the test partition")
    common(sp)
    sp.add_argument("--occlusion", action="append", required=True,
                    help="low|medium|high|round|mask3d[:id]|glasses[:id]; repeatable")

    sp = sub.add_parser("extract", help="extract a feature CSV")
    common(sp)
    sp.add_argument("--extractor", choices=sorted(harness.PIPELINES), required=True)

    def model_flags(sp):
        sp.add_argument("--kernel", choices=("linear", "rbf"), default="rbf")
        sp.add_argument("--c", type=float, default=1.0)
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--gamma", type=float)
        g.add_argument("--grid", action="store_true", help="select C/gamma by dev EER")

    sp = sub.add_parser("train", help="fit normalization + SVM on the train partition")
    common(sp)
    sp.add_argument("--features", required=True, type=Path)
    model_flags(sp)

    sp = sub.add_parser("evaluate", help="dev-EER threshold, then test metrics")
    common(sp)
    sp.add_argument("--features", required=True, type=Path)
    sp.add_argument("--model", required=True, type=Path)
    sp.add_argument("--occlusion", default="none")
    sp.add_argument("--fallback", type=int, default=None,
                    help="unoccluded fallback count (default: read occlusion_log.json next to the manifest)")

    sp = sub.add_parser("report", help="merge evaluate outputs into pipeline x occlusion tables")
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("runs", nargs="+", type=Path)

    sp = sub.add_parser("run", help="occlude, extract, train and evaluate in one go")
    common(sp)
    sp.add_argument("--extractor", action="append", choices=sorted(harness.PIPELINES))
    sp.add_argument("--occlusion", action="append")
    sp.add_argument("--no-occlusion", action="store_true", help="baseline only")
    model_flags(sp)
    return p


def _fallback_for(manifest: Path) -> int:
    log_path = manifest.parent / "occlusion_log.json"
    if log_path.exists():
        return int(json.loads(log_path.read_text())["unoccluded_fallback"])
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            h, w = (int(v) for v in args.size.lower().split("x"))
            cfg = SynthConfig(seed=args.seed, n_subjects=args.subjects,
                              frames_per_video=args.frames, image_size=(h, w),
                              attack_kinds=tuple(a for a in args.attacks.split(",") if a))
            print(generate_corpus(cfg, args.out, jobs=args.jobs))
        elif args.command == "occlude":
            for occ in args.occlusion:
                print(harness.cmd_occlude(args.manifest, args.out, occ, jobs=args.jobs))
        elif args.command == "extract":
            print(harness.cmd_extract(args.manifest, args.extractor, args.out, args.jobs))
        elif args.command == "train":
            print(harness.cmd_train(args.manifest, args.features, args.out, args.kernel, args.c,
                                    args.gamma, args.grid, args.seed))
        elif args.command == "evaluate":
            fb = args.fallback if args.fallback is not None else _fallback_for(args.manifest)
            r = harness.cmd_evaluate(args.manifest, args.features, args.model, args.out,
                                     args.occlusion, fb)
            print(f"threshold={r.threshold:.6g} far={r.far:.2f} frr={r.frr:.2f} hter={r.hter:.2f}")
        elif args.command == "report":
            print(harness.cmd_report(args.runs, args.out))
        elif args.command == "run":
            occs = [] if args.no_occlusion else (args.occlusion or list(harness.OCCLUSION_COLUMNS[1:]))
            cfg = harness.RunConfig(manifest=args.manifest, out=args.out,
                                    extractors=args.extractor or ("lbp", "iqm", "motion"),
                                    occlusions=occs, kernel=args.kernel, C=args.c,
                                    gamma=args.gamma, grid=args.grid, seed=args.seed,
                                    jobs=args.jobs)
            harness.run_protocol(cfg)
            print(args.out / "report.md")
    except harness.HarnessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SynthError, ValueError, OSError) as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
