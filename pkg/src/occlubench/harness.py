"""Experiment pipeline: occlude the test partition, extract features, train on
clean data, evaluate per occlusion, and assemble pipeline x occlusion reports."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import features as feat
from .classifier import LabeledSet, SvmModel, hyperparameter_grid, normalize_fit, svm_train
from .imaging import load_image, resize_bilinear, save_image, to_grayscale
from .landmarks import (FaceTooSmallError, LandmarkSet, face_crop, parse_landmarks)
from .metrics import MetricsReport, eer_threshold, evaluate, read_report_csv, write_report_csv
from .occlusion import AssetPack, parse_occlusion, resolve_assets

log = logging.getLogger(__name__)

CROP_SIZE = 64
OCCLUSION_COLUMNS = ("none", "low", "medium", "high", "round", "mask3d", "glasses")
COLUMN_TITLES = {"none": "no-occlusion"}
PIPELINES = {"lbp": "LBP+SVM", "iqm": "IQM+SVM", "motion": "FD+SVM"}
PARTITIONS = ("train", "dev", "test")


class HarnessError(RuntimeError):
    def __init__(self, command: str, path, sample_id: Optional[str], message: str):
        self.command, self.path, self.sample_id = command, str(path), sample_id
        where = f"{self.path}" + (f" [sample {sample_id}]" if sample_id else "")
        super().__init__(f"{command}: {where}: {message}")


@contextmanager
def incomplete_marker(target: Path):
    """Leave ``<target>.incomplete`` behind if the block fails."""
    marker = Path(str(target) + ".incomplete")
    marker.parent.mkdir(parents=True, exist_ok=True)
    marker.write_text("incomplete\n")
    yield
    marker.unlink()


# --------------------------------------------------------------------------
# manifests


@dataclass
class Entry:
    id: str
    frames_dir: Path
    landmarks_path: Optional[Path]
    label: str
    attack_kind: Optional[str]
    partition: str
    subject: str

    @property
    def y(self) -> float:
        return 1.0 if self.label == "bonafide" else -1.0

    def frame_paths(self) -> List[Path]:
        return sorted(self.frames_dir.glob("frame_*.ppm"))

    def landmarks(self) -> Dict[int, LandmarkSet]:
        if self.landmarks_path is None or not self.landmarks_path.exists():
            return {}
        return {s.frame: s for s in parse_landmarks(self.landmarks_path)}

    def to_json(self, base: Path) -> str:
        def rel(p):
            return None if p is None else os.path.relpath(p, base)
        return json.dumps({"id": self.id, "frames_dir": rel(self.frames_dir),
                           "landmarks_path": rel(self.landmarks_path), "label": self.label,
                           "attack_kind": self.attack_kind, "partition": self.partition,
                           "subject": self.subject})


def load_manifest(path: str | os.PathLike) -> List[Entry]:
    path = Path(path)
    base = path.parent
    out = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise HarnessError("manifest", path, None, str(exc)) from exc
    for line in lines:
        if not line.strip():
            continue
        r = json.loads(line)
        lp = r.get("landmarks_path")
        out.append(Entry(r["id"], (base / r["frames_dir"]).resolve(),
                         (base / lp).resolve() if lp else None, r["label"],
                         r.get("attack_kind"), r.get("partition", "test"), r.get("subject", r["id"])))
    return sorted(out, key=lambda e: e.id)


def write_manifest(path: Path, entries: Iterable[Entry]) -> None:
    base = path.parent.resolve()
    with open(path, "w", encoding="utf-8") as fh:
        for e in sorted(entries, key=lambda e: e.id):
            fh.write(e.to_json(base) + "\n")


def slug(occlusion: str) -> str:
    return occlusion.replace(":", "_")


# --------------------------------------------------------------------------
# occlude


def _occlude_sample(args) -> Tuple[str, Optional[str], List[int]]:
    entry, spec_name, out_dir, assets = args
    from .occlusion import apply_occlusion

    spec = parse_occlusion(spec_name).for_sample(entry.id, assets)
    lms = entry.landmarks()
    dst = Path(out_dir) / "samples" / entry.id
    dst.mkdir(parents=True, exist_ok=True)
    fallback = []
    for fp in entry.frame_paths():
        t = int(fp.stem.split("_")[1])
        img = load_image(fp)
        lm = lms.get(t)
        if lm is None:
            fallback.append(t)
        save_image(dst / fp.name, apply_occlusion(img, lm, spec, assets))
    return entry.id, spec.asset, fallback


def _pool_map(fn: Callable, tasks: list, jobs: int) -> list:
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, tasks))
    return [fn(t) for t in tasks]


def cmd_occlude(manifest: str | os.PathLike, out_dir: str | os.PathLike, occlusion: str,
                assets: Optional[AssetPack] = None, jobs: int = 1) -> Path:
    """Write occluded copies of the test partition; train/dev stay untouched.

    Returns the path of a full manifest in which train/dev entries point at the
    original frames and test entries at the occluded copies.
    """
    if parse_occlusion(occlusion) is None:
        raise HarnessError("occlude", manifest, None, "occlusion 'none' needs no occlude step")
    assets = assets or resolve_assets()
    entries = load_manifest(manifest)
    out = Path(out_dir) / slug(occlusion)
    new_manifest = out / "manifest.jsonl"
    with incomplete_marker(out):
        out.mkdir(parents=True, exist_ok=True)
        tests = [e for e in entries if e.partition == "test"]
        results = {}
        for e, res in zip(tests, _pool_map(
                _occlude_sample_safe, [(e, occlusion, str(out), assets) for e in tests], jobs)):
            if isinstance(res, str):
                raise HarnessError("occlude", e.frames_dir, e.id, res)
            results[e.id] = res
        new_entries = []
        for e in entries:
            if e.partition == "test":
                e = Entry(e.id, (out / "samples" / e.id).resolve(), e.landmarks_path, e.label,
                          e.attack_kind, e.partition, e.subject)
            new_entries.append(e)
        write_manifest(new_manifest, new_entries)
        log_obj = {"occlusion": occlusion,
                   "unoccluded_fallback": sum(len(r[2]) for r in results.values()),
                   "fallback_frames": {k: r[2] for k, r in sorted(results.items()) if r[2]},
                   "assets": {k: r[1] for k, r in sorted(results.items()) if r[1]}}
        (out / "occlusion_log.json").write_text(json.dumps(log_obj, indent=1, sort_keys=True) + "\n")
    return new_manifest


def _occlude_sample_safe(args):
    try:
        return _occlude_sample(args)
    except Exception as exc:  # reported with sample context by the caller
        return f"{type(exc).__name__}: {exc}"


# --------------------------------------------------------------------------
# extract


def _nearest_landmarks(lms: Dict[int, LandmarkSet], t: int) -> Optional[LandmarkSet]:
    if t in lms:
        return lms[t]
    if not lms:
        return None
    k = min(lms, key=lambda f: (abs(f - t), f))
    return lms[k]


def _extract_sample(args):
    entry, extractor = args
    try:
        lms = entry.landmarks()
        paths = entry.frame_paths()
        if not paths:
            return f"no frames in {entry.frames_dir}"
        vectors, skips = [], []
        if extractor == "MOTION5":
            frames = [to_grayscale(load_image(p)) for p in paths]
            h, w = frames[0].shape
            lm = _nearest_landmarks(lms, 0)
            if lm is None:
                bbox = (w // 4, h // 4, w - w // 4, h - h // 4)
            else:
                (x0, y0), (x1, y1) = lm.points.min(axis=0), lm.points.max(axis=0)
                bbox = (int(np.floor(x0)), int(np.floor(y0)), int(np.ceil(x1)), int(np.ceil(y1)))
            sig = feat.motion_signal(frames, bbox, (w, h))
            vectors.append(feat.motion_features(sig, sample_id=entry.id, frame_index=0))
            return vectors, skips
        fn = feat.lbp_histogram if extractor == "LBP59" else feat.iqm_vector
        for p in paths:
            t = int(p.stem.split("_")[1])
            img = load_image(p)
            lm = _nearest_landmarks(lms, t)
            if lm is None:
                crop = resize_bilinear(to_grayscale(img), CROP_SIZE, CROP_SIZE)
            else:
                try:
                    crop = face_crop(img, lm, CROP_SIZE)
                except FaceTooSmallError as exc:
                    skips.append({"sample_id": entry.id, "frame": t, "reason": str(exc)})
                    continue
            vectors.append(fn(crop, sample_id=entry.id, frame_index=t))
        return vectors, skips
    except Exception as exc:
        return f"{type(exc).__name__}: {exc}"


def extract_entries(entries: Sequence[Entry], extractor: str, jobs: int = 1,
                    command: str = "extract"):
    vectors, skips = [], []
    for e, res in zip(entries, _pool_map(_extract_sample, [(e, extractor) for e in entries], jobs)):
        if isinstance(res, str):
            raise HarnessError(command, e.frames_dir, e.id, res)
        vectors.extend(res[0])
        skips.extend(res[1])
    vectors.sort(key=lambda v: (v.sample_id, v.frame_index))
    return vectors, skips


def _extractor_name(extractor: str) -> str:
    if extractor in feat.CLI_NAMES:
        return feat.CLI_NAMES[extractor]
    if extractor in feat.DIMS:
        return extractor
    raise HarnessError("extract", "-", None, f"unknown extractor {extractor!r}")


def cmd_extract(manifest: str | os.PathLike, extractor: str, out_csv: str | os.PathLike,
                jobs: int = 1, partitions: Optional[Sequence[str]] = None) -> Path:
    name = _extractor_name(extractor)
    out_csv = Path(out_csv)
    entries = [e for e in load_manifest(manifest) if partitions is None or e.partition in partitions]
    with incomplete_marker(out_csv):
        vectors, skips = extract_entries(entries, name, jobs)
        feat.write_feature_csv(out_csv, vectors)
        Path(str(out_csv) + ".skips.json").write_text(json.dumps(skips, indent=1) + "\n")
    return out_csv


# --------------------------------------------------------------------------
# train / evaluate


def _partition_sets(manifest: str | os.PathLike, vectors: Sequence[feat.FeatureVector]):
    entries = {e.id: e for e in load_manifest(manifest)}
    groups: Dict[str, list] = {p: [] for p in PARTITIONS}
    for v in vectors:
        e = entries.get(v.sample_id)
        if e is None:
            raise HarnessError("train", manifest, v.sample_id, "sample not in manifest")
        groups[e.partition].append((v, e))
    return groups


def video_scores(model: SvmModel, rows) -> Tuple[List[str], np.ndarray, np.ndarray]:
    """Mean frame score per sample, in sample-id order."""
    if not rows:
        return [], np.array([]), np.array([], dtype=bool)
    x = np.array([v.values for v, _ in rows])
    s = model.decision(x)
    per: Dict[str, list] = {}
    label: Dict[str, bool] = {}
    for (v, e), sc in zip(rows, s):
        per.setdefault(e.id, []).append(sc)
        label[e.id] = e.label == "bonafide"
    ids = sorted(per)
    return ids, np.array([float(np.mean(per[i])) for i in ids]), np.array([label[i] for i in ids])


def train_model(groups, kernel: str = "rbf", C: float = 1.0, gamma: Optional[float] = None,
                grid: bool = False, seed: int = 0) -> SvmModel:
    train = groups["train"]
    if not train:
        raise HarnessError("train", "-", None, "no training samples")
    data = LabeledSet(np.array([v.values for v, _ in train]), np.array([e.y for _, e in train]))
    if not grid:
        model = svm_train(data, kernel, C, gamma, seed=seed)
        if groups["dev"]:
            ids, sc, bona = video_scores(model, groups["dev"])
            tau, eer = eer_threshold((sc, bona))
            model.info.update(dev_eer=eer, threshold=tau)
        return model
    if not groups["dev"]:
        raise HarnessError("train", "-", None, "grid search needs a dev partition")
    z = normalize_fit(data).apply(data.vectors)
    best, trials = None, []
    for c, g in hyperparameter_grid(z, kernel):
        model = svm_train(data, kernel, c, g, seed=seed)
        ids, sc, bona = video_scores(model, groups["dev"])
        tau, eer = eer_threshold((sc, bona))
        trials.append({"C": c, "gamma": g, "dev_eer": eer})
        if best is None or eer < best[0]:
            best = (eer, tau, model)
    eer, tau, model = best
    model.info.update(dev_eer=eer, threshold=tau, grid=trials)
    return model


def cmd_train(manifest: str | os.PathLike, features_csv: str | os.PathLike,
              out_model: str | os.PathLike, kernel: str = "rbf", C: float = 1.0,
              gamma: Optional[float] = None, grid: bool = False, seed: int = 0) -> Path:
    out_model = Path(out_model)
    with incomplete_marker(out_model):
        vectors = feat.read_feature_csv(features_csv)
        groups = _partition_sets(manifest, vectors)
        model = train_model(groups, kernel, C, gamma, grid, seed)
        model.info["extractor"] = vectors[0].extractor if vectors else ""
        model.save(out_model)
    return out_model


def evaluate_features(manifest, vectors, model: SvmModel, occlusion: str = "none",
                      fallback: int = 0, protocol: str = "grandtest") -> MetricsReport:
    groups = _partition_sets(manifest, vectors)
    if not groups["dev"] or not groups["test"]:
        raise HarnessError("evaluate", manifest, None, "dev and test partitions are required")
    _, dsc, dbona = video_scores(model, groups["dev"])
    _, tsc, tbona = video_scores(model, groups["test"])
    extractor = vectors[0].extractor
    return evaluate((dsc, dbona), (tsc, tbona), protocol=protocol, occlusion=occlusion,
                    extractor=extractor, unoccluded_fallback=fallback)


def cmd_evaluate(manifest: str | os.PathLike, features_csv: str | os.PathLike,
                 model_path: str | os.PathLike, out_csv: str | os.PathLike,
                 occlusion: str = "none", fallback: int = 0) -> MetricsReport:
    out_csv = Path(out_csv)
    with incomplete_marker(out_csv):
        model = SvmModel.load(model_path)
        vectors = feat.read_feature_csv(features_csv)
        report = evaluate_features(manifest, vectors, model, occlusion, fallback)
        write_report_csv(out_csv, [report])
    return report


# --------------------------------------------------------------------------
# report


def _column(occlusion: str) -> str:
    return occlusion.split(":")[0]


def _pipeline(extractor: str) -> str:
    inv = {v: k for k, v in feat.CLI_NAMES.items()}
    return PIPELINES.get(inv.get(extractor, extractor), extractor)


def render_markdown(rows: List[dict]) -> str:
    occs = []
    for r in rows:
        if r["occlusion"] not in occs:
            occs.append(r["occlusion"])
    order = {c: i for i, c in enumerate(OCCLUSION_COLUMNS)}
    occs.sort(key=lambda o: (order.get(_column(o), len(order)), o))
    extractors = []
    for r in rows:
        if r["extractor"] not in extractors:
            extractors.append(r["extractor"])
    cell = {(r["extractor"], r["occlusion"]): r for r in rows}
    titles = [COLUMN_TITLES.get(o, o) for o in occs]
    out = []
    for metrics, title in ((("far", "frr", "hter"), "FAR / FRR / HTER (%)"),
                           (("apcer", "bpcer", "acer"), "APCER / BPCER / ACER (%)")):
        out.append(f"### {title}\n")
        out.append("| Baseline | Metric | " + " | ".join(titles) + " |")
        out.append("|---|---|" + "---|" * len(occs))
        for ex in extractors:
            for m in metrics:
                vals = [cell[(ex, o)][m] if (ex, o) in cell else "" for o in occs]
                out.append(f"| {_pipeline(ex)} | {m.upper()} | " + " | ".join(vals) + " |")
        out.append("")
    out.append("### Unoccluded fallback frames\n")
    out.append("| Baseline | " + " | ".join(titles) + " |")
    out.append("|---|" + "---|" * len(occs))
    for ex in extractors:
        vals = [cell[(ex, o)]["unoccluded_fallback"] if (ex, o) in cell else "" for o in occs]
        out.append(f"| {_pipeline(ex)} | " + " | ".join(vals) + " |")
    return "\n".join(out) + "\n"


def cmd_report(report_csvs: Sequence[str | os.PathLike], out_dir: str | os.PathLike) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for p in report_csvs:
        rows.extend(read_report_csv(p))
    ex_order = {v: i for i, v in enumerate(feat.EXTRACTORS)}
    oc_order = {c: i for i, c in enumerate(OCCLUSION_COLUMNS)}
    rows.sort(key=lambda r: (ex_order.get(r["extractor"], 99), r["extractor"],
                             oc_order.get(_column(r["occlusion"]), 99), r["occlusion"]))
    with incomplete_marker(out / "report.csv"):
        import csv
        from .metrics import REPORT_COLUMNS
        with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
            wr = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
            wr.writeheader()
            wr.writerows(rows)
        (out / "report.md").write_text(render_markdown(rows), encoding="utf-8")
    return out / "report.csv"


# --------------------------------------------------------------------------
# full protocol


@dataclass
class RunConfig:
    manifest: Path
    out: Path
    extractors: Sequence[str] = ("lbp", "iqm", "motion")
    occlusions: Sequence[str] = ("low", "medium", "high", "round", "mask3d", "glasses")
    kernel: str = "rbf"
    C: float = 1.0
    gamma: Optional[float] = None
    grid: bool = True
    seed: int = 0
    jobs: int = field(default_factory=lambda: os.cpu_count() or 1)

    def __post_init__(self):
        self.manifest, self.out = Path(self.manifest), Path(self.out)
        if not self.manifest.exists():
            raise HarnessError("run", self.manifest, None, "manifest does not exist")
        for o in self.occlusions:
            if o == "none":
                continue
            try:
                parse_occlusion(o)
            except ValueError as exc:
                raise HarnessError("run", self.manifest, None, str(exc)) from exc
        for x in self.extractors:
            _extractor_name(x)


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def protected_checksums(manifest: str | os.PathLike) -> Dict[str, str]:
    """SHA-256 of every train/dev frame the manifest references."""
    sums = {}
    for e in load_manifest(manifest):
        if e.partition in ("train", "dev"):
            for p in e.frame_paths():
                sums[str(p)] = sha256_file(p)
    return sums


def run_protocol(cfg: RunConfig, assets: Optional[AssetPack] = None) -> List[MetricsReport]:
    assets = assets or resolve_assets()
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    before = protected_checksums(cfg.manifest)

    occluded = {}
    fallback = {}
    for occ in cfg.occlusions:
        if occ == "none":
            continue
        m = cmd_occlude(cfg.manifest, out / "occluded", occ, assets, cfg.jobs)
        occluded[occ] = m
        fallback[occ] = json.loads((m.parent / "occlusion_log.json").read_text())["unoccluded_fallback"]

    reports, report_files = [], []
    for ex in cfg.extractors:
        name = _extractor_name(ex)
        d = out / ex
        d.mkdir(parents=True, exist_ok=True)
        clean_csv = cmd_extract(cfg.manifest, name, d / "features_none.csv", cfg.jobs)
        model_path = cmd_train(cfg.manifest, clean_csv, d / "model.json", cfg.kernel, cfg.C,
                               cfg.gamma, cfg.grid, cfg.seed)
        r = cmd_evaluate(cfg.manifest, clean_csv, model_path, d / "report_none.csv", "none", 0)
        reports.append(r)
        report_files.append(d / "report_none.csv")
        clean_rows = [v for v in feat.read_feature_csv(clean_csv)]
        entries = {e.id: e for e in load_manifest(cfg.manifest)}
        for occ, m in occluded.items():
            test_csv = cmd_extract(m, name, d / f"features_{slug(occ)}_test.csv", cfg.jobs,
                                   partitions=("test",))
            merged = [v for v in clean_rows if entries[v.sample_id].partition != "test"]
            merged += feat.read_feature_csv(test_csv)
            merged.sort(key=lambda v: (v.sample_id, v.frame_index))
            merged_csv = d / f"features_{slug(occ)}.csv"
            feat.write_feature_csv(merged_csv, merged)
            rep_csv = d / f"report_{slug(occ)}.csv"
            reports.append(cmd_evaluate(m, merged_csv, model_path, rep_csv, occ, fallback[occ]))
            report_files.append(rep_csv)

    cmd_report(report_files, out)
    after = protected_checksums(cfg.manifest)
    audit = {"train_dev_frames": len(before), "unchanged": before == after,
             "occluded_manifests_reference_clean_train_dev": all(
                 protected_checksums(m) == before for m in occluded.values())}
    (out / "audit.json").write_text(json.dumps(audit, indent=1, sort_keys=True) + "\n")
    if not (audit["unchanged"] and audit["occluded_manifests_reference_clean_train_dev"]):
        raise HarnessError("run", out / "audit.json", None, "train/dev inputs were modified")
    return reports
