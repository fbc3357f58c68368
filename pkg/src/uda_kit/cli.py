"""``uda-kit`` command line: segment, pretrain, vote, finetune, eval, knn."""
from __future__ import annotations

import argparse
import logging
import sys
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .cloud_io import read_labels, read_point_cloud, read_scan_list, write_labels
from .config import RunConfig, load_config
from .contrastive import EncoderParams, FinetuneParams, run_finetuning, run_pretraining
from .ensemble import generate_pseudo_labels
from .errors import ConfigError, DegenerateInput, MissingFile, UDAKitError
from .evaluation import eval_report
from .range_postprocess import knn_filter, project_spherical
from .segmentation import GROUND, NOISE, read_segments, segment_scan, write_segments

log = logging.getLogger("uda_kit")

COMMANDS = ("segment", "pretrain", "vote", "finetune", "eval", "knn")


class CommandError(UDAKitError):
    pass


def _scan_ids(cfg: RunConfig):
    cfg.require("scan_list")
    ids = read_scan_list(cfg.scan_list)
    if not ids:
        raise CommandError("empty scan list")
    return ids


def _require_files(directory: Path, ids, suffix: str, what: str):
    for scan_id in ids:
        path = directory / f"{scan_id}{suffix}"
        if not path.is_file():
            raise MissingFile(f"missing {what} for scan {scan_id!r}: {path}")


def _map(cfg: RunConfig, fn, items):
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _write_loss_csv(path: Path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,loss\n")
        for step, loss in rows:
            fh.write(f"{step},{loss!r}\n")


def cmd_segment(cfg: RunConfig, dry_run=False, skip_bad=False) -> int:
    cfg.require("points_dir", "output_dir")
    ids = _scan_ids(cfg)
    _require_files(cfg.points_dir, ids, ".bin", "point cloud")
    if dry_run:
        return 0
    out = cfg.segments_path
    out.mkdir(parents=True, exist_ok=True)

    def work(scan_id):
        cloud = read_point_cloud(cfg.points_dir / f"{scan_id}.bin")
        try:
            assignment = segment_scan(cloud, cfg.segmentation)
        except DegenerateInput as exc:
            if skip_bad:
                log.warning("skipping scan %s: %s", scan_id, exc)
                return scan_id, None
            raise DegenerateInput(f"scan {scan_id!r}: {exc}") from None
        write_segments(assignment, out / f"{scan_id}.seg")
        return scan_id, assignment

    results = _map(cfg, work, ids)
    hist = Counter()
    rows = ["scan,points,ground,noise,segments"]
    for scan_id, a in results:
        if a is None:
            rows.append(f"{scan_id},,,,skipped")
            continue
        hist[a.num_segments] += 1
        rows.append(f"{scan_id},{a.tags.size},{int((a.tags == GROUND).sum())},"
                    f"{int((a.tags == NOISE).sum())},{a.num_segments}")
    (cfg.output_dir / "segment_summary.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(f"segmented {sum(hist.values())} scan(s); segments per scan histogram:")
    for n in sorted(hist):
        print(f"  {n:4d} segments: {hist[n]} scan(s)")
    return 0


def cmd_pretrain(cfg: RunConfig, dry_run=False, **_) -> int:
    cfg.require("points_dir", "output_dir")
    ids = _scan_ids(cfg)
    _require_files(cfg.points_dir, ids, ".bin", "point cloud")
    _require_files(cfg.segments_path, ids, ".seg", "segment file")
    if dry_run:
        return 0
    clouds = [read_point_cloud(cfg.points_dir / f"{s}.bin") for s in ids]
    assignments = [read_segments(cfg.segments_path / f"{s}.seg", len(c)) for s, c in zip(ids, clouds)]
    params = EncoderParams.load(cfg.init_params) if cfg.init_params else EncoderParams.initialize(cfg.seed)
    rows = []
    params, _ = run_pretraining(clouds, assignments, params, cfg.train, cfg.augmentation,
                                start_step=cfg.start_step, on_step=lambda s, l: rows.append((s, l)))
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    params.save(cfg.output_dir / "encoder.params")
    _write_loss_csv(cfg.output_dir / "pretrain_loss.csv", rows)
    if rows:
        print(f"pretrained {len(rows)} step(s); first loss {rows[0][1]:.6f}, last loss {rows[-1][1]:.6f}")
    return 0


def cmd_vote(cfg: RunConfig, dry_run=False, **_) -> int:
    cfg.require("models", "output_dir")
    ids = _scan_ids(cfg)
    for name, directory in cfg.models:
        for scan_id in ids:
            if not (directory / f"{scan_id}.label").is_file():
                raise MissingFile(f"missing prediction for scan {scan_id!r} from model {name!r}")
    if dry_run:
        return 0
    summary = generate_pseudo_labels(ids, [(n, str(d)) for n, d in cfg.models], cfg.class_map, cfg.pseudo_path,
                                     workers=cfg.workers, points_dir=cfg.points_dir)
    names = cfg.class_map.class_names()
    text = summary.to_text(names)
    (cfg.output_dir / "vote_summary.txt").write_text(text, encoding="utf-8")
    (cfg.output_dir / "vote_summary.csv").write_text(summary.to_csv(names), encoding="utf-8")
    print(text, end="")
    return 0


def cmd_finetune(cfg: RunConfig, dry_run=False, **_) -> int:
    cfg.require("points_dir", "output_dir")
    ids = _scan_ids(cfg)
    _require_files(cfg.points_dir, ids, ".bin", "point cloud")
    _require_files(cfg.pseudo_path, ids, ".label", "pseudo-label file")
    if dry_run:
        return 0
    clouds = [read_point_cloud(cfg.points_dir / f"{s}.bin") for s in ids]
    labels = [read_labels(cfg.pseudo_path / f"{s}.label", len(c)) for s, c in zip(ids, clouds)]
    if cfg.init_params is not None:
        try:
            params = FinetuneParams.load(cfg.init_params)
        except UDAKitError:
            params = FinetuneParams.from_encoder(EncoderParams.load(cfg.init_params),
                                                 cfg.class_map.num_classes, cfg.seed)
    else:
        pretrained = cfg.output_dir / "encoder.params"
        encoder = EncoderParams.load(pretrained) if pretrained.is_file() else EncoderParams.initialize(cfg.seed)
        params = FinetuneParams.from_encoder(encoder, cfg.class_map.num_classes, cfg.seed)
    rows = []
    params, _ = run_finetuning(clouds, labels, params, cfg.train, cfg.class_map.ignore_id,
                               start_step=cfg.start_step, on_step=lambda s, l: rows.append((s, l)))
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    params.save(cfg.output_dir / "finetune.params")
    _write_loss_csv(cfg.output_dir / "finetune_loss.csv", rows)
    if rows:
        print(f"fine-tuned {len(rows)} step(s); first loss {rows[0][1]:.6f}, last loss {rows[-1][1]:.6f}")
    return 0


def cmd_eval(cfg: RunConfig, dry_run=False, **_) -> int:
    cfg.require("labels_dir", "output_dir")
    ids = _scan_ids(cfg)
    pred_dir = cfg.pred_dir or cfg.pseudo_path
    truth_map = cfg.truth_class_map or cfg.class_map
    pred_map = cfg.pred_class_map or truth_map.target_identity()
    _require_files(cfg.labels_dir, ids, ".label", "ground-truth file")
    _require_files(pred_dir, ids, ".label", "prediction file")
    if dry_run:
        return 0
    report = eval_report(cfg.labels_dir, pred_dir, ids, truth_map, pred_map)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    text = report.to_text()
    (cfg.output_dir / "eval_report.txt").write_text(text, encoding="utf-8")
    (cfg.output_dir / "eval_report.csv").write_text(report.to_csv(), encoding="utf-8")
    (cfg.output_dir / "confusion.csv").write_text(report.matrix.to_csv(report.class_names), encoding="utf-8")
    print(text, end="")
    return 0


def cmd_knn(cfg: RunConfig, dry_run=False, **_) -> int:
    cfg.require("points_dir", "output_dir", "knn_input_dir")
    ids = _scan_ids(cfg)
    _require_files(cfg.points_dir, ids, ".bin", "point cloud")
    _require_files(cfg.knn_input_dir, ids, ".label", "prediction file")
    if dry_run:
        return 0
    out = cfg.output_dir / "knn"
    out.mkdir(parents=True, exist_ok=True)

    def work(scan_id):
        cloud = read_point_cloud(cfg.points_dir / f"{scan_id}.bin")
        labels = read_labels(cfg.knn_input_dir / f"{scan_id}.label", len(cloud))
        image = project_spherical(cloud, cfg.knn_width, cfg.knn_height, cfg.knn_fov_up, cfg.knn_fov_down)
        filtered = knn_filter(cloud, labels, image, cfg.knn)
        write_labels(filtered, out / f"{scan_id}.label")
        return int(np.count_nonzero(filtered != labels))

    changed = _map(cfg, work, ids)
    print(f"filtered {len(ids)} scan(s); relabelled {sum(changed)} point(s)")
    return 0


HANDLERS = {
    "segment": cmd_segment,
    "pretrain": cmd_pretrain,
    "vote": cmd_vote,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "knn": cmd_knn,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uda-kit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="run configuration file")
    parser.add_argument("--seed", type=int, help="global RNG seed (overrides run.seed)")
    parser.add_argument("--workers", type=int, help="per-scan parallelism (overrides run.workers)")
    parser.add_argument("--dry-run", action="store_true", help="validate config and data layout, write nothing")
    parser.add_argument("--skip-bad", action="store_true", help="segment: skip scans too degenerate to segment")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("overrides", nargs="*", metavar="section.key=value")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_intermixed_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.workers is not None:
        overrides.append(f"run.workers={args.workers}")
    try:
        cfg = load_config(args.config, overrides)
    except (ConfigError, UDAKitError) as exc:
        print(f"uda-kit: config error: {exc}", file=sys.stderr)
        return 2
    try:
        return HANDLERS[args.command](cfg, dry_run=args.dry_run, skip_bad=args.skip_bad)
    except ConfigError as exc:
        print(f"uda-kit {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except (UDAKitError, OSError, ValueError) as exc:
        print(f"uda-kit {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
