"""Stage implementations behind the command line.

Every stage reads its inputs from files written by earlier stages and writes
its outputs plus a ``run.json`` record into its own directory::

    <root>/data/                      synthesised phantom dataset (synth)
    <root>/fold<k>/semi/              self-training network + semi labels
    <root>/fold<k>/reg/               registration network
    <root>/fold<k>/ssl/               propagated labels and fields
    <root>/fold<k>/fused/             intersected labels
    <root>/fold<k>/final/             network trained on manual + fused labels
    <root>/fold<k>/baseline/          network trained on central slices only
    <root>/fold<k>/eval/              per-volume metrics and predicted masks
    <root>/crossval/                  pooled tables over the folds run

A stage whose record matches the current settings and input hashes is
skipped, so re-running with unchanged inputs is a no-op.
"""

import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import Adam, load_checkpoint, save_checkpoint
from .data import (
    CentralAnnotation,
    generate_phantom,
    load_dataset,
    load_promise12,
    normalize_intensity,
    resample_inplane,
    resample_mask_inplane,
    split_folds,
    write_dataset,
)
from .data.phantom import MANIFEST_NAME
from .exceptions import ConfigError, PrerequisiteError
from .fusion import fuse_dataset
from .labelsets import LABELSET_MANIFEST, read_labelset, write_fields, write_labelset, write_mask_volume
from .metrics import CSV_FIELDS, METRICS, aggregate, dice, evaluate_volume, precision, report_rows, write_csv
from .pipeline import build_mixed_dataset, predict_volume, train_final, train_fs_lcs
from .registration import RegNet, mean_similarity, propagate_labels, train_registration
from .segmentation import UNet, make_lr_fn
from .semi import emit_semi_labels, pseudo_label, semi_train, warmup_train

log = logging.getLogger("collabseg")

RECORD = "run.json"
METHODS = {"final": "Ours", "baseline": "FS-LCS"}
TABLE_FIELDS = ("method", "n_volumes") + tuple(f"{m}_{s}" for m in METRICS for s in ("mean", "sd"))


# -- hashing and run records ---------------------------------------------------


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_digests(root, paths):
    """sha256 of each file (directories are expanded), keyed relative to ``root``."""
    out = {}
    for path in paths:
        path = Path(path)
        files = sorted(p for p in path.rglob("*") if p.is_file() and p.name != RECORD) if path.is_dir() else [path]
        for f in files:
            out[str(f.relative_to(root))] = file_digest(f)
    return out


def _section_hash(config, names):
    data = config.to_dict()
    subset = {name: data[name] for name in names}
    return hashlib.sha256(json.dumps(subset, sort_keys=True).encode()).hexdigest()


@dataclass
class Stage:
    name: str
    command: str
    sections: tuple


STAGES = {
    "synth": Stage("data", "synth", ("data",)),
    "semi": Stage("semi", "train-semi", ("data", "folds", "seed", "unet", "loss", "optim", "semi")),
    "reg": Stage("reg", "train-reg", ("data", "folds", "seed", "reg", "optim")),
    "ssl": Stage("ssl", "propagate", ("data", "folds", "seed")),
    "fused": Stage("fused", "fuse", ("fusion",)),
    "final": Stage("final", "train-final", ("data", "folds", "seed", "unet", "loss", "optim", "final", "fusion")),
    "baseline": Stage("baseline", "train-baseline", ("data", "folds", "seed", "unet", "loss", "optim", "final")),
    "eval": Stage("eval", "evaluate", ("data", "folds", "seed")),
    "crossval": Stage("crossval", "crossval", ("data", "folds", "seed")),
}


class Runner:
    """Executes stages for one experiment configuration under ``root``."""

    def __init__(self, config, root, resume=True, argv=None):
        self.config = config
        self.root = Path(root)
        self.resume = resume
        self.argv = list(argv) if argv is not None else list(sys.argv[1:])
        self._prepared = None

    # -- bookkeeping ----------------------------------------------------------
    def stage_dir(self, stage, fold=None):
        name = STAGES[stage].name
        return self.root / name if fold is None else self.root / f"fold{fold}" / name

    def _key(self, stage, fold, inputs):
        payload = {
            "stage": stage,
            "fold": fold,
            "settings": _section_hash(self.config, STAGES[stage].sections),
            "inputs": inputs,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    def _up_to_date(self, directory, key):
        record = directory / RECORD
        if not (self.resume and record.is_file()):
            return False
        try:
            data = json.loads(record.read_text())
        except json.JSONDecodeError:
            return False
        if data.get("key") != key:
            return False
        return all((self.root / rel).is_file() and file_digest(self.root / rel) == digest
                   for rel, digest in data.get("outputs", {}).items())

    def _write_record(self, stage, fold, directory, key, inputs, metrics, started):
        outputs = tree_digests(self.root, [directory])
        record = {
            "stage": stage,
            "command": STAGES[stage].command,
            "fold": fold,
            "seed": self.config.seed,
            "config_hash": self.config.hash(),
            "config": self.config.to_dict(),
            "argv": self.argv,
            "version": __version__,
            "key": key,
            "inputs": inputs,
            "outputs": outputs,
            "metrics": metrics,
            "elapsed_seconds": round(time.perf_counter() - started, 3),
        }
        (directory / RECORD).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
        return record

    def _run(self, stage, fold, input_paths, body):
        """Skip ``body`` when its record is current, otherwise run it and record the result."""
        directory = self.stage_dir(stage, fold)
        inputs = tree_digests(self.root, input_paths)
        key = self._key(stage, fold, inputs)
        if self._up_to_date(directory, key):
            log.info("%s%s is up to date", STAGES[stage].command, "" if fold is None else f" (fold {fold})")
            return json.loads((directory / RECORD).read_text())
        directory.mkdir(parents=True, exist_ok=True)
        started = time.perf_counter()
        log.info("running %s%s", STAGES[stage].command, "" if fold is None else f" (fold {fold})")
        metrics = body(directory) or {}
        return self._write_record(stage, fold, directory, key, inputs, metrics, started)

    def require(self, path, stage, fold=None):
        path = Path(path)
        if not path.exists():
            command = STAGES[stage].command
            fold_arg = "" if fold is None else f" --fold {fold}"
            raise PrerequisiteError(
                f"missing {path}; run `collabseg {command}{fold_arg}` first", command=command
            )
        return path

    def check_fold(self, fold):
        if fold is None or not 0 <= fold < self.config.folds:
            raise ConfigError(f"--fold must be in 0..{self.config.folds - 1}, got {fold}")

    # -- data -----------------------------------------------------------------
    def data_inputs(self):
        """Files that define the dataset, for input hashing."""
        if self.config.data.source == "phantom":
            directory = self.stage_dir("synth")
            self.require(directory / MANIFEST_NAME, "synth")
            return [directory]
        path = Path(self.config.data.path)
        if not path.exists():
            raise ConfigError(f"data.path {path} does not exist")
        if self.config.data.source == "dataset":
            return [path / MANIFEST_NAME] + sorted(path.glob("*.mhd")) + sorted(path.glob("*.raw"))
        return sorted(path.glob("Case*"))

    def load_entries(self):
        source = self.config.data.source
        if source == "phantom":
            return load_dataset(self.require(self.stage_dir("synth") / MANIFEST_NAME, "synth").parent)
        if source == "dataset":
            return load_dataset(self.config.data.path)
        entries = load_promise12(self.config.data.path)
        if not entries:
            raise ConfigError(f"no CaseXX.mhd volumes found in {self.config.data.path}")
        return entries

    def prepared(self):
        """Normalised working-resolution volumes, annotations, references and the fold split."""
        if self._prepared is None:
            size = tuple(self.config.data.input_size)
            volumes, annotations, native = {}, {}, {}
            for entry in self.load_entries():
                vol = normalize_intensity(resample_inplane(entry.volume.check_trainable(), size))
                volumes[vol.id] = vol
                ann = entry.annotation
                annotations[vol.id] = CentralAnnotation(vol.id, ann.central_index, resample_mask_inplane(ann.mask, size))
                native[vol.id] = entry
            split = split_folds(sorted(volumes), self.config.folds, self.config.seed)
            self._prepared = (volumes, annotations, native, split)
        return self._prepared

    def fold_data(self, fold):
        volumes, annotations, native, split = self.prepared()
        train_ids = sorted(split.training_ids(fold))
        val_ids = sorted(split.validation_ids(fold))
        train = [volumes[i] for i in train_ids]
        return train, [annotations[i] for i in train_ids], [volumes[i] for i in val_ids], native

    # -- stages ---------------------------------------------------------------
    def synth(self):
        if self.config.data.source != "phantom":
            raise ConfigError("synth needs data.source = 'phantom'")
        spec = self.config.phantom_spec()

        def body(directory):
            items = generate_phantom(spec)
            write_dataset(directory, items)
            return {"volumes": len(items)}

        return self._run("synth", None, [], body)

    def train_semi(self, fold):
        self.check_fold(fold)
        inputs = self.data_inputs()

        def body(directory):
            cfg = self.config
            train, anns, _, _ = self.fold_data(fold)
            by_id = {a.volume_id: a for a in anns}
            images = np.stack([v.voxels[v.central_index] for v in train])
            masks = np.stack([by_id[v.id].mask for v in train])
            unlabeled = np.stack([v.voxels[n] for v in train for n in range(v.depth) if n != v.central_index])
            semi_cfg = cfg.semi_config()
            lr_fn = make_lr_fn(cfg.optim.base_lr, cfg.optim.lr_step, cfg.optim.lr_decay)
            net = UNet(cfg.unet, seed=cfg.seed)
            optimizer = Adam(net.parameters())
            rng = np.random.default_rng(cfg.seed)
            warm = warmup_train(net, images, masks, semi_cfg, cfg.loss, optimizer, rng, lr_fn)
            warm_dice = dice(pseudo_label(net.predict_proba(images)), masks)
            semi = semi_train(net, images, masks, unlabeled, semi_cfg, cfg.loss, optimizer, rng, lr_fn)
            save_checkpoint(directory / "net.ckpt", net.state_dict())
            write_labelset(directory / "labels", emit_semi_labels(net, train))
            return {"warmup_loss": warm, "warmup_central_dice": warm_dice, "semi_loss": semi}

        return self._run("semi", fold, inputs, body)

    def train_reg(self, fold):
        self.check_fold(fold)
        inputs = self.data_inputs()

        def body(directory):
            reg_cfg = self.config.reg_config()
            train, _, _, _ = self.fold_data(fold)
            net = RegNet(reg_cfg, seed=reg_cfg.seed)
            before = mean_similarity(net, train, reg_cfg)
            trace = train_registration(net, train, reg_cfg)
            after = mean_similarity(net, train, reg_cfg)
            save_checkpoint(directory / "net.ckpt", net.state_dict())
            return {"loss": trace, "similarity_before": before, "similarity_after": after}

        return self._run("reg", fold, inputs, body)

    def _load_reg(self, fold):
        net = RegNet(self.config.reg_config())
        net.load_state_dict(load_checkpoint(self.require(self.stage_dir("reg", fold) / "net.ckpt", "reg", fold)))
        return net

    def propagate(self, fold):
        self.check_fold(fold)
        ckpt = self.require(self.stage_dir("reg", fold) / "net.ckpt", "reg", fold)
        inputs = self.data_inputs() + [ckpt]

        def body(directory):
            net = self._load_reg(fold)
            train, anns, _, _ = self.fold_data(fold)
            by_id = {a.volume_id: a for a in anns}
            masks = []
            (directory / "fields").mkdir(exist_ok=True)
            for v in train:
                labels, fields = propagate_labels(net, v, by_id[v.id], return_fields=True)
                masks.extend(labels)
                write_fields(directory / "fields" / f"{v.id}.mhd", fields)
            write_labelset(directory / "labels", masks)
            return {"masks": len(masks)}

        return self._run("ssl", fold, inputs, body)

    def fuse(self, fold):
        self.check_fold(fold)
        semi_dir = self.require(self.stage_dir("semi", fold) / "labels" / LABELSET_MANIFEST, "semi", fold).parent
        ssl_dir = self.require(self.stage_dir("ssl", fold) / "labels" / LABELSET_MANIFEST, "ssl", fold).parent
        inputs = [semi_dir, ssl_dir]

        def body(directory):
            semis = read_labelset(semi_dir, "semi")
            ssls = read_labelset(ssl_dir, "ssl")
            fused = fuse_dataset(semis, ssls, self.config.fusion.drop_disagreements)
            write_labelset(directory / "labels", fused)
            empty = sum(1 for m in fused if not m.mask.any())
            return {"masks": len(fused), "empty": empty}

        return self._run("fused", fold, inputs, body)

    def _save_net(self, directory, net, trace):
        save_checkpoint(directory / "net.ckpt", net.state_dict())
        return {"loss": trace}

    def train_final(self, fold):
        self.check_fold(fold)
        fused_dir = self.require(self.stage_dir("fused", fold) / "labels" / LABELSET_MANIFEST, "fused", fold).parent
        inputs = self.data_inputs() + [fused_dir]
        warm_start = self.config.final.warm_start
        if warm_start:
            inputs.append(self.require(self.stage_dir("semi", fold) / "net.ckpt", "semi", fold))

        def body(directory):
            cfg = self.config
            train, anns, _, _ = self.fold_data(fold)
            dataset = build_mixed_dataset(train, anns, read_labelset(fused_dir, "fused"), cfg.fusion.drop_disagreements)
            net = UNet(cfg.unet, seed=cfg.seed + 2)
            if warm_start:
                net.load_state_dict(load_checkpoint(self.stage_dir("semi", fold) / "net.ckpt"))
            trace = train_final(net, dataset, cfg.final_config(), cfg.loss)
            return {**self._save_net(directory, net, trace), "slices": len(dataset)}

        return self._run("final", fold, inputs, body)

    def train_baseline(self, fold):
        self.check_fold(fold)
        inputs = self.data_inputs()

        def body(directory):
            cfg = self.config
            train, anns, _, _ = self.fold_data(fold)
            net = UNet(cfg.unet, seed=cfg.seed + 2)
            trace = train_fs_lcs(net, train, anns, cfg.final_config(), cfg.loss)
            return {**self._save_net(directory, net, trace), "slices": len(train)}

        return self._run("baseline", fold, inputs, body)

    def _load_unet(self, stage, fold):
        net = UNet(self.config.unet)
        net.load_state_dict(load_checkpoint(self.require(self.stage_dir(stage, fold) / "net.ckpt", stage, fold)))
        return net

    def evaluate(self, fold):
        self.check_fold(fold)
        ckpts = [self.require(self.stage_dir(s, fold) / "net.ckpt", s, fold) for s in METHODS]
        inputs = self.data_inputs() + ckpts

        def body(directory):
            _, _, val, native = self.fold_data(fold)
            rows, summary = [], {}
            for stage, method in METHODS.items():
                net = self._load_unet(stage, fold)
                reports = []
                for v in val:
                    entry = native[v.id]
                    if entry.ground_truth is None:
                        raise ConfigError(f"volume {v.id} has no reference segmentation to evaluate against")
                    if self.config.data.evaluate_at == "native":
                        pred = predict_volume(net, v, (entry.volume.height, entry.volume.width))
                        ref, spacing = entry.ground_truth, entry.volume.spacing
                    else:
                        pred = predict_volume(net, v)
                        ref = resample_mask_inplane(entry.ground_truth, (v.height, v.width))
                        spacing = v.spacing
                    sy, sx, sz = spacing
                    write_mask_volume(directory / "predictions" / method / f"{v.id}.mhd", pred, spacing)
                    reports.append(evaluate_volume(pred, ref, (sz, sy, sx), v.id, method, fold))
                rows.extend(report_rows(reports, method, fold))
                summary[method] = {m: list(agg) for m, agg in aggregate(reports).items()}
            write_csv(directory / "metrics.csv", rows)
            return summary

        return self._run("eval", fold, inputs, body)

    def label_quality(self, fold):
        """Per-slice precision of the semi, ssl and fused labels against the references.

        Diagnostic only: labels are compared at the working resolution.
        """
        _, _, _, native = self.fold_data(fold)
        sets = {
            name: read_labelset(self.require(self.stage_dir(stage, fold) / "labels" / LABELSET_MANIFEST, stage, fold).parent)
            for name, stage in (("semi", "semi"), ("ssl", "ssl"), ("fused", "fused"))
        }
        rows = []
        by_key = {name: {m.key: m for m in masks} for name, masks in sets.items()}
        for key in sorted(by_key["fused"]):
            vid, n = key
            gt = native[vid].ground_truth
            ref = resample_mask_inplane(gt, by_key["fused"][key].mask.shape)[n]
            row = {"volume_id": vid, "slice": n, "distance": abs(n - native[vid].annotation.central_index)}
            for name in sets:
                row[f"{name}_precision"] = precision(by_key[name][key].mask, ref)
                row[f"{name}_dice"] = dice(by_key[name][key].mask, ref)
            rows.append(row)
        return rows

    def run_fold(self, fold):
        self.train_semi(fold)
        self.train_reg(fold)
        self.propagate(fold)
        self.fuse(fold)
        self.train_final(fold)
        self.train_baseline(fold)
        return self.evaluate(fold)

    def crossval(self, folds=None):
        folds = list(range(self.config.folds)) if folds is None else list(folds)
        for fold in folds:
            self.check_fold(fold)
        if self.config.data.source == "phantom":
            self.synth()
        for fold in folds:
            self.run_fold(fold)
        csvs = [self.stage_dir("eval", f) / "metrics.csv" for f in folds]

        def body(directory):
            return pool_folds(csvs, directory)

        return self._run("crossval", None, csvs, body)


def _read_metric_rows(path):
    import csv

    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def pool_folds(csv_paths, directory):
    """Pool per-volume rows of several folds into ``metrics.csv`` and a summary ``table.csv``."""
    import csv

    from .metrics import MetricsReport

    per_method = {}
    rows = []
    for path in csv_paths:
        for row in _read_metric_rows(path):
            if row["volume_id"] in ("MEAN", "SD"):
                continue
            report = MetricsReport(
                row["volume_id"], float(row["dice"]), float(row["iou"]), float(row["assd"]), float(row["ravd"]),
                row["method"], row["fold"],
            )
            per_method.setdefault(row["method"], []).append(report)
            rows.append([row[f] for f in CSV_FIELDS])
    for method in sorted(per_method, key=lambda m: list(METHODS.values()).index(m)):
        rows.extend(report_rows(per_method[method], method, "all"))
    write_csv(directory / "metrics.csv", rows)
    summary = {}
    with open(directory / "table.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TABLE_FIELDS)
        for method in METHODS.values():
            reports = per_method.get(method, [])
            agg = aggregate(reports)
            values = [f"{v:.6g}" for m in METRICS for v in agg[m]]
            writer.writerow([method, len(reports)] + values)
            summary[method] = {m: list(agg[m]) for m in METRICS}
    return summary
