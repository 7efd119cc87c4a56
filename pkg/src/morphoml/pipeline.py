"""Run orchestration: staged, resumable, deterministic end-to-end runs.

Stage order is split, preprocess, features, train, predict, evaluate
(patch aggregation happens inside the features stage, which writes the
finished per-patch vectors). Each stage persists its artifact under the run
directory and later stages consume only those artifacts, so a run can be
resumed from any stage whose inputs are still on disk.

Determinism: every random choice derives from the single config seed, the
orchestrator is single-threaded, and worker pools only parallelize pure
per-core computations whose results are collected in submission order.
Thread count therefore never changes an output byte.
"""
from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from . import __version__
from . import io as mio
from .aggregate import DEFAULT_CONFIG, FeatureRegistry, assemble_features, build_registry
from .cohort import LABEL_TO_CODE, Cohort, load_manifest, load_split, save_split, stratified_split
from .errors import DataError, MorphomlError, ValidationError
from .evaluation import PredictionSet, evaluate
from .gbdt import GbdtModel, GbdtParams, cross_validate, load_model, save_model, train
from .objectfeatures import extract_object_tables, validate_label_mask
from .preprocess import (
    DEFAULT_GRID_N,
    background_fraction,
    deconvolve_stains,
    gray_channel,
    grid_slices,
    is_background,
)

STAGES = ("split", "preprocess", "features", "train", "predict", "evaluate")
META_COLUMNS = ("case_id", "core_id", "patch", "diagnosis")
DEFAULT_EXPANSION_PX = 10


@dataclass(frozen=True)
class RunConfig:
    manifest: str
    images_dir: str
    masks_dir: str
    out_dir: str
    feature_config: str = DEFAULT_CONFIG
    ihc_stains: tuple = ()
    ct_radii: tuple = ()
    grid_n: int = DEFAULT_GRID_N
    expansion_px: int = DEFAULT_EXPANSION_PX
    fractions: tuple = (0.6, 0.2, 0.2)
    seed: int = 0
    n_folds: int = 5
    n_replicates: int = 1000
    threads: int = 0  # 0: use MORPHOML_THREADS, else 1
    gbdt: dict = field(default_factory=dict)

    def validate(self):
        if not os.path.isfile(self.manifest):
            raise ValidationError(f"manifest not found: {self.manifest}")
        for d in (self.images_dir, self.masks_dir):
            if not os.path.isdir(d):
                raise ValidationError(f"directory not found: {d}")
        root = math.isqrt(self.grid_n)
        if root * root != self.grid_n:
            raise ValidationError(f"grid_n {self.grid_n} is not a perfect square")
        if self.expansion_px < 0:
            raise ValidationError("expansion_px must be >= 0")
        if self.n_folds < 2:
            raise ValidationError("n_folds must be >= 2")
        if self.threads < 0:
            raise ValidationError("threads must be >= 0")
        build_registry(self.feature_config, self.ct_radii, self.ihc_stains)
        self.gbdt_params()  # raises on bad overrides

    def gbdt_params(self) -> GbdtParams:
        params = GbdtParams(seed=self.seed)
        unknown = set(self.gbdt) - set(params.to_dict())
        if unknown:
            raise ValidationError(f"unknown gbdt parameter(s): {sorted(unknown)}")
        merged = replace(params, **self.gbdt)
        if "seed" not in self.gbdt:
            merged = replace(merged, seed=self.seed)
        merged.validate()
        return merged

    def registry(self) -> FeatureRegistry:
        return build_registry(self.feature_config, self.ct_radii, self.ihc_stains)

    def thread_count(self) -> int:
        if self.threads > 0:
            return self.threads
        env = os.environ.get("MORPHOML_THREADS", "")
        return int(env) if env.isdigit() and int(env) > 0 else 1

    def to_dict(self) -> dict:
        return {
            "manifest": self.manifest,
            "images_dir": self.images_dir,
            "masks_dir": self.masks_dir,
            "out_dir": self.out_dir,
            "feature_config": self.feature_config,
            "ihc_stains": list(self.ihc_stains),
            "ct_radii": list(self.ct_radii),
            "grid_n": self.grid_n,
            "expansion_px": self.expansion_px,
            "fractions": list(self.fractions),
            "seed": self.seed,
            "n_folds": self.n_folds,
            "n_replicates": self.n_replicates,
            "threads": self.threads,
            "gbdt": dict(self.gbdt),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {
            "manifest", "images_dir", "masks_dir", "out_dir", "feature_config",
            "ihc_stains", "ct_radii", "grid_n", "expansion_px", "fractions",
            "seed", "n_folds", "n_replicates", "threads", "gbdt",
        }
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown config key(s): {sorted(unknown)}")
        for key in ("manifest", "images_dir", "masks_dir", "out_dir"):
            if key not in doc:
                raise ValidationError(f"config is missing required key {key!r}")
        doc = dict(doc)
        for tup in ("ihc_stains", "ct_radii", "fractions"):
            if tup in doc:
                doc[tup] = tuple(doc[tup])
        return cls(**doc)

    @classmethod
    def from_json(cls, path, overrides: dict = None) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if overrides:
            doc.update(overrides)
        return cls.from_dict(doc)


def _ordered_map(fn, items, n_threads):
    if n_threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        return list(pool.map(fn, items))


def _artifact(config: RunConfig, name: str) -> str:
    return os.path.join(config.out_dir, name)


def _core_paths(config: RunConfig, core_id: str):
    image = os.path.join(config.images_dir, f"{core_id}.png")
    mask = os.path.join(config.masks_dir, f"{core_id}.png")
    if not os.path.isfile(image):
        raise DataError(f"missing core image {image}")
    if not os.path.isfile(mask):
        raise DataError(f"missing core mask {mask}")
    return image, mask


def _sorted_cases(cohort: Cohort):
    return sorted(cohort.cases, key=lambda case: case.case_id)


def stage_split(config: RunConfig, cohort: Cohort):
    split = stratified_split(cohort, config.fractions, config.seed)
    save_split(split, _artifact(config, "split.csv"))


def _patch_rows_for_core(args):
    config, case_id, core_id = args
    image_path, _ = _core_paths(config, core_id)
    pixels = mio.load_image(image_path)
    rows = []
    for (r, c), (ys, xs) in grid_slices(pixels.shape[0], pixels.shape[1], config.grid_n):
        tile = pixels[ys, xs]
        rows.append(
            {
                "case_id": case_id,
                "core_id": core_id,
                "row": r,
                "col": c,
                "background_fraction": round(background_fraction(tile), 6),
                "background": int(is_background(tile)),
            }
        )
    return rows


def stage_preprocess(config: RunConfig, cohort: Cohort):
    jobs = [
        (config, case.case_id, core_id)
        for case in _sorted_cases(cohort)
        for core_id in case.core_ids
    ]
    results = _ordered_map(_patch_rows_for_core, jobs, config.thread_count())
    rows = [row for core_rows in results for row in core_rows]
    frame = pd.DataFrame(rows, columns=["case_id", "core_id", "row", "col", "background_fraction", "background"])
    frame.to_csv(_artifact(config, "patches.csv"), index=False, lineterminator="\n")


def extract_patch_features(pixels, mask, registry: FeatureRegistry, expansion_px: int, ihc_panel):
    """One finished feature vector for a tissue patch."""
    stains = deconvolve_stains(pixels)
    channels = {
        "hematoxylin": stains.hematoxylin,
        "eosin": stains.eosin,
        "gray": gray_channel(pixels),
    }
    nuclei, _ = validate_label_mask(mask, repair=True)
    tables = extract_object_tables(nuclei, channels, expansion_px)
    nucleus_table = tables["nucleus"]
    if len(nucleus_table):
        centroids = nucleus_table[["center_y", "center_x"]].to_numpy(dtype=np.float64)
    else:
        centroids = np.zeros((0, 2))
    return assemble_features(
        registry,
        tables,
        centroids=centroids,
        region_area=float(mask.size),
        ihc_panel=ihc_panel,
    )


def _features_for_core(args):
    config, registry, case, core_id, keep = args
    image_path, mask_path = _core_paths(config, core_id)
    pixels = mio.load_image(image_path)
    mask = mio.load_mask(mask_path)
    if pixels.shape[:2] != mask.shape:
        raise DataError(f"{core_id}: image {pixels.shape[:2]} and mask {mask.shape} disagree")
    panel = dict(case.ihc_scores)
    out = []
    for (r, c), (ys, xs) in grid_slices(pixels.shape[0], pixels.shape[1], config.grid_n):
        if (r, c) not in keep:
            continue
        vector = extract_patch_features(
            pixels[ys, xs], mask[ys, xs], registry, config.expansion_px, panel
        )
        out.append((f"{core_id}:r{r}c{c}", case.case_id, core_id, f"r{r}c{c}", case.diagnosis, vector))
    return out


def stage_features(config: RunConfig, cohort: Cohort):
    registry = config.registry()
    patches = pd.read_csv(_artifact(config, "patches.csv"))
    tissue = patches[patches["background"] == 0]
    keep_by_core = {
        core_id: {(int(r), int(c)) for r, c in zip(group["row"], group["col"])}
        for core_id, group in tissue.groupby("core_id")
    }
    jobs = []
    for case in _sorted_cases(cohort):
        for core_id in case.core_ids:
            keep = keep_by_core.get(core_id, set())
            if keep:
                jobs.append((config, registry, case, core_id, keep))
    results = _ordered_map(_features_for_core, jobs, config.thread_count())
    row_ids, meta, vectors = [], [], []
    for core_rows in results:
        for row_id, case_id, core_id, patch, diagnosis, vector in core_rows:
            row_ids.append(row_id)
            meta.append((case_id, core_id, patch, diagnosis))
            vectors.append(vector)
    if not vectors:
        raise DataError("no tissue patches survived preprocessing")
    table = pd.DataFrame(
        np.vstack(vectors), index=pd.Index(row_ids, name="row_id"), columns=list(registry.columns)
    )
    for i, name in enumerate(META_COLUMNS):
        table.insert(i, name, [m[i] for m in meta])
    mio.save_feature_table(
        table, _artifact(config, "features.csv"), registry.hash(), registry.config
    )


def _load_features(config: RunConfig, registry: FeatureRegistry):
    table, meta = mio.load_feature_table(_artifact(config, "features.csv"), registry.hash())
    missing = [c for c in META_COLUMNS if c not in table.columns]
    if missing:
        raise DataError(f"feature table lacks columns {missing}")
    wrong = [c for c in registry.columns if c not in table.columns]
    if wrong:
        raise DataError(f"feature table lacks {len(wrong)} registry columns")
    return table


def _class_names(cohort: Cohort):
    present = sorted({case.diagnosis for case in cohort.cases}, key=LABEL_TO_CODE.get)
    return tuple(present)


def stage_train(config: RunConfig, cohort: Cohort):
    registry = config.registry()
    table = _load_features(config, registry)
    assignment = load_split(_artifact(config, "split.csv"))
    train_rows = table[[assignment.get(c) == "train" for c in table["case_id"]]]
    if not len(train_rows):
        raise DataError("no training rows in the feature table")
    class_names = _class_names(cohort)
    code = {name: i for i, name in enumerate(class_names)}
    X = train_rows[list(registry.columns)].to_numpy(dtype=np.float64)
    y = np.array([code[d] for d in train_rows["diagnosis"]], dtype=np.int64)
    categorical = tuple(
        i for i, col in enumerate(registry.columns) if col in registry.categorical_columns
    )
    params = config.gbdt_params()
    cv = cross_validate(
        X,
        y,
        case_ids=train_rows["case_id"].to_numpy(),
        core_ids=train_rows["core_id"].to_numpy(),
        params=params,
        n_folds=config.n_folds,
        feature_names=registry.columns,
        categorical_features=categorical,
        class_names=class_names,
        schema_hash=registry.hash(),
    )
    with open(_artifact(config, "cv.json"), "w", encoding="utf-8") as fh:
        json.dump(cv, fh, sort_keys=True, indent=1)
        fh.write("\n")
    model = train(
        X,
        y,
        params,
        feature_names=registry.columns,
        categorical_features=categorical,
        class_names=class_names,
        schema_hash=registry.hash(),
    )
    save_model(model, _artifact(config, "model.json"))


def _predict_split(config: RunConfig, split_name: str):
    registry = config.registry()
    table = _load_features(config, registry)
    assignment = load_split(_artifact(config, "split.csv"))
    model = load_model(_artifact(config, "model.json"))
    model.check_schema(registry.hash())
    rows = table[[assignment.get(c) == split_name for c in table["case_id"]]]
    if not len(rows):
        raise DataError(f"no rows in split {split_name!r}")
    class_names = model.class_names
    code = {name: i for i, name in enumerate(class_names)}
    case_ids, y_true, y_pred, probs = [], [], [], []
    for core_id in sorted(rows["core_id"].unique()):
        core_rows = rows[rows["core_id"] == core_id]
        X = core_rows[list(registry.columns)].to_numpy(dtype=np.float64)
        label_idx, core_probs = model.predict_core(X)
        diagnosis = core_rows["diagnosis"].iloc[0]
        if diagnosis not in code:
            raise DataError(f"{core_id}: diagnosis {diagnosis!r} unknown to the model")
        case_ids.append(str(core_rows["case_id"].iloc[0]))
        y_true.append(code[diagnosis])
        y_pred.append(int(label_idx))
        probs.append(core_probs)
    return PredictionSet(
        case_ids=tuple(case_ids),
        y_true=np.array(y_true, dtype=np.int64),
        y_pred=np.array(y_pred, dtype=np.int64),
        class_names=tuple(class_names),
        probabilities=np.array(probs),
    )


def stage_predict(config: RunConfig, cohort: Cohort):
    preds = _predict_split(config, "test")
    path = _artifact(config, "predictions.csv")
    mio.save_predictions(preds, path)
    registry = config.registry()
    with open(path + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(
            {"schema_hash": registry.hash(), "config": registry.config, "split": "test"},
            fh,
            sort_keys=True,
            indent=1,
        )
        fh.write("\n")


def stage_evaluate(config: RunConfig, cohort: Cohort):
    preds = mio.load_predictions(_artifact(config, "predictions.csv"))
    report = evaluate(preds, n_replicates=config.n_replicates, seed=config.seed)
    registry = config.registry()
    doc = {
        "registry_hash": registry.hash(),
        "feature_config": registry.config,
        "n_cores": preds.n_rows,
        "class_names": list(report.class_names),
        "metrics": {k: list(v) for k, v in report.metrics.items()},
        "per_class_f1": report.per_class_f1,
        "absent_classes": list(report.absent_classes),
        "confusion": report.confusion.tolist(),
    }
    with open(_artifact(config, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
    confusion = pd.DataFrame(
        report.confusion,
        index=pd.Index(report.class_names, name="true"),
        columns=list(report.class_names),
    )
    confusion.to_csv(_artifact(config, "confusion.csv"), lineterminator="\n")


_STAGE_FUNCS = {
    "split": stage_split,
    "preprocess": stage_preprocess,
    "features": stage_features,
    "train": stage_train,
    "predict": stage_predict,
    "evaluate": stage_evaluate,
}


def _run_stages(config: RunConfig, stages) -> str:
    config.validate()
    os.makedirs(config.out_dir, exist_ok=True)
    cohort = load_manifest(config.manifest)
    provenance_path = _artifact(config, "provenance.json")
    if os.path.isfile(provenance_path):
        with open(provenance_path, "r", encoding="utf-8") as fh:
            provenance = json.load(fh)
        provenance.setdefault("stage_seconds", {})
    else:
        provenance = {"stage_seconds": {}}
    registry = config.registry()
    provenance.update(
        {
            "config": config.to_dict(),
            "registry_hash": registry.hash(),
            "tool_version": __version__,
        }
    )
    for stage in stages:
        t0 = time.monotonic()
        try:
            _STAGE_FUNCS[stage](config, cohort)
        except MorphomlError as exc:
            exc.args = (f"stage {stage!r}: {exc}",)
            raise
        except Exception as exc:
            raise MorphomlError(f"stage {stage!r}: {exc}") from exc
        provenance["stage_seconds"][stage] = round(time.monotonic() - t0, 3)
        with open(provenance_path, "w", encoding="utf-8") as fh:
            json.dump(provenance, fh, sort_keys=True, indent=1)
            fh.write("\n")
    return config.out_dir


def run_pipeline(config: RunConfig, from_stage: str = "split") -> str:
    """Execute stages from from_stage onward; returns the run directory."""
    if from_stage not in STAGES:
        raise ValidationError(f"unknown stage {from_stage!r}; stages are {STAGES}")
    return _run_stages(config, STAGES[STAGES.index(from_stage):])


def run_stage(config: RunConfig, stage: str) -> str:
    """Execute exactly one stage; upstream artifacts must already exist."""
    if stage not in STAGES:
        raise ValidationError(f"unknown stage {stage!r}; stages are {STAGES}")
    return _run_stages(config, (stage,))


def roundtrip_model(path) -> GbdtModel:
    """Load a model and verify its serialization is a fixpoint."""
    from .gbdt.model import model_checksum

    model = load_model(path)
    doc = model.to_dict()
    doc["checksum"] = model_checksum(doc)
    with open(path, "r", encoding="utf-8") as fh:
        stored = json.load(fh)
    if stored != doc:
        raise DataError(f"{path}: reserializing the model does not reproduce the file")
    return model
