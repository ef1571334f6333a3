"""Measurement harness: dataset ingestion, resizing, per-(method, epsilon)
accuracy and aesthetics, resumable epsilon sweeps, and the aesthetics
sensitivity probe.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .config import AdapterSet, DatasetSpec, RunConfig, SyntheticSpec, dump_config
from .core import CloakError, ConfigError, DataError, LabeledImage, check_epsilon, check_image
from .engines import Adapters, Method, MethodConfig, apply_method, check_budget, fgsm_vanilla
from .imaging import IMAGE_SUFFIXES, load_image, save_png
from .models import load_adapter, serialized, top1_predict

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "method",
    "epsilon",
    "top1_accuracy",
    "mean_aesthetics",
    "n_images",
    "n_failures",
    "attack_model",
    "aesthetics_model",
)


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------


def load_class_map(path):
    """One class per line, index = line number. ``/a/airfield 0`` style lines
    (Places365 category files) keep only the name, without the leading slash.
    """
    names = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            names.append(line.split()[0].lstrip("/"))
    if len(set(names)) != len(names):
        raise DataError(f"class map {path} contains duplicate names")
    return names


def _resolve_label(raw, class_map, where):
    raw = str(raw).strip()
    if raw.lstrip("-").isdigit():
        label = int(raw)
        limit = len(class_map) if class_map is not None else None
        if label < 0 or (limit is not None and label >= limit):
            raise DataError(f"{where}: label {label} outside [0, {limit})")
        return label
    if class_map is None:
        raise DataError(f"{where}: class name {raw!r} needs a class map")
    try:
        return class_map.index(raw)
    except ValueError:
        shown = ", ".join(class_map[:20]) + (" ..." if len(class_map) > 20 else "")
        raise DataError(f"{where}: unknown class {raw!r}; valid names: {shown}") from None


def _read_items(entries, skipped):
    items = []
    for path, label in entries:
        try:
            image = load_image(path)
        except DataError as exc:
            log.warning("skipping %s", exc)
            skipped.append((str(path), str(exc)))
            continue
        items.append(LabeledImage(image, label, Path(path).stem))
    return items


def ingest_dataset(path, class_map=None, skipped=None):
    """Load ``<class_name>/<image>`` trees or a ``path,label`` CSV manifest.

    ``class_map`` is a list of names or a class-map file. Unreadable images are
    skipped and appended to ``skipped`` as ``(path, reason)``. Items come back
    sorted by identifier (the file stem).
    """
    path = Path(path)
    skipped = [] if skipped is None else skipped
    if isinstance(class_map, (str, os.PathLike)):
        class_map = load_class_map(class_map)
    if path.is_file():
        entries = []
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), 1):
                if not row or (lineno == 1 and [c.strip().lower() for c in row[:2]] == ["path", "label"]):
                    continue
                if len(row) < 2:
                    raise DataError(f"{path}:{lineno}: expected 'path,label'")
                entries.append((path.parent / row[0].strip(), _resolve_label(row[1], class_map, f"{path}:{lineno}")))
    elif path.is_dir():
        files = sorted(p for p in path.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        files = [p for p in files if p.parent != path]
        if class_map is None:
            class_map = sorted({p.parent.relative_to(path).as_posix() for p in files})
        entries = [(p, _resolve_label(p.parent.relative_to(path).as_posix(), class_map, str(p))) for p in files]
    else:
        raise DataError(f"dataset path does not exist: {path}")
    if not entries:
        raise DataError(f"no images found under {path}")
    items = _read_items(entries, skipped)
    if skipped:
        log.warning("skipped %d unreadable file(s)", len(skipped))
    if not items:
        raise DataError(f"no readable images under {path}")
    seen, dupes = set(), set()
    for it in items:
        (dupes if it.identifier in seen else seen).add(it.identifier)
    if dupes:
        raise DataError(f"duplicate identifiers: {', '.join(sorted(dupes))}")
    return sorted(items, key=lambda it: it.identifier)


def preprocess(image, side=256):
    """Bilinear resize (half-pixel centres, no antialias, no crop) to ``side`` x ``side``."""
    image = check_image(image)
    if side < 3:
        raise ValueError(f"side must be >= 3, got {side}")
    if image.shape[:2] == (side, side):
        return image.copy()
    x = torch.as_tensor(np.ascontiguousarray(image.transpose(2, 0, 1)))[None]
    y = F.interpolate(x, size=(side, side), mode="bilinear", align_corners=False, antialias=False)
    return np.clip(y[0].numpy().transpose(1, 2, 0), 0.0, 1.0)


def prepare_items(items, side):
    if side is None:
        return list(items)
    return [LabeledImage(preprocess(it.image, side), it.label, it.identifier) for it in items]


def filter_correctly_classified(items, model, side=None):
    """Keep items the attack model already labels correctly."""
    return [it for it in items if top1_predict(model, preprocess(it.image, side) if side else it.image) == it.label]


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass
class ImageOutcome:
    identifier: str
    original_class: int
    predicted_class_after: int
    aesthetics_after: float | None
    linf_delta: float


@dataclass
class EvaluationRecord:
    method: str
    epsilon: float
    top1_accuracy: float
    mean_aesthetics: float | None
    n_images: int
    per_image: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    attack_model: str = ""
    aesthetics_model: str = ""

    def row(self):
        return {k: getattr(self, k) if k != "n_failures" else len(self.failures) for k in CSV_COLUMNS}

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, data):
        data = dict(data)
        data["per_image"] = [ImageOutcome(**row) for row in data["per_image"]]
        data["failures"] = [tuple(f) for f in data["failures"]]
        return cls(**data)


def summarize(method, eps, outcomes, failures, attack_name="", aesthetics_name=""):
    n = len(outcomes)
    hits = sum(o.predicted_class_after == o.original_class for o in outcomes)
    scores = [o.aesthetics_after for o in outcomes if o.aesthetics_after is not None]
    return EvaluationRecord(
        method=str(method),
        epsilon=float(eps),
        top1_accuracy=hits / n if n else float("nan"),
        mean_aesthetics=float(np.mean(scores)) if scores else None,
        n_images=n,
        per_image=outcomes,
        failures=failures,
        attack_model=attack_name,
        aesthetics_model=aesthetics_name,
    )


def _finite_or_none(obj):
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite_or_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite_or_none(v) for v in obj]
    return obj


def dumps_json(obj, **kw):
    """Strict JSON: NaN and infinities are written as null."""
    return json.dumps(_finite_or_none(obj), allow_nan=False, **kw)


def write_sidecar(result, item, path):
    mask = result.mask_used
    info = {
        "identifier": item.identifier,
        "label": item.label,
        "method": result.method.value,
        "epsilon": result.epsilon,
        "linf_delta": result.linf_delta,
        "mask": None
        if mask is None
        else {"mean": float(mask.mean()), "nonzero_fraction": float((mask > 0).mean()), "min": float(mask.min()), "max": float(mask.max())},
    }
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(dumps_json(info, indent=2))
    os.replace(tmp, path)


def image_dir(root, method, eps):
    return Path(root) / str(method) / f"eps_{eps:g}"


def evaluate_method(items, method, adapters, eps, config=None, workers=1, save_dir=None):
    """Perturb every item with ``method`` and measure the attack model on the result.

    Per-image failures are recorded on the record rather than dropped.
    """
    if not items:
        raise DataError("evaluate_method needs at least one item")
    method = Method.parse(method)
    eps = check_epsilon(eps)
    config = config or MethodConfig()
    adapters = Adapters(*(serialized(a) for a in (adapters.attack, adapters.saliency, adapters.aesthetics)))

    def one(item):
        try:
            res = apply_method(method, item, adapters, config, eps)
            check_budget(res, item.image)
            pred = top1_predict(adapters.attack, res.modified)
            score = adapters.aesthetics.score(res.modified) if adapters.aesthetics is not None else None
            if save_dir is not None:
                out = Path(save_dir) / f"{item.identifier}.png"
                save_png(res.modified, out)
                write_sidecar(res, item, out.with_suffix(".json"))
        except (CloakError, ValueError) as exc:
            return None, (item.identifier, f"{type(exc).__name__}: {exc}")
        return ImageOutcome(item.identifier, item.label, pred, score, res.linf_delta), None

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, items))
    else:
        results = [one(it) for it in items]
    outcomes = [o for o, _ in results if o is not None]
    failures = [f for _, f in results if f is not None]
    aes_name = adapters.aesthetics.name if adapters.aesthetics is not None else ""
    return summarize(method.value, eps, outcomes, failures, adapters.attack.name, aes_name)


def evaluate_directory(path, adapters, class_map=None):
    """Score already-perturbed PNGs. Labels come from sidecar JSON when present,
    otherwise from the ``<class>/<image>`` layout.
    """
    path = Path(path)
    sidecars = sorted(path.rglob("*.json"))
    items, meta = [], {}
    if sidecars:
        for sc in sidecars:
            info = json.loads(sc.read_text())
            png = sc.with_suffix(".png")
            if "label" not in info or not png.exists():
                continue
            items.append(LabeledImage(load_image(png), info["label"], info.get("identifier", png.stem)))
            meta = info
        if not items:
            raise DataError(f"no labelled images under {path}")
        items.sort(key=lambda it: it.identifier)
    else:
        items = ingest_dataset(path, class_map)
    outcomes = []
    for it in items:
        score = adapters.aesthetics.score(it.image) if adapters.aesthetics is not None else None
        outcomes.append(ImageOutcome(it.identifier, it.label, top1_predict(adapters.attack, it.image), score, float("nan")))
    aes_name = adapters.aesthetics.name if adapters.aesthetics is not None else ""
    return summarize(meta.get("method", "external"), meta.get("epsilon", float("nan")), outcomes, [], adapters.attack.name, aes_name)


def nima_sensitivity_probe(items, attack_model, aesthetics_model, eps=0.15, n=100):
    """Mean aesthetics score of the first ``n`` items (by identifier) before and
    after a vanilla FGSM step of size ``eps``.
    """
    if len(items) < n:
        raise DataError(f"probe needs at least {n} items, got {len(items)}")
    subset = sorted(items, key=lambda it: it.identifier)[:n]
    before = [aesthetics_model.score(it.image) for it in subset]
    after = [aesthetics_model.score(fgsm_vanilla(it, attack_model, eps).modified) for it in subset]
    return float(np.mean(before)), float(np.mean(after))


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepSpec:
    methods: list
    epsilons: list
    dataset: DatasetSpec = field(default_factory=lambda: DatasetSpec(synthetic=SyntheticSpec()))
    adapters: AdapterSet = field(default_factory=AdapterSet)
    output_dir: str = "out"
    side: int | None = 256
    filter_correct: bool = True
    method_config: MethodConfig = field(default_factory=MethodConfig)
    workers: int = 1
    seed: int = 0
    save_images: bool = True

    def __post_init__(self):
        self.methods = [Method.parse(m) for m in self.methods]
        if not self.methods:
            raise ConfigError("sweep needs at least one method")
        self.epsilons = [check_epsilon(e) for e in self.epsilons]
        if not self.epsilons or self.epsilons != sorted(self.epsilons):
            raise ConfigError(f"epsilons must be a non-empty ascending list, got {self.epsilons}")

    @classmethod
    def from_run_config(cls, cfg: RunConfig):
        return cls(
            cfg.methods,
            cfg.epsilons,
            cfg.dataset,
            cfg.adapters,
            cfg.output_dir,
            cfg.side,
            cfg.filter_correct,
            cfg.method_config,
            cfg.workers,
            cfg.seed,
            cfg.save_images,
        )


@dataclass
class SweepReport:
    records: list
    baseline_aesthetics: float | None
    n_items: int
    n_filtered_out: int
    computed_cells: int
    output_dir: Path


def load_adapters(adapter_set, seed=0):
    def one(role):
        spec = getattr(adapter_set, role)
        if spec is None:
            return None
        return load_adapter(role, spec.name, spec.weights, spec.device, seed=seed, **spec.options)

    return Adapters(one("attack"), one("saliency"), one("aesthetics"))


def load_items(dataset, seed=0):
    if dataset.synthetic is not None:
        from .synthetic import make_synthetic_set

        syn = dataset.synthetic
        return make_synthetic_set(syn.n_per_class, syn.size, seed if syn.seed is None else syn.seed)
    dataset.validate_paths()
    return ingest_dataset(dataset.path or dataset.manifest, dataset.class_map)


def _required_roles(method):
    if method is Method.VANILLA_FGSM:
        return ("attack",)
    if method is Method.COUPLED_OPTIMIZATION:
        return ("attack", "aesthetics")
    return ("attack", "saliency")


def _fingerprint(items, adapters, spec):
    h = hashlib.sha256()
    for it in items:
        h.update(f"{it.identifier}\0{it.label}\0".encode())
        h.update(np.ascontiguousarray(it.image).tobytes())
    h.update(
        json.dumps(
            {
                "adapters": asdict(spec.adapters),
                "names": [getattr(a, "name", None) for a in (adapters.attack, adapters.saliency, adapters.aesthetics)],
                "side": spec.side,
                "filter_correct": spec.filter_correct,
                "method_config": asdict(spec.method_config),
                "seed": spec.seed,
            },
            sort_keys=True,
            default=str,
        ).encode()
    )
    return h.hexdigest()


def cell_key(fingerprint, method, eps):
    return hashlib.sha256(f"{fingerprint}|{Method.parse(method).value}|{eps!r}".encode()).hexdigest()[:20]


def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_csv(records, path):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for rec in records:
        writer.writerow(rec.row())
    _atomic_write(path, buf.getvalue())


def plot_sweep(records, out_dir):
    """One accuracy-vs-epsilon PNG per method plus an overlay of all methods."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    by_method = {}
    for rec in records:
        by_method.setdefault(rec.method, []).append((rec.epsilon, rec.top1_accuracy))
    paths = []
    overlay, ax_all = plt.subplots(figsize=(5, 3.5))
    for method, points in by_method.items():
        eps, acc = zip(*sorted(points))
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for a in (ax, ax_all):
            a.plot(eps, acc, marker="o", label=method)
        ax.set(xlabel="epsilon", ylabel="top-1 accuracy", title=method, ylim=(-0.02, 1.02))
        fig.tight_layout()
        path = Path(out_dir) / f"sweep_{method}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)
    ax_all.set(xlabel="epsilon", ylabel="top-1 accuracy", ylim=(-0.02, 1.02))
    ax_all.legend(fontsize=7)
    overlay.tight_layout()
    overlay.savefig(Path(out_dir) / "sweep_all.png", dpi=100)
    plt.close(overlay)
    return paths


def run_sweep(spec, *, adapters=None, items=None):
    """Evaluate every (method, epsilon) cell and write report.csv, report.json and plots.

    Finished cells are cached under ``<output_dir>/cells`` keyed by a hash of
    the data, adapters and parameters, so an interrupted sweep resumes where it
    stopped. ``adapters`` and ``items`` override what ``spec`` would load.
    """
    if adapters is None:
        adapters = load_adapters(spec.adapters, spec.seed)
    for method in spec.methods:
        for role in _required_roles(method):
            if getattr(adapters, role) is None:
                raise ConfigError(f"method {method.value!r} needs a {role} adapter")
    if items is None:
        items = load_items(spec.dataset, spec.seed)
    items = sorted(prepare_items(items, spec.side), key=lambda it: it.identifier)
    n_total = len(items)
    if spec.filter_correct:
        items = filter_correctly_classified(items, adapters.attack)
    if not items:
        raise DataError("no items left to evaluate after filtering")

    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    fingerprint = _fingerprint(items, adapters, spec)
    records, computed = [], 0
    for method in spec.methods:
        for eps in spec.epsilons:
            cell = out / "cells" / f"{cell_key(fingerprint, method, eps)}.json"
            if cell.exists():
                records.append(EvaluationRecord.from_json(json.loads(cell.read_text())))
                continue
            save_dir = image_dir(out, method.value, eps) if spec.save_images else None
            rec = evaluate_method(items, method, adapters, eps, spec.method_config, spec.workers, save_dir)
            _atomic_write(cell, json.dumps(rec.to_json()))
            records.append(rec)
            computed += 1
            log.info("%s eps=%g acc=%.4f", method.value, eps, rec.top1_accuracy)

    baseline = None
    if adapters.aesthetics is not None:
        baseline = float(np.mean([adapters.aesthetics.score(it.image) for it in items]))
    write_csv(records, out / "report.csv")
    report = {
        "attack_model": adapters.attack.name,
        "saliency_model": getattr(adapters.saliency, "name", None),
        "aesthetics_model": getattr(adapters.aesthetics, "name", None),
        "n_items": n_total,
        "n_evaluated": len(items),
        "baseline_mean_aesthetics": baseline,
        "records": [r.to_json() for r in records],
    }
    _atomic_write(out / "report.json", dumps_json(report, indent=2))
    plot_sweep(records, out)
    return SweepReport(records, baseline, len(items), n_total - len(items), computed, out)


def run_from_config(cfg: RunConfig, **kwargs):
    spec = SweepSpec.from_run_config(cfg)
    dump_config(cfg, Path(spec.output_dir) / "effective_config.yaml")
    return run_sweep(spec, **kwargs)
