"""End-to-end flows: extract -> codebook -> encode -> classify -> segment -> eval.

Dense fields are extracted once per image (optionally cached on disk as
tensor files) and reused by whole-image encoding and by every region
proposal. All randomness flows from the config seed through named streams.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .container import ModelContainer, read_container_file, write_container_file
from .dsift import SiftConfig, dense_sift
from .encode import EncoderConfig, encode_bow, encode_fv, encode_vlad
from .errors import ConfigError, TrainingError
from .field import FeatureField, read_tensor_file, write_tensor_file
from .gmm import GmmModel, train_gmm
from .image import DEFAULT_AREA_CAP, ImagePlane, read_pnm, scale_ladder
from .manifest import ManifestRecord, split_records
from .net import NetSpec, TapPoint, read_weights_file, run_net
from .pca import PcaModel, train_pca
from .pyramid import extract_pyramid
from .rand import rng_stream
from .regions import LabelMap, Proposal, describe_region_fv, paste_proposals, superpixels
from .svm import SvmConfig, calibrate, predict_many, train_svm

log = logging.getLogger(__name__)

ENCODERS = ("fv", "vlad", "bow")
EXTRACTORS = ("sift", "net")


@dataclass(frozen=True)
class PipelineConfig:
    extractor: str = "sift"
    weights: str | None = None  # FBNK file for extractor="net"
    tap_index: int | None = None  # layer index; None = last convolution
    tap_after_relu: bool = False
    sift_step: int = 4
    s_min: float = -3.0
    s_max: float = 1.5
    s_step: float = 0.5
    area_cap: int = DEFAULT_AREA_CAP
    encoder: str = "fv"
    k: int | None = None  # None: 256 for sift, 64 for net
    pca_dim: int | None = None  # None: 80 for sift, off for net; 0 disables
    signed_square_root: bool = True
    l2_normalize: bool = True
    posterior_floor: float = 1e-6
    gmm_max_iter: int = 100
    gmm_tol: float = 1e-6
    sample_budget: int = 262144
    svm_c: float = 1.0
    svm_max_epochs: int = 300
    svm_tol: float = 1e-5
    seed: int = 0
    threads: int = 1
    superpixel_count: int = 64

    def __post_init__(self):
        if self.extractor not in EXTRACTORS:
            raise ConfigError(f"extractor must be one of {EXTRACTORS}")
        if self.encoder not in ENCODERS:
            raise ConfigError(f"encoder must be one of {ENCODERS}")
        if self.extractor == "net" and not self.weights:
            raise ConfigError("extractor=net requires a weights file")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    @property
    def codebook_size(self) -> int:
        if self.k is not None:
            return self.k
        return 256 if self.extractor == "sift" else 64

    @property
    def pca_out_dim(self) -> int | None:
        """Effective PCA width; None means PCA disabled."""
        if self.pca_dim is None:
            return 80 if self.extractor == "sift" else None
        return None if self.pca_dim == 0 else self.pca_dim

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            signed_square_root=self.signed_square_root,
            l2_normalize=self.l2_normalize,
            apply_pca=self.pca_out_dim is not None,
            posterior_floor=self.posterior_floor,
        )

    def extraction_hash(self) -> str:
        """Hash of the fields that determine extracted features."""
        keys = (
            "extractor",
            "weights",
            "tap_index",
            "tap_after_relu",
            "sift_step",
            "s_min",
            "s_max",
            "s_step",
            "area_cap",
        )
        blob = json.dumps({k: getattr(self, k) for k in keys}, sort_keys=True)
        if self.weights:
            blob += hashlib.sha256(Path(self.weights).read_bytes()).hexdigest()
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_sources(cls, config_file=None, **overrides) -> "PipelineConfig":
        """Build from an optional key=value file, then apply overrides."""
        values: dict = {}
        if config_file:
            values.update(parse_config_file(config_file))
        values.update({k: v for k, v in overrides.items() if v is not None})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)


def parse_config_file(path) -> dict:
    """key=value lines; `#` starts a comment. Types follow the config fields."""
    field_types = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}
    out: dict = {}
    for ln, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in field_types:
            raise ConfigError(f"{path}:{ln}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def _coerce(key: str, value: str):
    if value.lower() in ("none", ""):
        return None
    if key in ("tap_after_relu", "signed_square_root", "l2_normalize"):
        return value.lower() in ("1", "true", "yes", "on")
    if key in ("extractor", "encoder", "weights"):
        return value
    if key in ("s_min", "s_max", "s_step", "posterior_floor", "gmm_tol", "svm_c", "svm_tol"):
        return float(value)
    return int(value)


# --- extraction -----------------------------------------------------------------

def build_extractor(config: PipelineConfig):
    """(per-image extractor callable, descriptive name)."""
    if config.extractor == "sift":
        sift_cfg = SiftConfig(step=config.sift_step)
        return (lambda img: dense_sift(img, sift_cfg)), "dsift"
    net = read_weights_file(config.weights)
    tap_index = config.tap_index
    if tap_index is None:
        tap_index = net.conv_indices()[-1]
    tap = TapPoint(layer_index=tap_index, after_relu=config.tap_after_relu)
    return (lambda img: run_net(img, net, tap)), f"net:{tap_index}"


def image_fields(
    img: ImagePlane, config: PipelineConfig, extractor=None
) -> list[FeatureField]:
    if extractor is None:
        extractor, _ = build_extractor(config)
    ladder = scale_ladder(
        img.width, img.height, config.s_min, config.s_max, config.s_step, config.area_cap
    )
    return extract_pyramid(img, extractor, ladder)


class FeatureCache:
    """Tensor files on disk, one per (image, scale), keyed by extraction hash."""

    def __init__(self, root, config: PipelineConfig):
        self.root = Path(root)
        self.hash = config.extraction_hash()

    def meta_path(self) -> Path:
        return self.root / "extract.meta"

    def check_meta(self, force: bool = False) -> None:
        """Refuse to mix features extracted under a different configuration."""
        self.root.mkdir(parents=True, exist_ok=True)
        meta = self.meta_path()
        if meta.exists():
            stored = meta.read_text().strip().split("=", 1)[-1]
            if stored != self.hash and not force:
                raise ConfigError(
                    f"cache {self.root} was extracted with config {stored}, "
                    f"current is {self.hash}; pass force to overwrite"
                )
        meta.write_text(f"extraction_hash={self.hash}\n")

    def _stem(self, image_path) -> str:
        digest = hashlib.sha1(str(Path(image_path).resolve()).encode()).hexdigest()[:20]
        return f"{Path(image_path).stem}_{digest}"

    def paths_for(self, image_path) -> list[Path]:
        return sorted(self.root.glob(self._stem(image_path) + "_s*.ffld"))

    def load(self, image_path) -> list[FeatureField] | None:
        paths = self.paths_for(image_path)
        if not paths:
            return None
        return [read_tensor_file(p) for p in paths]

    def store(self, image_path, fields: list[FeatureField]) -> list[Path]:
        out = []
        for i, f in enumerate(fields):
            p = self.root / f"{self._stem(image_path)}_s{i:02d}.ffld"
            write_tensor_file(p, f)
            out.append(p)
        return out


def fields_for_record(
    record: ManifestRecord, config: PipelineConfig, extractor, cache: FeatureCache | None
) -> list[FeatureField]:
    if cache is not None:
        cached = cache.load(record.image)
        if cached is not None:
            return cached
    fields = image_fields(read_pnm(record.image), config, extractor)
    if cache is not None:
        cache.store(record.image, fields)
    return fields


def _map_records(records, fn, threads: int):
    """Order-preserving map over records, optionally threaded."""
    if threads <= 1:
        return [fn(r) for r in records]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, records))


# --- training ---------------------------------------------------------------------

def collect_codebook_samples(
    records: list[ManifestRecord],
    config: PipelineConfig,
    extractor,
    cache: FeatureCache | None = None,
) -> np.ndarray:
    """Descriptors subsampled uniformly across training images, up to the budget."""
    budget = config.sample_budget
    per_image = max(1, int(np.ceil(1.5 * budget / max(1, len(records)))))

    def sample_one(args):
        idx, record = args
        fields = fields_for_record(record, config, extractor, cache)
        if not fields:
            return np.zeros((0, 0), dtype=np.float32)
        x = np.concatenate([f.descriptors() for f in fields], axis=0)
        if x.shape[0] > per_image:
            rng = rng_stream(config.seed, f"codebook-sample/{idx}")
            x = x[rng.choice(x.shape[0], size=per_image, replace=False)]
        return x

    chunks = _map_records(list(enumerate(records)), sample_one, config.threads)
    chunks = [c for c in chunks if c.size]
    if not chunks:
        raise TrainingError("no descriptors could be extracted from the training images")
    samples = np.concatenate(chunks, axis=0)
    if samples.shape[0] > budget:
        rng = rng_stream(config.seed, "codebook-sample/global")
        samples = samples[rng.choice(samples.shape[0], size=budget, replace=False)]
    return samples.astype(np.float64)


@dataclass
class Codebook:
    gmm: GmmModel | None = None
    pca: PcaModel | None = None
    kmeans_centers: np.ndarray | None = None
    em_trace: np.ndarray | None = None


def train_codebook(samples: np.ndarray, config: PipelineConfig) -> Codebook:
    """PCA (optional) plus the codebook the configured encoder needs."""
    book = Codebook()
    if config.pca_out_dim is not None:
        book.pca = train_pca(samples, config.pca_out_dim)
        samples = (samples - book.pca.mean) @ book.pca.components.T
    if config.encoder == "fv":
        fit = train_gmm(
            samples,
            config.codebook_size,
            max_iter=config.gmm_max_iter,
            tol=config.gmm_tol,
            rng=rng_stream(config.seed, "gmm-init"),
        )
        book.gmm = fit.model
        book.em_trace = fit.log_likelihoods
    else:
        from .gmm import kmeans

        # the codebook iteration budget is shared between both learners
        centers, _ = kmeans(
            samples,
            config.codebook_size,
            rng_stream(config.seed, "kmeans-init"),
            max_iter=max(10, config.gmm_max_iter),
        )
        book.kmeans_centers = centers
    return book


def encode_image(
    fields: list[FeatureField],
    model: ModelContainer,
    config: PipelineConfig,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    cfg = config.encoder_config()
    if config.encoder == "fv":
        enc = encode_fv(fields, model.gmm, cfg, mask=mask, pca=model.pca)
    elif config.encoder == "vlad":
        enc = encode_vlad(fields, model.kmeans_centers, cfg, mask=mask, pca=model.pca)
    else:
        enc = encode_bow(fields, model.kmeans_centers, cfg, mask=mask, pca=model.pca)
    return enc.values.astype(np.float64)


def train_model(
    records: list[ManifestRecord],
    config: PipelineConfig,
    cache: FeatureCache | None = None,
    codebook: Codebook | None = None,
) -> ModelContainer:
    """Full training pass over the manifest's train split."""
    train = split_records(records, "train")
    if not train:
        raise TrainingError("empty split: no train records in the manifest")
    extractor, _ = build_extractor(config)
    if codebook is None:
        samples = collect_codebook_samples(train, config, extractor, cache)
        codebook = train_codebook(samples, config)
    model = ModelContainer(
        gmm=codebook.gmm,
        pca=codebook.pca,
        kmeans_centers=codebook.kmeans_centers,
        metadata={"encoder": config.encoder, "config": config.to_dict()},
    )

    def encode_record(record):
        fields = fields_for_record(record, config, extractor, cache)
        return encode_image(fields, model, config)

    x = np.vstack(_map_records(train, encode_record, config.threads))
    labels = [set(r.labels) for r in train]
    bank = train_svm(
        x,
        labels,
        SvmConfig(
            c=config.svm_c,
            max_epochs=config.svm_max_epochs,
            tol=config.svm_tol,
            seed=config.seed,
        ),
    )
    bank = calibrate(bank, x, labels)
    model.svm = bank
    model.metadata["classes"] = list(bank.classes)
    if codebook.em_trace is not None:
        model.metadata["em_log_likelihoods"] = [float(v) for v in codebook.em_trace]
        model.metadata["svm_objectives"] = [float(v) for v in bank.objectives]
    return model


def predict_records(
    records: list[ManifestRecord],
    model: ModelContainer,
    config: PipelineConfig,
    cache: FeatureCache | None = None,
) -> tuple[np.ndarray, list[str]]:
    """(scores (N, C), argmax labels) for each record, in manifest order."""
    if model.svm is None:
        raise TrainingError("model has no trained classifiers")
    extractor, _ = build_extractor(config)

    def encode_record(record):
        fields = fields_for_record(record, config, extractor, cache)
        return encode_image(fields, model, config)

    x = np.vstack(_map_records(records, encode_record, config.threads))
    return predict_many(model.svm, x)


# --- segmentation ---------------------------------------------------------------------

def segment_image(
    img: ImagePlane,
    model: ModelContainer,
    config: PipelineConfig,
    proposals: list[Proposal] | None = None,
) -> tuple[LabelMap, list[dict]]:
    """Classify proposals (generated superpixels if none given) and paste them.

    Returns the fused label map (class ids are 1-based indices into the
    model's class list) and a per-proposal score table.
    """
    if model.svm is None:
        raise TrainingError("model has no trained classifiers")
    if proposals is None:
        proposals = superpixels(img, config.superpixel_count)
    if not proposals:
        raise TrainingError("empty proposal set")
    extractor, _ = build_extractor(config)
    fields = image_fields(img, config, extractor)
    cfg = config.encoder_config()
    table = []
    for i, prop in enumerate(proposals):
        if config.encoder == "fv":
            enc = describe_region_fv(
                fields, prop, model.gmm, cfg, pca=model.pca, dilate_fallback=True
            )
            vec = enc.values.astype(np.float64)
        else:
            vec = encode_image(fields, model, config, mask=prop.mask)
        scores = model.svm.weights @ vec + model.svm.biases
        best = int(np.argmax(scores))
        prop.score = float(scores[best])
        prop.label = best + 1
        table.append(
            {
                "proposal": i,
                "area": prop.area,
                "label": model.svm.classes[best],
                "score": prop.score,
            }
        )
    label_map = paste_proposals(proposals, img.width, img.height)
    return label_map, table


# --- filter-bank layer sweep ------------------------------------------------------------

def run_layer_sweep(
    records: list[ManifestRecord],
    net: NetSpec,
    config: PipelineConfig,
    weights_path: str,
) -> list[tuple[str, float]]:
    """Train and evaluate one model per convolution tap; returns
    (layer name, class-normalized test accuracy) pairs, shallow to deep."""
    from .evaluate import class_normalized_accuracy

    results = []
    test = split_records(records, "test")
    if not test:
        raise TrainingError("layer sweep needs a test split")
    for ordinal, idx in enumerate(net.conv_indices(), start=1):
        cfg = dataclasses.replace(config, extractor="net", weights=weights_path, tap_index=idx)
        model = train_model(records, cfg)
        _, labels = predict_records(test, model, cfg)
        acc = class_normalized_accuracy(labels, [r.labels[0] for r in test]).overall
        results.append((f"conv{ordinal}", acc))
    return results


# --- persistence helpers -----------------------------------------------------------------

def save_model(path, model: ModelContainer) -> None:
    write_container_file(path, model)


def load_model(path) -> tuple[ModelContainer, PipelineConfig]:
    model = read_container_file(path)
    cfg_dict = model.metadata.get("config", {})
    config = PipelineConfig(**cfg_dict) if cfg_dict else PipelineConfig()
    return model, config
