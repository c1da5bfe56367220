"""Region description and segmentation: mask pooling, warped-crop descriptors,
a SLIC-style superpixelizer, proposal ingestion, and score-ordered pasting.

Dense descriptor fields are computed once per image; every proposal is then
described by pooling the cells whose centers fall inside its mask, so adding
proposals never re-runs the feature extractor.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .encode import EncodedDescriptor, EncoderConfig, encode_fv, l2_normalized
from .errors import DegenerateImageError, DimensionError, EmptyRegionError, FormatError
from .field import FeatureField
from .gmm import GmmModel
from .image import ImagePlane
from .net import FullyConnected, NetSpec, run_full
from .pca import PcaModel

log = logging.getLogger(__name__)


@dataclass
class Proposal:
    """Candidate region: boolean mask plus classification results once scored."""

    mask: np.ndarray
    score: float | None = None
    label: int | None = None

    def __post_init__(self):
        m = np.ascontiguousarray(self.mask, dtype=bool)
        if m.ndim != 2:
            raise ValueError(f"proposal mask must be (H, W), got {m.shape}")
        if not m.any():
            raise ValueError("proposal mask is empty")
        self.mask = m
        self.area = int(m.sum())


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel class indices; 0 means unassigned."""

    labels: np.ndarray

    def __post_init__(self):
        lab = np.ascontiguousarray(self.labels, dtype=np.int32)
        if lab.ndim != 2:
            raise ValueError(f"expected (H, W) labels, got {lab.shape}")
        object.__setattr__(self, "labels", lab)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True)
class WarpSpec:
    """Square warp target for bounding-box descriptors."""

    target_side: int = 64
    border_fraction: float = 0.10

    def __post_init__(self):
        if self.target_side < 8:
            raise ValueError("warp target must be at least 8 px")
        if self.border_fraction < 0:
            raise ValueError("border fraction must be non-negative")


# --- mask pooling -------------------------------------------------------------

def describe_region_fv(
    fields: list[FeatureField],
    proposal: Proposal | np.ndarray,
    gmm: GmmModel,
    cfg: EncoderConfig = EncoderConfig(),
    pca: PcaModel | None = None,
    dilate_fallback: bool = False,
) -> EncodedDescriptor:
    """Fisher-vector description of a region, reusing precomputed fields.

    With `dilate_fallback`, a mask too small to catch any descriptor center is
    replaced by its bounding box, grown until at least one cell is captured
    (tiny segments are a normal occurrence, not an error, for callers that
    must classify everything).
    """
    mask = proposal.mask if isinstance(proposal, Proposal) else np.asarray(proposal, bool)
    try:
        return encode_fv(fields, gmm, cfg, mask=mask, pca=pca)
    except EmptyRegionError:
        if not dilate_fallback:
            raise
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    y0, y1, x0, x1 = ys.min(), ys.max() + 1, xs.min(), xs.max() + 1
    margin = 1
    while True:
        box = np.zeros_like(mask)
        by0, by1 = max(0, y0 - margin), min(h, y1 + margin)
        bx0, bx1 = max(0, x0 - margin), min(w, x1 + margin)
        box[by0:by1, bx0:bx1] = True
        try:
            return encode_fv(fields, gmm, cfg, mask=box, pca=pca)
        except EmptyRegionError:
            if by0 == 0 and bx0 == 0 and by1 == h and bx1 == w:
                return encode_fv(fields, gmm, cfg, mask=None, pca=pca)
            margin *= 2


# --- warped-crop description ----------------------------------------------------

def mask_bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    """(x0, y0, x1, y1), half-open, of the set pixels."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise EmptyRegionError("cannot take the bounding box of an empty mask")
    return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1


def expand_bbox(
    bbox: tuple[int, int, int, int], border_fraction: float, width: int, height: int
) -> tuple[float, float, float, float]:
    """Grow each side by border_fraction of the box extent, clamped to the image."""
    x0, y0, x1, y1 = bbox
    bw = (x1 - x0) * border_fraction
    bh = (y1 - y0) * border_fraction
    return (
        max(0.0, x0 - bw),
        max(0.0, y0 - bh),
        min(float(width), x1 + bw),
        min(float(height), y1 + bh),
    )


def warp_crop(img: ImagePlane, box: tuple[float, float, float, float], side: int) -> ImagePlane:
    """Bilinearly resample the continuous box to a side x side square."""
    x0, y0, x1, y1 = box
    if not (x1 > x0 and y1 > y0):
        raise DegenerateImageError(f"degenerate crop box {box}")

    def coords(lo: float, hi: float, n_in: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        src = lo + (np.arange(side) + 0.5) * ((hi - lo) / side) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        i0 = np.floor(src).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, (src - i0).astype(np.float32)

    y0i, y1i, fy = coords(y0, y1, img.height)
    x0i, x1i, fx = coords(x0, x1, img.width)
    src = img.data
    top = src[:, y0i][:, :, x0i] + fx[None, None, :] * (
        src[:, y0i][:, :, x1i] - src[:, y0i][:, :, x0i]
    )
    bot = src[:, y1i][:, :, x0i] + fx[None, None, :] * (
        src[:, y1i][:, :, x1i] - src[:, y1i][:, :, x0i]
    )
    out = top + fy[None, :, None] * (bot - top)
    return ImagePlane(out.astype(np.float32))


def describe_region_fc(
    img: ImagePlane,
    proposal: Proposal | np.ndarray,
    net: NetSpec,
    warp: WarpSpec = WarpSpec(),
) -> EncodedDescriptor:
    """Warped bounding-box descriptor: crop the box (plus border), warp it to a
    fixed square, run the network through its fully-connected head, and
    L2-normalize the output."""
    if not any(isinstance(l, FullyConnected) for l in net.layers):
        raise DimensionError("warped-crop description needs a fully-connected head")
    mask = proposal.mask if isinstance(proposal, Proposal) else np.asarray(proposal, bool)
    if mask.shape != (img.height, img.width):
        raise DimensionError("mask resolution must match the image")
    box = expand_bbox(mask_bbox(mask), warp.border_fraction, img.width, img.height)
    warped = warp_crop(img, box, warp.target_side)
    out = run_full(warped, net).astype(np.float64)
    values, zero = l2_normalized(out)
    return EncodedDescriptor(
        values=values.astype(np.float32),
        encoding="fc",
        k=1,
        dim=values.size,
        l2_normalized=True,
        is_zero=zero,
    )


# --- superpixels ----------------------------------------------------------------

def superpixels(
    img: ImagePlane,
    target_count: int,
    compactness: float = 0.2,
    iters: int = 10,
) -> list[Proposal]:
    """SLIC-style partition: local k-means over (color, position) from a grid
    start, followed by connectivity enforcement. Returns disjoint connected
    regions covering every pixel; their number approximates target_count."""
    if target_count < 1:
        raise ValueError("target_count must be >= 1")
    h, w = img.height, img.width
    if target_count == 1 or h * w <= target_count:
        return [Proposal(mask=np.ones((h, w), dtype=bool))]

    nx = max(1, round(math.sqrt(target_count * w / h)))
    ny = max(1, round(target_count / nx))
    k = nx * ny
    spacing = math.sqrt(w * h / k)
    color = np.moveaxis(img.data, 0, 2).astype(np.float64)  # (H, W, C)

    cx = (np.arange(nx) + 0.5) * (w / nx)
    cy = (np.arange(ny) + 0.5) * (h / ny)
    centers_xy = np.stack(
        [np.repeat(cy, nx), np.tile(cx, ny)], axis=1
    )  # (K, 2) as (y, x)
    iy = np.clip(centers_xy[:, 0].astype(int), 0, h - 1)
    ix = np.clip(centers_xy[:, 1].astype(int), 0, w - 1)
    centers_col = color[iy, ix]

    yy, xx = np.mgrid[0:h, 0:w]
    spatial_scale = (compactness / spacing) ** 2
    for _ in range(iters):
        best = np.full((h, w), np.inf)
        assign = np.zeros((h, w), dtype=np.int32)
        for j in range(k):
            cyj, cxj = centers_xy[j]
            y0, y1 = max(0, int(cyj - spacing)), min(h, int(cyj + spacing) + 1)
            x0, x1 = max(0, int(cxj - spacing)), min(w, int(cxj + spacing) + 1)
            if y0 >= y1 or x0 >= x1:
                continue
            dc = np.sum((color[y0:y1, x0:x1] - centers_col[j]) ** 2, axis=2)
            ds = (yy[y0:y1, x0:x1] - cyj) ** 2 + (xx[y0:y1, x0:x1] - cxj) ** 2
            d = dc + spatial_scale * ds
            win_best = best[y0:y1, x0:x1]
            better = d < win_best
            win_best[better] = d[better]
            assign[y0:y1, x0:x1][better] = j
        # pixels outside every window fall back to the nearest grid center
        orphan = np.isinf(best)
        if orphan.any():
            gy = np.clip((yy[orphan] / (h / ny)).astype(int), 0, ny - 1)
            gx = np.clip((xx[orphan] / (w / nx)).astype(int), 0, nx - 1)
            assign[orphan] = gy * nx + gx
        for j in range(k):
            sel = assign == j
            if not sel.any():
                continue
            centers_xy[j] = (yy[sel].mean(), xx[sel].mean())
            centers_col[j] = color[sel].mean(axis=0)

    assign = _enforce_connectivity(assign)
    return [Proposal(mask=assign == j) for j in np.unique(assign)]


def _enforce_connectivity(assign: np.ndarray) -> np.ndarray:
    """Keep the largest connected component per label; merge the rest into a
    4-connected neighbour. Returns a dense relabeling starting at 0."""
    h, w = assign.shape
    comp = np.full((h, w), -1, dtype=np.int32)
    comp_label: list[int] = []
    comp_size: list[int] = []
    for sy in range(h):
        for sx in range(w):
            if comp[sy, sx] >= 0:
                continue
            cid = len(comp_label)
            lab = assign[sy, sx]
            comp_label.append(int(lab))
            queue = deque([(sy, sx)])
            comp[sy, sx] = cid
            size = 0
            while queue:
                y, x = queue.popleft()
                size += 1
                for ny_, nx_ in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                    if 0 <= ny_ < h and 0 <= nx_ < w and comp[ny_, nx_] < 0 and assign[ny_, nx_] == lab:
                        comp[ny_, nx_] = cid
                        queue.append((ny_, nx_))
            comp_size.append(size)

    keep: dict[int, int] = {}  # label -> component id of its largest blob
    for cid, lab in enumerate(comp_label):
        if lab not in keep or comp_size[cid] > comp_size[keep[lab]]:
            keep[lab] = cid
    survivors = set(keep.values())

    # merge every non-surviving component into an adjacent surviving one
    merged = comp.copy()
    changed = True
    while changed:
        changed = False
        for cid in range(len(comp_label)):
            if cid in survivors:
                continue
            sel = merged == cid
            if not sel.any():
                continue
            edge = _adjacent_values(merged, sel)
            edge = [e for e in edge if e in survivors]
            if edge:
                merged[sel] = edge[0]
                changed = True
    out = np.zeros_like(assign)
    for new_id, cid in enumerate(sorted(survivors)):
        out[merged == cid] = new_id
    return out


def _adjacent_values(arr: np.ndarray, sel: np.ndarray) -> list[int]:
    vals: set[int] = set()
    for shift_axis, shift in ((0, 1), (0, -1), (1, 1), (1, -1)):
        rolled = np.roll(sel, shift, axis=shift_axis)
        if shift == 1:
            if shift_axis == 0:
                rolled[0, :] = False
            else:
                rolled[:, 0] = False
        else:
            if shift_axis == 0:
                rolled[-1, :] = False
            else:
                rolled[:, -1] = False
        vals.update(int(v) for v in np.unique(arr[rolled & ~sel]))
    return sorted(vals)


# --- pasting ----------------------------------------------------------------------

def paste_proposals(proposals: list[Proposal], width: int, height: int) -> LabelMap:
    """Fuse classified proposals into one label map.

    Proposals are pasted in increasing score/area order (ties: larger area
    first, then lower input index), later pastes overwriting earlier ones, so
    confident small regions end up on top of large tentative ones.
    """
    labels = np.zeros((height, width), dtype=np.int32)
    order = []
    for i, p in enumerate(proposals):
        if p.score is None or p.label is None:
            raise ValueError(f"proposal {i} has no score/label yet")
        if p.mask.shape != (height, width):
            raise DimensionError("proposal mask resolution mismatch")
        order.append((p.score / p.area, -p.area, i))
    for _, _, i in sorted(order):
        p = proposals[i]
        labels[p.mask] = p.label
    return LabelMap(labels=labels)


# --- proposal file formats ----------------------------------------------------------

def proposals_from_labelmap(labels: np.ndarray) -> list[Proposal]:
    """One proposal per non-zero id of a partition label map."""
    labels = np.asarray(labels)
    ids = np.unique(labels)
    return [Proposal(mask=labels == i) for i in ids if i > 0]


def write_rle_proposals(path, proposals: list[Proposal]) -> None:
    """Text format: `count width height` header, then per proposal one line of
    `id start:length ...` runs over the row-major flattened mask."""
    from .image import atomic_write_bytes

    if not proposals:
        raise ValueError("no proposals to write")
    h, w = proposals[0].mask.shape
    lines = [f"{len(proposals)} {w} {h}"]
    for i, p in enumerate(proposals, start=1):
        flat = p.mask.ravel()
        bounds = np.flatnonzero(np.diff(np.concatenate([[0], flat.view(np.int8), [0]])))
        runs = bounds.reshape(-1, 2)
        toks = " ".join(f"{start}:{stop - start}" for start, stop in runs)
        lines.append(f"{i} {toks}")
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def segment_proposals_io(path) -> list[Proposal]:
    """Load proposals from either supported file kind: a 16-bit label-map PGM
    (crisp-style partition, one id per region) or an RLE text file
    (possibly overlapping regions)."""
    from pathlib import Path

    from .image import read_pnm_raw

    head = Path(path).read_bytes()[:2]
    if head == b"P5":
        labels, _ = read_pnm_raw(path)
        return proposals_from_labelmap(labels.astype(np.int32))
    return read_rle_proposals(path)


def read_rle_proposals(path) -> list[Proposal]:
    from pathlib import Path

    text = Path(path).read_text().strip().splitlines()
    if not text:
        raise FormatError("empty proposal file")
    head = text[0].split()
    if len(head) != 3:
        raise FormatError("proposal header must be `count width height`")
    count, w, h = (int(t) for t in head)
    if len(text) - 1 != count:
        raise FormatError(f"expected {count} proposal lines, found {len(text) - 1}")
    out = []
    for line in text[1:]:
        toks = line.split()
        flat = np.zeros(h * w, dtype=bool)
        for tok in toks[1:]:
            start_s, len_s = tok.split(":")
            start, length = int(start_s), int(len_s)
            if start < 0 or start + length > h * w:
                raise FormatError(f"run {tok} exceeds the {w}x{h} pixel grid")
            flat[start : start + length] = True
        out.append(Proposal(mask=flat.reshape(h, w)))
    return out
