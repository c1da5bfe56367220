"""Multi-scale dense feature extraction over a ladder of rescale factors."""

from __future__ import annotations

import logging
from typing import Callable

from .errors import DegenerateImageError, EmptyFieldError
from .field import FeatureField
from .image import ImagePlane, rescale_image

log = logging.getLogger(__name__)

Extractor = Callable[[ImagePlane], FeatureField]

_warned: set[tuple[float, str]] = set()


def _warn_once(factor: float, reason: str) -> None:
    key = (round(factor, 6), reason)
    if key not in _warned:
        _warned.add(key)
        log.warning("scale %.4g: %s, skipped (repeats suppressed)", factor, reason)


def extract_pyramid(
    img: ImagePlane, extractor: Extractor, ladder: list[float]
) -> list[FeatureField]:
    """One FeatureField per usable scale factor.

    Each field records its factor so pooling can map cells back to
    original-resolution pixels. Scales that yield no descriptor cells (image
    too small at that factor) are skipped with a warning.
    """
    if not ladder:
        raise ValueError("empty scale ladder")
    fields: list[FeatureField] = []
    for factor in ladder:
        try:
            scaled = rescale_image(img, factor)
        except DegenerateImageError:
            _warn_once(factor, "image degenerates")
            continue
        try:
            field = extractor(scaled)
        except (EmptyFieldError, DegenerateImageError):
            _warn_once(factor, "no descriptor cells")
            continue
        fields.append(field.with_scale(factor))
    return fields
