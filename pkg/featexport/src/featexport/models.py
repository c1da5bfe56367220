"""Adapter around torchvision classification models.

Works with any model exposing a `features` Sequential of Conv2d / ReLU /
pooling modules (the VGG and AlexNet families). Convolutions are named
conv1..convN in order; activations can be tapped before (default) or after
the ReLU that follows a convolution. Receptive-field arithmetic derives the
image-space stride and center offset of every tap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torchvision


class ModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class ConvTap:
    name: str  # conv1..convN
    module_index: int  # index into the features Sequential
    channels: int
    stride: float  # cumulative input-pixel spacing of the activation grid
    offset: tuple[float, float]  # input-pixel center of cell (0, 0)


IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def _geometry_step(sx, sy, ox, oy, module) -> tuple[float, float, float, float]:
    if isinstance(module, nn.Conv2d):
        if module.dilation not in ((1, 1), 1):
            raise ModelError("dilated convolutions are not supported")
        kh, kw = module.kernel_size
        sh, sw = module.stride
        ph, pw = module.padding if isinstance(module.padding, tuple) else (module.padding,) * 2
    elif isinstance(module, (nn.MaxPool2d, nn.AvgPool2d)):
        k = module.kernel_size
        kh, kw = (k, k) if isinstance(k, int) else k
        s = module.stride if module.stride is not None else k
        sh, sw = (s, s) if isinstance(s, int) else s
        p = module.padding
        ph, pw = (p, p) if isinstance(p, int) else p
    else:
        return sx, sy, ox, oy
    ox += ((kw - 1) / 2.0 - pw) * sx
    oy += ((kh - 1) / 2.0 - ph) * sy
    return sx * sw, sy * sh, ox, oy


class FeatureModel:
    """A features-only forward runner with named convolution taps."""

    def __init__(self, model_name: str, weights: str | None = None, seed: int = 0):
        torch.manual_seed(seed)
        try:
            model = torchvision.models.get_model(model_name, weights=weights)
        except Exception as exc:
            raise ModelError(f"cannot obtain model {model_name!r}: {exc}") from exc
        if not hasattr(model, "features") or not isinstance(model.features, nn.Sequential):
            raise ModelError(
                f"model {model_name!r} exposes no `features` Sequential; "
                "use a VGG/AlexNet-style architecture"
            )
        self.name = model_name
        self.pretrained = weights is not None
        self.features = model.features.eval()
        for p in self.features.parameters():
            p.requires_grad_(False)
        self._taps = self._walk_taps()

    def _walk_taps(self) -> list[ConvTap]:
        taps = []
        sx = sy = 1.0
        ox = oy = 0.0
        ordinal = 0
        for idx, module in enumerate(self.features):
            new_sx, new_sy, new_ox, new_oy = _geometry_step(sx, sy, ox, oy, module)
            if isinstance(module, nn.Conv2d):
                ordinal += 1
                if new_sx != new_sy:
                    raise ModelError("anisotropic stride is not supported")
                taps.append(
                    ConvTap(
                        name=f"conv{ordinal}",
                        module_index=idx,
                        channels=module.out_channels,
                        stride=new_sx,
                        offset=(new_ox, new_oy),
                    )
                )
            sx, sy, ox, oy = new_sx, new_sy, new_ox, new_oy
        if not taps:
            raise ModelError(f"model {self.name!r} has no convolution layers")
        return taps

    def conv_taps(self) -> list[ConvTap]:
        return list(self._taps)

    def tap(self, name: str) -> ConvTap:
        for t in self._taps:
            if t.name == name:
                return t
        raise ModelError(
            f"layer {name!r} not found; available: {[t.name for t in self._taps]}"
        )

    def in_channels(self) -> int:
        for module in self.features:
            if isinstance(module, nn.Conv2d):
                return module.in_channels
        raise ModelError("no convolution layer")

    def normalize(self, x: torch.Tensor) -> torch.Tensor:
        """ImageNet normalization for pretrained weights; identity otherwise."""
        if not self.pretrained:
            return x
        mean = torch.tensor(IMAGENET_MEAN, dtype=x.dtype).view(3, 1, 1)
        std = torch.tensor(IMAGENET_STD, dtype=x.dtype).view(3, 1, 1)
        return (x - mean) / std

    @torch.no_grad()
    def activations(
        self, image: torch.Tensor, tap_names: list[str], post_relu: bool = False
    ) -> dict[str, np.ndarray]:
        """(C, H, W) float activations for each requested tap.

        Pre-nonlinearity taps capture the convolution output directly; the
        post flag instead records the value after the following ReLU.
        """
        wanted = {self.tap(n).module_index: n for n in tap_names}
        last_needed = max(wanted)
        out: dict[str, np.ndarray] = {}
        x = self.normalize(image).unsqueeze(0)
        pending: str | None = None
        for idx, module in enumerate(self.features):
            x = module(x)
            if pending is not None and isinstance(module, nn.ReLU):
                out[pending] = x[0].cpu().numpy().astype(np.float32)
                pending = None
            if idx in wanted:
                if post_relu:
                    pending = wanted[idx]
                else:
                    out[wanted[idx]] = x[0].cpu().numpy().astype(np.float32)
            if idx >= last_needed and pending is None:
                break
        if pending is not None:
            raise ModelError("no ReLU follows the tapped convolution")
        missing = set(tap_names) - set(out)
        if missing:
            raise ModelError(f"taps never reached: {sorted(missing)}")
        return out


def flip_kernels_horizontally(model: FeatureModel) -> FeatureModel:
    """Clone with every convolution kernel mirrored along its width.

    Convolution is only flip-equivariant jointly with this kernel mirror:
    features(flip(x)) equals flip(features_mirrored(x)) away from border
    effects, which is what the numerical equivariance check verifies.
    """
    import copy

    clone = copy.copy(model)
    clone.features = copy.deepcopy(model.features)
    with torch.no_grad():
        for module in clone.features:
            if isinstance(module, nn.Conv2d):
                module.weight.copy_(module.weight.flip(-1))
    clone._taps = model._taps
    return clone
