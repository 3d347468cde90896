"""Backbone construction and intermediate-layer feature taps.

Three backbones are supported: a 4-block 64-filter conv net (``conv64``),
a 4-block residual net (``resnet12``) and torchvision's ``vgg16``.  Each
exposes named tap points; a tap is any module name from
``model.named_modules()``, with ``blockN`` shortcuts for the first two.

Weights come from an optional state-dict file; without one the backbone is
randomly initialized from the configured seed, which keeps exports fully
deterministic (this environment has no access to pretrained downloads).
"""

from __future__ import annotations

import torch
from torch import nn

BACKBONES = ("conv64", "resnet12", "vgg16")


def _conv_block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
        nn.MaxPool2d(2),
    )


def _conv64() -> nn.Module:
    return nn.Sequential(*[
        _conv_block(3 if i == 0 else 64, 64) for i in range(4)
    ])


class _ResidualBlock(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(cin, cout, 3, padding=1), nn.BatchNorm2d(cout), nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, padding=1), nn.BatchNorm2d(cout), nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, padding=1), nn.BatchNorm2d(cout),
        )
        self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1), nn.BatchNorm2d(cout))
        self.out = nn.Sequential(nn.ReLU(inplace=True), nn.MaxPool2d(2))

    def forward(self, x):
        return self.out(self.body(x) + self.shortcut(x))


def _resnet12() -> nn.Module:
    widths = [64, 128, 256, 512]
    blocks = []
    cin = 3
    for w in widths:
        blocks.append(_ResidualBlock(cin, w))
        cin = w
    return nn.Sequential(*blocks)


def build_backbone(name: str, seed: int = 0,
                   weights_path: str | None = None) -> nn.Module:
    """Construct a backbone in eval mode with seeded or loaded weights."""
    torch.manual_seed(seed)
    if name == "conv64":
        model = _conv64()
    elif name == "resnet12":
        model = _resnet12()
    elif name == "vgg16":
        from torchvision.models import vgg16
        model = vgg16(weights=None)
    else:
        raise ValueError(f"unknown backbone {name!r}; expected one of {BACKBONES}")
    if weights_path is not None:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    model.eval()
    return model


def _resolve_tap(model: nn.Module, tap: str) -> nn.Module:
    names = dict(model.named_modules())
    if tap.startswith("block") and tap[5:].isdigit():
        shortcut = str(int(tap[5:]) - 1)
        if shortcut in names:
            return names[shortcut]
    if tap in names:
        return names[tap]
    raise ValueError(f"tap layer {tap!r} not found; available: "
                     f"{sorted(n for n in names if n)[:20]} ...")


class FeatureTap:
    """Runs the backbone and captures one named module's output."""

    def __init__(self, model: nn.Module, tap: str):
        self.model = model
        self._captured = None
        module = _resolve_tap(model, tap)
        module.register_forward_hook(self._hook)

    def _hook(self, module, inputs, output):
        self._captured = output

    @torch.no_grad()
    def extract(self, batch: torch.Tensor) -> torch.Tensor:
        """(1, 3, S, S) image batch -> (C, H, W) feature tensor."""
        self._captured = None
        try:
            self.model(batch)
        except Exception:
            # the tap may sit before layers that cannot run (e.g. a vgg16
            # classifier head fed a non-224 input); the hook has fired if
            # the tapped module was reached
            if self._captured is None:
                raise
        if self._captured is None:
            raise ValueError("forward pass never reached the tapped module")
        return self._captured[0].detach().cpu()

    def feature_shape(self, image_size: int) -> tuple[int, int, int]:
        """Advertised (C, H, W) of the tap for a given input size."""
        probe = torch.zeros(1, 3, image_size, image_size)
        return tuple(self.extract(probe).shape)
