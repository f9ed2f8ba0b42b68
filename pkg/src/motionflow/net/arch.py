"""Architecture descriptors for the motion-flow FCN."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

from ..imgcore import FlowDomain

KINDS = ("conv", "maxpool", "upconv", "skip", "softmax-split")


@dataclass(frozen=True)
class LayerSpec:
    """One layer.

    ``skip`` layers read the output of layer ``source`` (an index into the
    layer list), project it with a 1x1 conv when ``mode == "add"`` and add it
    to the running activation, or concatenate it when ``mode == "concat"``.
    """

    kind: str
    ksize: int = 0
    cin: int = 0
    cout: int = 0
    stride: int = 1
    factor: int = 1
    source: int = -1
    relu: bool = False
    mode: str = "add"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv" and (self.ksize % 2 != 1 or self.stride != 1):
            raise ValueError("conv layers need an odd kernel and stride 1")
        if self.kind == "upconv" and (self.factor < 2 or self.factor % 2):
            raise ValueError("upconv factor must be an even integer >= 2")
        if self.kind == "skip" and self.mode not in ("add", "concat"):
            raise ValueError(f"unknown skip mode {self.mode!r}")


@dataclass(frozen=True)
class ArchSpec:
    layers: tuple[LayerSpec, ...]
    n_u: int
    n_v: int
    in_channels: int = 3
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        self.validate()

    @property
    def n_labels(self) -> int:
        return self.n_u + self.n_v

    @property
    def stride(self) -> int:
        """Input sides must be multiples of this (``2 ** number of pools``)."""
        return 2 ** sum(1 for l in self.layers if l.kind == "maxpool")

    def validate(self) -> None:
        """Walk the layer list tracking channels and scale; raise on inconsistency."""
        channels = [self.in_channels]
        scales = [1]
        c, s = self.in_channels, 1
        if not self.layers or self.layers[-1].kind != "softmax-split":
            raise ValueError("the last layer must be softmax-split")
        for k, l in enumerate(self.layers):
            if l.kind == "conv":
                if l.cin != c:
                    raise ValueError(f"layer {k}: conv expects {l.cin} channels, gets {c}")
                c = l.cout
            elif l.kind == "maxpool":
                s *= 2
            elif l.kind == "upconv":
                if l.cin != c or l.cout != c:
                    raise ValueError(f"layer {k}: upconv is channel-wise, channels must stay {c}")
                if s % l.factor:
                    raise ValueError(f"layer {k}: upsampling by {l.factor} overshoots the input scale")
                s //= l.factor
            elif l.kind == "skip":
                if not 0 <= l.source < k:
                    raise ValueError(f"layer {k}: skip source must be an earlier layer")
                if scales[l.source + 1] != s:
                    raise ValueError(f"layer {k}: skip source scale differs")
                if l.cin != channels[l.source + 1]:
                    raise ValueError(f"layer {k}: skip source has {channels[l.source + 1]} channels, not {l.cin}")
                if l.mode == "add":
                    if l.cout != c:
                        raise ValueError(f"layer {k}: additive skip must project to {c} channels")
                else:
                    c = c + l.cin
                    if l.cout != c:
                        raise ValueError(f"layer {k}: concat skip must declare {c} output channels")
            elif l.kind == "softmax-split":
                if k != len(self.layers) - 1:
                    raise ValueError("softmax-split must be last")
                if c != self.n_u + self.n_v:
                    raise ValueError(f"head receives {c} channels, needs {self.n_u + self.n_v}")
            channels.append(c)
            scales.append(s)
        if s != 1:
            raise ValueError("upsampling does not undo pooling: output scale is 1/%d" % s)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_u": self.n_u,
            "n_v": self.n_v,
            "in_channels": self.in_channels,
            "layers": [asdict(l) for l in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(
            layers=tuple(LayerSpec(**l) for l in d["layers"]),
            n_u=d["n_u"],
            n_v=d["n_v"],
            in_channels=d.get("in_channels", 3),
            name=d.get("name", "custom"),
        )

    def digest(self) -> bytes:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).digest()


def fcn(dom: FlowDomain, widths=(64, 128, 256, 256, 512, 512), name="paper") -> ArchSpec:
    """Seven convs, four pools, three upconvs, skips from pool2 and pool3."""
    w1, w2, w3, w4, w5, w6 = widths
    d = dom.n_labels
    L = LayerSpec
    layers = [
        L("conv", ksize=7, cin=3, cout=w1, relu=True),  # 0
        L("conv", ksize=5, cin=w1, cout=w2, relu=True),  # 1
        L("maxpool"),  # 2 pool1
        L("conv", ksize=5, cin=w2, cout=w3, relu=True),  # 3
        L("maxpool"),  # 4 pool2
        L("conv", ksize=3, cin=w3, cout=w4, relu=True),  # 5
        L("maxpool"),  # 6 pool3
        L("conv", ksize=3, cin=w4, cout=w5, relu=True),  # 7
        L("conv", ksize=3, cin=w5, cout=w6, relu=True),  # 8
        L("maxpool"),  # 9 pool4
        L("conv", ksize=1, cin=w6, cout=d),  # 10 conv7
        L("upconv", cin=d, cout=d, factor=2),  # 11
        L("skip", cin=w4, cout=d, source=6),  # 12 + pool3
        L("upconv", cin=d, cout=d, factor=2),  # 13
        L("skip", cin=w3, cout=d, source=4),  # 14 + pool2
        L("upconv", cin=d, cout=d, factor=4),  # 15
        L("softmax-split"),
    ]
    return ArchSpec(tuple(layers), n_u=dom.n_u, n_v=dom.n_v, name=name)


def paper_arch(dom: FlowDomain | None = None) -> ArchSpec:
    return fcn(dom or FlowDomain(36, 36), name="paper")


def toy_arch(dom: FlowDomain | None = None) -> ArchSpec:
    return fcn(dom or FlowDomain(8, 8), widths=(32, 64, 128, 128, 256, 256), name="toy")


PRESETS = {"paper": paper_arch, "toy": toy_arch}
