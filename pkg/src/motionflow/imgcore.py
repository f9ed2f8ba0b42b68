"""Raster and flow types, label-domain bookkeeping and file I/O.

Conventions used throughout the package:

* Images are ``numpy`` arrays of shape ``(H, W, C)`` with ``C`` in ``{1, 3}``
  and float samples in ``[0, 1]``.
* ``i`` indexes columns (horizontal, increasing rightward) and ``j`` indexes
  rows (vertical, increasing downward).  Arrays are therefore addressed as
  ``arr[j, i]``.  ``u`` is horizontal motion, ``v`` vertical motion.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

FLOW_MAGIC = b"MFLW"
FLOW_VERSION = 1
_FLOW_HEADER = struct.Struct("<4sHII")


class DomainError(ValueError):
    """A motion vector or label lies outside the feasible flow domain."""


class FlowFormatError(ValueError):
    """Malformed MFLW file."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ImageDecodeError(ValueError):
    pass


@dataclass(frozen=True)
class FlowDomain:
    """Discrete label space ``D_u+ x D_v`` for the two classifier heads.

    u-labels occupy ``[0, u_max]`` and v-labels ``[0, 2 * v_max]`` with
    ``v = v_label - v_max``.  In the flat concatenated layout used by the
    network the v-labels are offset by ``n_u``.
    """

    u_max: int
    v_max: int

    def __post_init__(self):
        if int(self.u_max) != self.u_max or int(self.v_max) != self.v_max:
            raise ValueError("u_max and v_max must be integers")
        if self.u_max < 0 or self.v_max < 0:
            raise ValueError("u_max and v_max must be nonnegative")

    @property
    def n_u(self) -> int:
        return self.u_max + 1

    @property
    def n_v(self) -> int:
        return 2 * self.v_max + 1

    @property
    def n_labels(self) -> int:
        return self.n_u + self.n_v

    def contains(self, u, v) -> bool:
        u = np.asarray(u)
        v = np.asarray(v)
        return bool(np.all((u >= 0) & (u <= self.u_max) & (np.abs(v) <= self.v_max)))

    def label_of(self, u, v):
        """Map motion ``(u, v)`` to ``(u_label, v_label)``; works on arrays."""
        if not self.contains(u, v):
            raise DomainError(f"motion ({u}, {v}) outside domain {self}")
        u = np.asarray(u)
        v = np.asarray(v)
        out = (u.astype(np.int64), (v + self.v_max).astype(np.int64))
        if out[0].ndim == 0:
            return int(out[0]), int(out[1])
        return out

    def motion_of(self, u_label, v_label):
        """Inverse of :meth:`label_of`."""
        ul = np.asarray(u_label)
        vl = np.asarray(v_label)
        if np.any((ul < 0) | (ul >= self.n_u) | (vl < 0) | (vl >= self.n_v)):
            raise DomainError(f"labels ({u_label}, {v_label}) outside domain {self}")
        out = (ul.astype(np.int64), (vl - self.v_max).astype(np.int64))
        if out[0].ndim == 0:
            return int(out[0]), int(out[1])
        return out

    def flat_label(self, u, v) -> tuple[int, int]:
        """Labels in the concatenated ``D``-channel layout of the network."""
        ul, vl = self.label_of(u, v)
        return ul, vl + self.n_u


@dataclass(frozen=True, eq=False)
class MotionFlow:
    """Integer per-pixel motion field ``(U, V)`` of shape ``(H, W)``."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u)
        v = np.asarray(self.v)
        if u.shape != v.shape or u.ndim != 2:
            raise ValueError(f"u and v must be equal 2-D shapes, got {u.shape} and {v.shape}")
        if u.shape[0] < 1 or u.shape[1] < 1:
            raise ValueError("flow must be at least 1x1")
        if not (np.issubdtype(u.dtype, np.integer) and np.issubdtype(v.dtype, np.integer)):
            if not (np.all(u == np.round(u)) and np.all(v == np.round(v))):
                raise ValueError("flow components must be integers")
        u = u.astype(np.int64)
        v = v.astype(np.int64)
        u.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @classmethod
    def zeros(cls, height: int, width: int) -> "MotionFlow":
        z = np.zeros((height, width), dtype=np.int64)
        return cls(z, z.copy())

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    def in_domain(self, dom: FlowDomain) -> bool:
        return dom.contains(self.u, self.v)

    def check_domain(self, dom: FlowDomain) -> None:
        if not self.in_domain(dom):
            raise DomainError(
                f"flow range u[{self.u.min()},{self.u.max()}] v[{self.v.min()},{self.v.max()}] "
                f"outside domain {dom}"
            )

    def __eq__(self, other):
        if not isinstance(other, MotionFlow):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.u, other.u) and np.array_equal(self.v, other.v)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class FlowFieldF:
    """Continuous motion field, before discretization."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.shape != v.shape or u.ndim != 2:
            raise ValueError("u and v must have equal 2-D shapes")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("flow field contains non-finite values")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @classmethod
    def zeros(cls, height: int, width: int) -> "FlowFieldF":
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    def __add__(self, other: "FlowFieldF") -> "FlowFieldF":
        return FlowFieldF(self.u + other.u, self.v + other.v)

    def scaled(self, factor: float) -> "FlowFieldF":
        return FlowFieldF(self.u * factor, self.v * factor)


def check_image(img, name: str = "image") -> np.ndarray:
    """Validate an image and return it as a float64 ``(H, W, C)`` array.

    2-D arrays are promoted to a single channel.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"{name} must have shape (H, W, 1|3), got {np.shape(img)}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be at least 1x1")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite samples")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(f"{name} samples must lie in [0, 1], got [{arr.min()}, {arr.max()}]")
    return arr


def load_image(path) -> np.ndarray:
    """Read an 8-bit gray or RGB PNG as a float image with samples ``raw / 255``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such image: {path}")
    try:
        with PILImage.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "P":
                im = im.convert("RGB")
                mode = "RGB"
            if mode not in ("L", "RGB"):
                raise ImageDecodeError(f"{path}: unsupported image mode {mode!r} (need 8-bit L or RGB)")
            raw = np.asarray(im, dtype=np.uint8)
    except ImageDecodeError:
        raise
    except Exception as exc:
        raise ImageDecodeError(f"{path}: cannot decode image ({exc})") from exc
    if raw.ndim == 2:
        raw = raw[:, :, None]
    return raw.astype(np.float64) / 255.0


def quantize(img) -> np.ndarray:
    arr = check_image(img)
    return np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)


def save_image(img, path) -> None:
    """Write an image as an 8-bit PNG with ``round(sample * 255)`` quantization."""
    raw = quantize(img)
    mode = "L" if raw.shape[2] == 1 else "RGB"
    data = raw[:, :, 0] if mode == "L" else raw
    PILImage.fromarray(data, mode=mode).save(Path(path), format="PNG")


def write_flow(flow: MotionFlow, path) -> None:
    """Write a flow in the MFLW v1 format (see README for the layout)."""
    Path(path).write_bytes(flow_to_bytes(flow))


def flow_to_bytes(flow: MotionFlow) -> bytes:
    lim = np.iinfo(np.int16)
    if flow.u.min() < lim.min or flow.u.max() > lim.max or flow.v.min() < lim.min or flow.v.max() > lim.max:
        raise ValueError("flow values do not fit int16")
    payload = np.empty(flow.shape + (2,), dtype="<i2")
    payload[..., 0] = flow.u
    payload[..., 1] = flow.v
    header = _FLOW_HEADER.pack(FLOW_MAGIC, FLOW_VERSION, flow.width, flow.height)
    return header + payload.tobytes()


def read_flow(path) -> MotionFlow:
    data = Path(path).read_bytes()
    return flow_from_bytes(data)


def flow_from_bytes(data: bytes) -> MotionFlow:
    if len(data) < _FLOW_HEADER.size:
        raise FlowFormatError(f"truncated header: {len(data)} bytes", len(data))
    magic, version, width, height = _FLOW_HEADER.unpack_from(data, 0)
    if magic != FLOW_MAGIC:
        raise FlowFormatError(f"bad magic {magic!r}", 0)
    if version != FLOW_VERSION:
        raise FlowFormatError(f"unsupported version {version}", 4)
    if width < 1 or height < 1:
        raise FlowFormatError(f"invalid dimensions {width}x{height}", 6)
    need = _FLOW_HEADER.size + 4 * width * height
    if len(data) < need:
        raise FlowFormatError(f"truncated payload: need {need} bytes, have {len(data)}", len(data))
    if len(data) > need:
        raise FlowFormatError(f"trailing bytes after payload", need)
    payload = np.frombuffer(data, dtype="<i2", offset=_FLOW_HEADER.size).reshape(height, width, 2)
    return MotionFlow(payload[..., 0].astype(np.int64), payload[..., 1].astype(np.int64))
