"""Blurred-image / motion-flow training pairs.

A dataset directory holds ``sharp/``, ``blurred/`` and ``flows/`` plus a
``manifest.jsonl`` whose first line is a header (domain, noise level,
config digest) and every following line one record.  Paths in the manifest
are relative to the manifest's directory.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .blur import NoiseSpec, add_noise, apply_blur
from .flowsim import SimConfig, draw_rng, simulate_flow_with_params
from .imgcore import FlowDomain, MotionFlow, check_image, load_image, read_flow, save_image, write_flow

log = logging.getLogger(__name__)

DEFAULT_NOISE_SIGMA = 0.005
DEFAULT_STRIDE = 16
MANIFEST_NAME = "manifest.jsonl"
IMAGE_SUFFIXES = (".png",)


class DatasetError(RuntimeError):
    pass


def config_digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class ManifestRecord:
    blurred_path: str
    flow_path: str
    sharp_path: str
    seed: int
    sim_params_digest: str


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]
    dom: FlowDomain
    noise_sigma: float
    config_digest: str
    root: Path = field(default=Path("."))

    def __len__(self):
        return len(self.records)

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def save(self, path=None) -> Path:
        path = Path(path) if path is not None else self.root / MANIFEST_NAME
        header = {
            "type": "header",
            "u_max": self.dom.u_max,
            "v_max": self.dom.v_max,
            "noise_sigma": self.noise_sigma,
            "config_digest": self.config_digest,
        }
        with open(path, "w") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for rec in self.records:
                fh.write(json.dumps({"type": "record", **asdict(rec)}, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
        if not lines:
            raise DatasetError(f"{path}: empty manifest")
        header = json.loads(lines[0])
        if header.get("type") != "header":
            raise DatasetError(f"{path}: first line must be the header")
        records = []
        for n, ln in enumerate(lines[1:], start=2):
            d = json.loads(ln)
            if d.pop("type", None) != "record":
                raise DatasetError(f"{path}:{n}: expected a record line")
            records.append(ManifestRecord(**d))
        return cls(
            records=records,
            dom=FlowDomain(header["u_max"], header["v_max"]),
            noise_sigma=header["noise_sigma"],
            config_digest=header["config_digest"],
            root=path.parent,
        )

    def validate(self) -> None:
        """Check the manifest invariants: unique ``(sharp, seed)`` and readable files."""
        seen = set()
        for rec in self.records:
            key = (rec.sharp_path, rec.seed)
            if key in seen:
                raise DatasetError(f"duplicate record {key}")
            seen.add(key)
            for rel in (rec.blurred_path, rec.flow_path, rec.sharp_path):
                if not self.resolve(rel).exists():
                    raise DatasetError(f"missing file {rel}")
            read_flow(self.resolve(rec.flow_path)).check_domain(self.dom)

    def load_record(self, rec: ManifestRecord) -> tuple[np.ndarray, MotionFlow]:
        try:
            return load_image(self.resolve(rec.blurred_path)), read_flow(self.resolve(rec.flow_path))
        except (OSError, ValueError) as exc:
            raise DatasetError(f"cannot load record {rec.blurred_path}: {exc}") from exc

    def load_sharp(self, rec: ManifestRecord) -> np.ndarray:
        return load_image(self.resolve(rec.sharp_path))


def center_crop(img: np.ndarray, multiple: int) -> np.ndarray:
    """Crop to the largest centred window whose sides are multiples of ``multiple``."""
    h, w = img.shape[:2]
    nh, nw = (h // multiple) * multiple, (w // multiple) * multiple
    if nh == 0 or nw == 0:
        raise ValueError(f"image {h}x{w} is smaller than the stride {multiple}")
    top, left = (h - nh) // 2, (w - nw) // 2
    return img[top : top + nh, left : left + nw]


def min_side(dom: FlowDomain) -> int:
    return 2 * (dom.u_max + dom.v_max)


def expected_record_count(n_images: int, count_per_image: int, include_sharp: bool = True) -> int:
    return n_images * (count_per_image + int(include_sharp))


def generate_pair(x, dom: FlowDomain, cfg: SimConfig, noise: NoiseSpec, rng: np.random.Generator):
    """Simulate a flow for ``x`` and render the noisy blurred observation.

    The noise stream is seeded from ``rng`` after the flow draw, so the whole
    pair is a function of the generator state.  ``noise.seed`` is ignored.
    """
    pair = _generate(x, dom, cfg, noise, rng)
    return pair[0], pair[1]


def _generate(x, dom, cfg, noise, rng):
    x = check_image(x)
    h, w = x.shape[:2]
    if min(h, w) < min_side(dom):
        raise ValueError(f"image {h}x{w} too small for domain {dom}; need min side {min_side(dom)}")
    flow, params = simulate_flow_with_params((h, w), dom, cfg, rng)
    noise_seed = int(rng.integers(2**63))
    clean = apply_blur(x, flow)
    blurred = add_noise(np.clip(clean, 0.0, 1.0), NoiseSpec(noise.sigma, noise_seed))
    return blurred, flow, params


def _list_corpus(corpus_dir) -> list[Path]:
    d = Path(corpus_dir)
    if not d.is_dir():
        raise DatasetError(f"corpus directory {d} does not exist")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def build_dataset(
    corpus_dir,
    out_dir,
    count_per_image: int,
    dom: FlowDomain,
    cfg: SimConfig,
    noise_sigma: float = DEFAULT_NOISE_SIGMA,
    stride: int = DEFAULT_STRIDE,
    include_sharp: bool = True,
) -> DatasetManifest:
    """Generate ``count_per_image`` pairs per corpus image and write the manifest.

    Each sharp image also contributes one zero-flow record unless
    ``include_sharp`` is false.  Seeds are ``cfg.seed``-derived and distinct;
    a draw that repeats an earlier flow for the same image is redrawn.
    """
    paths = _list_corpus(corpus_dir)
    images = []
    for p in paths:
        try:
            images.append((p, load_image(p)))
        except ValueError as exc:
            log.warning("skipping %s: %s", p, exc)
    if not images:
        raise DatasetError(f"no decodable images in {corpus_dir}")

    out = Path(out_dir)
    for sub in ("sharp", "blurred", "flows"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    digest = config_digest(
        {"sim": cfg.to_dict(), "u_max": dom.u_max, "v_max": dom.v_max, "noise_sigma": noise_sigma,
         "count_per_image": count_per_image, "stride": stride, "include_sharp": include_sharp}
    )
    records: list[ManifestRecord] = []
    draw_index = 0
    for n, (path, img) in enumerate(images):
        x = center_crop(img, stride)
        if min(x.shape[:2]) < min_side(dom):
            raise DatasetError(f"{path}: cropped size {x.shape[:2]} too small for domain {dom}")
        stem = f"{n:05d}_{path.stem}"
        sharp_rel = f"sharp/{stem}.png"
        save_image(x, out / sharp_rel)
        seen = set()
        if include_sharp:
            zero = MotionFlow.zeros(*x.shape[:2])
            seen.add(_flow_key(zero))
            seed = _record_seed(cfg.seed, draw_index)
            draw_index += 1
            blurred = add_noise(x, NoiseSpec(noise_sigma, seed))
            records.append(_write_record(out, stem, "zero", blurred, zero, sharp_rel, seed, "zero"))
        made = 0
        while made < count_per_image:
            seed = _record_seed(cfg.seed, draw_index)
            draw_index += 1
            blurred, flow, params = _generate(x, dom, cfg, NoiseSpec(noise_sigma), draw_rng(seed))
            key = _flow_key(flow)
            if key in seen:
                continue
            seen.add(key)
            records.append(
                _write_record(out, stem, f"{made:03d}", blurred, flow, sharp_rel, seed, params.digest())
            )
            made += 1
    manifest = DatasetManifest(records, dom, noise_sigma, digest, root=out)
    manifest.save()
    return manifest


def _record_seed(base: int, index: int) -> int:
    ss = np.random.SeedSequence([int(base) & (2**63 - 1), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _flow_key(flow: MotionFlow) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(flow.u).tobytes())
    h.update(np.ascontiguousarray(flow.v).tobytes())
    return h.hexdigest()


def _write_record(out, stem, tag, blurred, flow, sharp_rel, seed, digest) -> ManifestRecord:
    blurred_rel = f"blurred/{stem}_{tag}.png"
    flow_rel = f"flows/{stem}_{tag}.mflw"
    save_image(blurred, out / blurred_rel)
    write_flow(flow, out / flow_rel)
    return ManifestRecord(blurred_rel, flow_rel, sharp_rel, int(seed), digest)


def iterate(manifest: DatasetManifest, epoch_seed: int) -> Iterator[tuple[np.ndarray, MotionFlow]]:
    """Yield every record once, in a permutation fixed by ``epoch_seed``."""
    order = np.random.default_rng(epoch_seed).permutation(len(manifest.records))
    for k in order:
        yield manifest.load_record(manifest.records[k])
