"""Flow and image quality metrics, flow colorization and dataset evaluation."""
from __future__ import annotations

import colorsys
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .dataset import DatasetManifest, config_digest
from .deconv import DeconvConfig, deblur
from .imgcore import FlowDomain, MotionFlow, read_flow, save_image

log = logging.getLogger(__name__)

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def flow_mse(est: MotionFlow, gt: MotionFlow) -> float:
    """``sum((U - U')^2 + (V - V')^2) / (2 * number of vectors)``."""
    if est.shape != gt.shape:
        raise ValueError(f"flow shape mismatch: {est.shape} vs {gt.shape}")
    du = est.u - gt.u
    dv = est.v - gt.v
    return float((np.sum(du * du) + np.sum(dv * dv)) / (2.0 * du.size))


def psnr(a, b) -> float:
    """PSNR in dB for peak 1.0; identical inputs give ``inf``."""
    a, b = _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def capped(db: float) -> float:
    return min(db, PSNR_CAP)


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_gray(a, b, win):
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    filt = lambda x: fftconvolve(x, win, mode="valid")  # noqa: E731
    mu_a, mu_b = filt(a), filt(b)
    saa = filt(a * a) - mu_a**2
    sbb = filt(b * b) - mu_b**2
    sab = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def ssim(a, b) -> float:
    """Single-scale SSIM (11x11 Gaussian window, sigma 1.5, range 1.0).

    Colour images are scored per channel and averaged.
    """
    a, b = _same_shape(a, b)
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ValueError(f"image {a.shape[:2]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    win = _gaussian_window()
    vals = [_ssim_gray(a[:, :, c], b[:, :, c], win) for c in range(a.shape[2])]
    return float(np.clip(np.mean(vals), -1.0, 1.0))


def colorize_flow(flow: MotionFlow, dom: FlowDomain) -> np.ndarray:
    """HSV wheel: hue is the motion direction, saturation its length relative to the domain."""
    u = flow.u.astype(np.float64)
    v = flow.v.astype(np.float64)
    hue = np.mod(np.arctan2(v, u) / (2 * np.pi), 1.0)
    top = math.hypot(dom.u_max, dom.v_max) or 1.0
    sat = np.clip(np.hypot(u, v) / top, 0.0, 1.0)
    to_rgb = np.vectorize(colorsys.hsv_to_rgb, otypes=[float, float, float])
    r, g, b = to_rgb(hue, sat, 1.0)
    return np.stack([r, g, b], axis=-1)


@dataclass
class RecordMetrics:
    blurred_path: str
    flow_mse: float | None = None
    psnr_db: float | None = None
    ssim: float | None = None
    psnr_gt_db: float | None = None
    ssim_gt: float | None = None
    psnr_blurred_db: float | None = None
    ssim_blurred: float | None = None
    missing: str | None = None


@dataclass
class EvalReport:
    records: list[RecordMetrics]
    means: dict[str, float] = field(default_factory=dict)
    config_digest: str = ""

    def compute_means(self) -> None:
        keys = ["flow_mse", "psnr_db", "ssim", "psnr_gt_db", "ssim_gt", "psnr_blurred_db", "ssim_blurred"]
        self.means = {}
        for k in keys:
            vals = [getattr(r, k) for r in self.records if getattr(r, k) is not None]
            if vals:
                self.means[k] = float(np.mean(vals))

    def to_dict(self) -> dict:
        return {
            "config_digest": self.config_digest,
            "n_records": len(self.records),
            "n_missing": sum(r.missing is not None for r in self.records),
            "means": self.means,
            "records": [asdict(r) for r in self.records],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def evaluate(
    manifest: DatasetManifest,
    estimator=None,
    outputs_dir=None,
    deconv_cfg: DeconvConfig | None = None,
    skip_zero: bool = True,
    limit: int | None = None,
) -> EvalReport:
    """Score flow estimates and the resulting deblurred images on a dataset.

    ``estimator`` is a directory of ``.mflw`` files named like the records'
    ground-truth flows, a :class:`~motionflow.net.NetworkParams`, or a
    callable ``image -> MotionFlow``.  Each record is also deconvolved with
    its ground-truth flow as the reference upper bound.  Missing inputs are
    flagged per record rather than aborting the run.
    """
    from .net.model import NetworkParams, estimate_flow

    if len(manifest.records) == 0:
        raise ValueError("manifest has no records")
    cfg = deconv_cfg or DeconvConfig()
    if isinstance(estimator, NetworkParams):
        params = estimator
        get_flow = lambda rec, y: estimate_flow(params, y, manifest.dom)  # noqa: E731
    elif callable(estimator):
        get_flow = lambda rec, y: estimator(y)  # noqa: E731
    elif estimator is not None:
        flows_dir = Path(estimator)
        get_flow = lambda rec, y: read_flow(flows_dir / Path(rec.flow_path).name)  # noqa: E731
    else:
        get_flow = None
    out_dir = Path(outputs_dir) if outputs_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    records = [r for r in manifest.records if not (skip_zero and r.sim_params_digest == "zero")]
    if limit is not None:
        records = records[:limit]
    results = []
    for rec in records:
        m = RecordMetrics(rec.blurred_path)
        try:
            y, gt = manifest.load_record(rec)
            x = manifest.load_sharp(rec)
        except Exception as exc:  # reported, not fatal
            m.missing = str(exc)
            results.append(m)
            continue
        m.psnr_blurred_db = capped(psnr(y, x))
        m.ssim_blurred = ssim(y, x)
        x_gt = deblur(y, gt, cfg)
        m.psnr_gt_db = capped(psnr(x_gt, x))
        m.ssim_gt = ssim(x_gt, x)
        if get_flow is not None:
            try:
                est = get_flow(rec, y)
            except (OSError, ValueError) as exc:
                m.missing = f"no flow estimate: {exc}"
                results.append(m)
                continue
            m.flow_mse = flow_mse(est, gt)
            x_est = deblur(y, est, cfg)
            m.psnr_db = capped(psnr(x_est, x))
            m.ssim = ssim(x_est, x)
            if out_dir is not None:
                save_image(x_est, out_dir / Path(rec.blurred_path).name)
        if out_dir is not None:
            save_image(x_gt, out_dir / ("gtflow_" + Path(rec.blurred_path).name))
        results.append(m)
    report = EvalReport(results, config_digest=config_digest({"deconv": asdict(cfg), "manifest": manifest.config_digest}))
    report.compute_means()
    return report
