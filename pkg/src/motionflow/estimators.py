"""scikit-learn style wrappers around the flow network and the deconvolver.

``X`` is a list of blurred images (H, W, C); flows are :class:`MotionFlow`
objects, so these are not drop-in tabular estimators, but they follow the
``fit``/``predict``/``transform``/``get_params`` conventions and work with
``sklearn.base.clone``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .deconv import DeconvConfig, deblur
from .evalkit import flow_mse
from .imgcore import FlowDomain, MotionFlow, check_image
from .net import PRESETS, TrainConfig, estimate_flow, forward, train


def check_images(X, name="X") -> list[np.ndarray]:
    """Validate a single image or a sequence of images; returns a list."""
    if isinstance(X, np.ndarray) and X.ndim in (2, 3) and X.dtype != object:
        X = [X]
    out = [check_image(x, f"{name}[{n}]") for n, x in enumerate(X)]
    if not out:
        raise ValueError(f"{name} is empty")
    return out


def check_flows(flows, images, name="flows") -> list[MotionFlow]:
    if isinstance(flows, MotionFlow):
        flows = [flows]
    flows = list(flows)
    if len(flows) != len(images):
        raise ValueError(f"{name}: got {len(flows)} flows for {len(images)} images")
    for n, (f, x) in enumerate(zip(flows, images)):
        if not isinstance(f, MotionFlow):
            raise TypeError(f"{name}[{n}] is not a MotionFlow")
        if f.shape != x.shape[:2]:
            raise ValueError(f"{name}[{n}] shape {f.shape} does not match image {x.shape[:2]}")
    return flows


class MotionFlowEstimator(BaseEstimator):
    """Per-pixel motion classifier: ``fit(images, flows)`` then ``predict(images)``."""

    def __init__(self, u_max=8, v_max=8, arch="toy", lr=1e-2, momentum=0.9, epochs=10,
                 loss_mode="mean", seed=0, time_budget=None):
        self.u_max = u_max
        self.v_max = v_max
        self.arch = arch
        self.lr = lr
        self.momentum = momentum
        self.epochs = epochs
        self.loss_mode = loss_mode
        self.seed = seed
        self.time_budget = time_budget

    def fit(self, X, y):
        images = check_images(X)
        flows = check_flows(y, images, "y")
        dom = FlowDomain(self.u_max, self.v_max)
        for n, f in enumerate(flows):
            if not f.in_domain(dom):
                raise ValueError(f"y[{n}] has motions outside the domain")
        if self.arch not in PRESETS:
            raise ValueError(f"arch must be one of {sorted(PRESETS)}")
        cfg = TrainConfig(lr=self.lr, momentum=self.momentum, epochs=self.epochs,
                          seed=self.seed, loss_mode=self.loss_mode)
        result = train(list(zip(images, flows)), PRESETS[self.arch](dom), cfg, time_budget=self.time_budget)
        self.params_ = result.params
        self.dom_ = dom
        self.epoch_loss_ = list(result.epoch_loss)
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("MotionFlowEstimator is not fitted; call fit first")

    def predict(self, X) -> list[MotionFlow]:
        self._check_fitted()
        return [estimate_flow(self.params_, x, self.dom_) for x in check_images(X)]

    def predict_proba(self, X) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per-pixel (P_u, P_v) distributions; inputs must already be stride-aligned."""
        self._check_fitted()
        return [forward(self.params_, x) for x in check_images(X)]

    def score(self, X, y) -> float:
        """Negative mean flow MSE, so that larger is better."""
        images = check_images(X)
        flows = check_flows(y, images, "y")
        return -float(np.mean([flow_mse(e, f) for e, f in zip(self.predict(images), flows)]))


class NonBlindDeblurrer(TransformerMixin, BaseEstimator):
    """Deconvolves blurred images given their flows: ``transform(X, flows=...)``."""

    def __init__(self, alpha=2 / 3, lam=2e-3, beta_max=256.0, cg_tol=1e-6, cg_max_iters=200,
                 channels="per-channel"):
        self.alpha = alpha
        self.lam = lam
        self.beta_max = beta_max
        self.cg_tol = cg_tol
        self.cg_max_iters = cg_max_iters
        self.channels = channels

    def _config(self) -> DeconvConfig:
        return DeconvConfig(alpha=self.alpha, lam=self.lam, beta_max=self.beta_max, cg_tol=self.cg_tol,
                            cg_max_iters=self.cg_max_iters, channels=self.channels)

    def fit(self, X=None, y=None):
        self.config_ = self._config()
        return self

    def transform(self, X, flows=None):
        if flows is None:
            raise ValueError("NonBlindDeblurrer.transform needs flows=")
        cfg = getattr(self, "config_", None) or self._config()
        images = check_images(X)
        flows = check_flows(flows, images)
        return [deblur(x, f, cfg) for x, f in zip(images, flows)]
