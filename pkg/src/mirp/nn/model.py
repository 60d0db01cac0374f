"""Physical front end + digital CNN backend."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .layers import (Conv1d, CwFrontEnd, DecimatingFrontEnd, Dense, Flatten,
                     Layer, MaxPool1d, PhysicalLayer, ReLU, softmax_xent)

MODES = ("mirp", "untrained", "conventional")


@dataclass(frozen=True)
class ModelSpec:
    mode: str
    channels: int  # J
    length: int  # M
    classes: int  # C
    modes: int = 16  # L
    k: int = 1
    gamma: float = 2 * np.pi * 2e9
    dt: float = 0.5e-9
    scale: int = 4
    train_gamma: bool = False
    average_decimation: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown sensing mode {self.mode!r}")
        if self.k < 1 or self.scale < 1:
            raise ValueError("k and scale must be >= 1")

    @property
    def filters(self):
        return max(1, 128 // self.scale)

    @property
    def fc_units(self):
        return max(1, 512 // self.scale), max(1, 128 // self.scale)

    @property
    def readouts(self):
        return self.length // self.k

    @property
    def feature_channels(self):
        return self.channels * self.modes if self.mode == "mirp" else self.channels

    def to_dict(self):
        return asdict(self)


class Model:
    """``front`` maps envelopes to readout features; ``back`` is the digital
    stack (the physical-layer ReLU belongs to it, since it is applied to the
    digitized, possibly noisy, measurements)."""

    def __init__(self, spec: ModelSpec, seed: int = 0):
        self.spec = spec
        rng = np.random.default_rng(seed)
        s = spec
        if s.mode == "mirp":
            self.front = PhysicalLayer(s.channels, s.modes, s.length, s.k, s.gamma, s.dt,
                                       rng=rng, train_gamma=s.train_gamma)
        elif s.mode == "untrained":
            self.front = CwFrontEnd(s.channels, s.length, s.k, s.gamma, s.dt)
        else:
            self.front = DecimatingFrontEnd(s.channels, s.length, s.k, s.average_decimation)
        f = s.filters
        u1, u2 = s.fc_units
        back: list[tuple[str, Layer]] = []
        if s.mode != "conventional":
            back.append(("relu0", ReLU()))
        back += [
            ("conv1", Conv1d(s.feature_channels, f, 3, rng=rng)), ("relu1", ReLU()),
            ("pool1", MaxPool1d(3, 1)),
            ("conv2", Conv1d(f, f, 3, rng=rng)), ("relu2", ReLU()),
            ("pool2", MaxPool1d(3, 1)),
            ("flat", Flatten()),
            ("fc1", Dense(f * s.readouts, u1, rng=rng)), ("relu3", ReLU()),
            ("fc2", Dense(u1, u2, rng=rng)), ("relu4", ReLU()),
            ("fc3", Dense(u2, s.classes, rng=rng)),
        ]
        # a zero output layer starts every run at loss log C; He-scaled logits
        # at narrow desk widths can kill the small fc2 layer on the first step
        back[-1][1].params["W"][:] = 0.0
        self.back = back

    def named_layers(self):
        yield "phys", self.front
        yield from self.back

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {f"{ln}.{pn}": p for ln, layer in self.named_layers() for pn, p in layer.params.items()}

    @property
    def grads(self) -> dict[str, np.ndarray]:
        return {f"{ln}.{pn}": g for ln, layer in self.named_layers() for pn, g in layer.grads.items()}

    def set_params(self, values: dict[str, np.ndarray]):
        own = self.params
        if set(values) != set(own):
            raise KeyError(f"parameter names differ: {sorted(set(values) ^ set(own))}")
        for ln, layer in self.named_layers():
            for pn in layer.params:
                arr = np.asarray(values[f"{ln}.{pn}"], dtype=np.float64)
                if arr.shape != layer.params[pn].shape:
                    raise ValueError(f"{ln}.{pn}: shape {arr.shape} != {layer.params[pn].shape}")
                layer.params[pn] = arr.copy()

    def features(self, x):
        return self.front.forward(np.asarray(x, dtype=np.float64))

    def classify(self, feats):
        h = feats
        for _, layer in self.back:
            h = layer.forward(h)
        return h

    def forward(self, x):
        return self.classify(self.features(x))

    def predict(self, x, batch=256):
        out = [self.forward(x[i:i + batch]).argmax(axis=1) for i in range(0, len(x), batch)]
        return np.concatenate(out) if out else np.zeros(0, dtype=int)

    def predict_features(self, feats, batch=256):
        out = [self.classify(feats[i:i + batch]).argmax(axis=1) for i in range(0, len(feats), batch)]
        return np.concatenate(out) if out else np.zeros(0, dtype=int)

    def backward(self, grad):
        for _, layer in reversed(self.back):
            grad = layer.backward(grad)
        self.front.backward(grad)

    def loss_and_grads(self, x, y):
        for _, layer in self.named_layers():
            layer.zero_grad()
        logits = self.forward(x)
        loss, g = softmax_xent(logits, y)
        self.backward(g)
        return loss, self.grads
