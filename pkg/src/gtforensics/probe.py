"""Linear probe on frozen features: standardized inputs, softmax regression."""
from __future__ import annotations

import numpy as np

from .data.metrics import accuracy
from .layers import wrap
from .numerics import log_softmax, tsum
from .optim import Adam


def linear_probe(train_x: np.ndarray, train_y, test_x: np.ndarray, test_y,
                 epochs: int = 300, lr: float = 0.05, l2: float = 1e-3) -> dict:
    mu, sd = train_x.mean(axis=0), train_x.std(axis=0) + 1e-8
    xs, xt = (train_x - mu) / sd, (test_x - mu) / sd
    train_y, test_y = np.asarray(train_y, dtype=int), np.asarray(test_y, dtype=int)
    params = {"w": np.zeros((xs.shape[1], 2)), "b": np.zeros(2)}
    onehot = np.eye(2)[train_y]
    opt = Adam(params)
    for _ in range(epochs):
        p = wrap(params, requires_grad=True)
        lp = log_softmax(xs @ p["w"] + p["b"], axis=-1)
        loss = tsum(lp * onehot) * (-1.0 / len(xs)) + tsum(p["w"] * p["w"]) * l2
        loss.backward()
        opt.step(params, {k: t.grad for k, t in p.items()}, lr)
    pred = lambda x: np.argmax(x @ params["w"] + params["b"], axis=1)
    return {"train_accuracy": accuracy(pred(xs), train_y),
            "test_accuracy": accuracy(pred(xt), test_y)}
