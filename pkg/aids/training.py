import enum
import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from aids.dcrnn import DcrnnModel
from traffic.images import FeatureScaler, rescale_to_image


class SingleClass(ValueError):
    pass


class Verdict(enum.Enum):
    NORMAL = 'Normal'
    MALICIOUS = 'Malicious'


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 20
    batch_size: int = 16
    seed: int = 0
    momentum: float = 0.9

    def __post_init__(self):
        if self.learning_rate < 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError(f'invalid training configuration: {self}')
        if not 0 <= self.momentum < 1:
            raise ValueError(f'momentum must lie in [0, 1): {self.momentum}')


def train(model: DcrnnModel, images: np.ndarray, labels: np.ndarray,
          config: TrainConfig) -> Tuple[DcrnnModel, List[float]]:
    """Mini-batch SGD with momentum on a copy of `model`.

    Returns the trained copy and the full-set loss after every epoch."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(np.unique(labels)) < 2:
        logging.error('Training set holds a single class')
        raise SingleClass('training needs both normal and malicious samples')
    model = model.copy()
    rng = np.random.default_rng(config.seed)
    velocity = {name: np.zeros_like(v) for name, v in model.params.items()}
    losses = list()
    for epoch in range(config.epochs):
        order = rng.permutation(len(labels))
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            _, grads = model.loss_and_gradients(images[batch], labels[batch])
            for name, grad in grads.items():
                velocity[name] = config.momentum * velocity[name] - config.learning_rate * grad
                model.params[name] += velocity[name]
        losses.append(model.loss(images, labels))
        logging.debug(f'Epoch {epoch + 1}/{config.epochs}: loss {losses[-1]:.6f}')
    logging.info(f'Trained model for {config.epochs} epochs, final loss {losses[-1]:.4f}')
    return model, losses


def accuracy(model: DcrnnModel, images: np.ndarray, labels: np.ndarray) -> float:
    probs = model.forward(images)
    predicted = (probs[:, 1] > probs[:, 0]).astype(np.int64)
    return float((predicted == np.asarray(labels)).mean())


def grad_check(model: DcrnnModel, image: np.ndarray, label: int, eps: float = 1e-5) -> float:
    """Largest relative difference between analytic and central-difference
    gradients over every parameter entry."""
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f'eps must lie in [1e-7, 1e-3]: {eps}')
    images = np.asarray(image, dtype=np.float64)[None]
    labels = np.array([label])
    _, analytic = model.loss_and_gradients(images, labels)
    perturbed = model.copy()
    worst = 0.0
    for name, values in perturbed.params.items():
        flat = values.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            up = perturbed.loss(images, labels)
            flat[i] = original - eps
            down = perturbed.loss(images, labels)
            flat[i] = original
            numeric = (up - down) / (2 * eps)
            exact = analytic[name].reshape(-1)[i]
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-12)
            worst = max(worst, error)
    return worst


def malicious_probability(model: DcrnnModel, fv, scaler: FeatureScaler) -> Tuple[float, float]:
    s = model.shape
    image = rescale_to_image(fv, scaler, s.width, s.height)
    p_normal, p_malicious = model.forward(image.as_array())[0]
    return float(p_normal), float(p_malicious)


def classify_suspicious(model: DcrnnModel, fv, scaler: FeatureScaler) -> Verdict:
    p_normal, p_malicious = malicious_probability(model, fv, scaler)
    # Equal probabilities stay Normal.
    if p_malicious > p_normal:
        return Verdict.MALICIOUS
    return Verdict.NORMAL
