"""Convolution + gated recurrent classifier for suspicious packets.

A byte image passes through one convolution layer with tanh activation
and max pooling. Each pooled row (all filters side by side) is one time
step of a gated recurrent cell whose update gate carries an extra learned
projection of the input. The final state feeds a dense layer with two
logits and a softmax over (normal, malicious).

Forward and backward passes are batched numpy; the leading axis is the
batch.
"""
import logging
import os
import struct
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, log_softmax, softmax

MODEL_MAGIC = b'DCR1'
MODEL_FORMAT_VERSION = 1
MODEL_HEADER = struct.Struct('<9I')
PARAM_NAMES = ('conv_w', 'conv_b', 'w_c', 'w_b', 'w', 'proj', 'b_c', 'b_b', 'b_h', 'dense_w', 'dense_b')
N_CLASSES = 2


class NonIntegral(ValueError):
    pass


class NonPositive(ValueError):
    pass


class DimMismatch(ValueError):
    pass


class ModelFileError(ValueError):
    pass


def conv_output_len(I_l: int, Kr: int, Q: int, SK: int) -> int:
    if SK < 1:
        raise NonPositive(f'stride must be at least 1: {SK}')
    span = I_l - Kr + 2 * Q
    if span < 0:
        raise NonPositive(f'kernel {Kr} does not fit input {I_l} with padding {Q}')
    if span % SK:
        raise NonIntegral(f'({I_l} - {Kr} + 2*{Q}) / {SK} is not an integer')
    return span // SK + 1


def sigmoid(t):
    return expit(t)


def tanh_act(t):
    return np.tanh(t)


@dataclass(frozen=True)
class ModelShape:
    height: int = 8
    width: int = 8
    filters: int = 8
    kernel: int = 3
    padding: int = 1
    stride: int = 1
    pool: int = 2
    hidden: int = 16

    @property
    def conv_shape(self) -> Tuple[int, int]:
        return (conv_output_len(self.height, self.kernel, self.padding, self.stride),
                conv_output_len(self.width, self.kernel, self.padding, self.stride))

    @property
    def pooled_shape(self) -> Tuple[int, int]:
        rows, cols = self.conv_shape
        if rows % self.pool or cols % self.pool:
            raise NonIntegral(f'{rows}x{cols} feature map does not pool by {self.pool}')
        return rows // self.pool, cols // self.pool

    @property
    def steps(self) -> int:
        return self.pooled_shape[0]

    @property
    def input_size(self) -> int:
        return self.filters * self.pooled_shape[1]

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        H, D, K, Kr = self.hidden, self.input_size, self.filters, self.kernel
        return {'conv_w': (K, Kr, Kr), 'conv_b': (K,),
                'w_c': (H, H + D), 'w_b': (H, H + D), 'w': (H, H + D), 'proj': (H, D),
                'b_c': (H,), 'b_b': (H,), 'b_h': (H,),
                'dense_w': (N_CLASSES, H), 'dense_b': (N_CLASSES,)}


@dataclass
class GruCell:
    w_c: np.ndarray
    w_b: np.ndarray
    w: np.ndarray
    proj: np.ndarray
    b_c: np.ndarray
    b_b: np.ndarray
    b_h: np.ndarray

    @property
    def hidden(self) -> int:
        return self.w_c.shape[0]

    @property
    def input_size(self) -> int:
        return self.proj.shape[1]


def gru_step(cell: GruCell, y_t: np.ndarray, I_prev: np.ndarray, cache: dict = None) -> np.ndarray:
    """One recurrent step on a single vector or a batch of row vectors."""
    H, D = cell.hidden, cell.input_size
    if y_t.shape[-1] != D or I_prev.shape[-1] != H or y_t.shape[:-1] != I_prev.shape[:-1]:
        raise DimMismatch(f'input {y_t.shape} / state {I_prev.shape} do not fit a {H}-unit cell '
                          f'with {D} inputs')
    x1 = np.concatenate([I_prev, y_t], axis=-1)
    c = sigmoid(x1 @ cell.w_c.T + y_t @ cell.proj.T + cell.b_c)
    b = sigmoid(x1 @ cell.w_b.T + cell.b_b)
    x2 = np.concatenate([b * I_prev, y_t], axis=-1)
    candidate = tanh_act(x2 @ cell.w.T + cell.b_h)
    I_t = (1 - c) * I_prev + c * candidate
    if cache is not None:
        cache.update(I_prev=I_prev, y=y_t, x1=x1, x2=x2, c=c, b=b, candidate=candidate)
    return I_t


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=shape)


class DcrnnModel:

    def __init__(self, shape: ModelShape, params: Dict[str, np.ndarray]):
        expected = shape.param_shapes()
        for name in PARAM_NAMES:
            if name not in params or params[name].shape != expected[name]:
                raise DimMismatch(f'parameter {name} must have shape {expected[name]}')
        self.shape = shape
        self.params = {name: np.asarray(params[name], dtype=np.float64) for name in PARAM_NAMES}

    @classmethod
    def initialize(cls, shape: ModelShape, seed: int) -> 'DcrnnModel':
        rng = np.random.default_rng(seed)
        shapes = shape.param_shapes()
        H, D, K, Kr = shape.hidden, shape.input_size, shape.filters, shape.kernel
        params = {'conv_w': glorot(rng, shapes['conv_w'], Kr * Kr, K * Kr * Kr),
                  'w_c': glorot(rng, shapes['w_c'], H + D, H),
                  'w_b': glorot(rng, shapes['w_b'], H + D, H),
                  'w': glorot(rng, shapes['w'], H + D, H),
                  'proj': glorot(rng, shapes['proj'], D, H),
                  'dense_w': glorot(rng, shapes['dense_w'], H, N_CLASSES)}
        for name in ('conv_b', 'b_c', 'b_b', 'b_h', 'dense_b'):
            params[name] = np.zeros(shapes[name])
        return cls(shape, params)

    @classmethod
    def zeros(cls, shape: ModelShape) -> 'DcrnnModel':
        return cls(shape, {name: np.zeros(s) for name, s in shape.param_shapes().items()})

    def cell(self) -> GruCell:
        p = self.params
        return GruCell(p['w_c'], p['w_b'], p['w'], p['proj'], p['b_c'], p['b_b'], p['b_h'])

    def copy(self) -> 'DcrnnModel':
        return DcrnnModel(self.shape, {k: v.copy() for k, v in self.params.items()})

    def prepare(self, images) -> np.ndarray:
        X = np.asarray(images, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        if X.shape[1:] != (self.shape.height, self.shape.width):
            raise DimMismatch(f'images of shape {X.shape[1:]} do not match model input '
                              f'{(self.shape.height, self.shape.width)}')
        return X / 255.0

    def conv_forward(self, X: np.ndarray):
        s = self.shape
        Q, SK, pool = s.padding, s.stride, s.pool
        padded = np.pad(X, ((0, 0), (Q, Q), (Q, Q)))
        windows = sliding_window_view(padded, (s.kernel, s.kernel), axis=(1, 2))[:, ::SK, ::SK]
        z = np.einsum('nijab,kab->nkij', windows, self.params['conv_w']) \
            + self.params['conv_b'][None, :, None, None]
        if z.shape[2:] != s.conv_shape:
            raise DimMismatch(f'convolution produced {z.shape[2:]}, expected {s.conv_shape}')
        a = tanh_act(z)
        N, K, rows, cols = a.shape
        blocks = a.reshape(N, K, rows // pool, pool, cols // pool, pool)
        pooled = blocks.max(axis=(3, 5))
        return windows, a, blocks, pooled

    def logits(self, X: np.ndarray, caches: list = None):
        windows, a, blocks, pooled = self.conv_forward(X)
        N, K, steps, cols = pooled.shape
        seq = pooled.transpose(0, 2, 1, 3).reshape(N, steps, K * cols)
        cell = self.cell()
        state = np.zeros((N, self.shape.hidden))
        step_caches = list()
        for t in range(steps):
            cache = dict() if caches is not None else None
            state = gru_step(cell, seq[:, t, :], state, cache)
            step_caches.append(cache)
        out = state @ self.params['dense_w'].T + self.params['dense_b']
        if caches is not None:
            caches.append(dict(windows=windows, a=a, blocks=blocks, pooled=pooled, steps=step_caches,
                               final=state))
        return out

    def forward(self, images) -> np.ndarray:
        """Class probabilities (p_normal, p_malicious) for each image."""
        return softmax(self.logits(self.prepare(images)), axis=1)

    def loss(self, images, labels) -> float:
        X = self.prepare(images)
        y = np.asarray(labels, dtype=np.int64)
        return float(-log_softmax(self.logits(X), axis=1)[np.arange(len(y)), y].mean())

    def loss_and_gradients(self, images, labels):
        """Mean cross-entropy over the batch and its gradient for every parameter."""
        X = self.prepare(images)
        y = np.asarray(labels, dtype=np.int64)
        N = len(y)
        caches = list()
        logits = self.logits(X, caches)
        cache = caches[0]
        log_p = log_softmax(logits, axis=1)
        loss = float(-log_p[np.arange(N), y].mean())

        p = self.params
        grads = {name: np.zeros_like(v) for name, v in p.items()}
        d_logits = np.exp(log_p)
        d_logits[np.arange(N), y] -= 1.0
        d_logits /= N
        grads['dense_w'] = d_logits.T @ cache['final']
        grads['dense_b'] = d_logits.sum(axis=0)
        d_state = d_logits @ p['dense_w']

        H = self.shape.hidden
        step_caches = cache['steps']
        d_seq = np.zeros((N, len(step_caches), self.shape.input_size))
        for t in reversed(range(len(step_caches))):
            sc = step_caches[t]
            I_prev, c, b, cand = sc['I_prev'], sc['c'], sc['b'], sc['candidate']
            d_c = d_state * (cand - I_prev)
            d_cand = d_state * c
            d_prev = d_state * (1 - c)

            d_zh = d_cand * (1 - cand ** 2)
            grads['w'] += d_zh.T @ sc['x2']
            grads['b_h'] += d_zh.sum(axis=0)
            d_x2 = d_zh @ p['w']
            d_gated = d_x2[:, :H]
            d_y = d_x2[:, H:]
            d_b = d_gated * I_prev
            d_prev += d_gated * b

            d_zb = d_b * b * (1 - b)
            grads['w_b'] += d_zb.T @ sc['x1']
            grads['b_b'] += d_zb.sum(axis=0)
            d_x1 = d_zb @ p['w_b']

            d_zc = d_c * c * (1 - c)
            grads['w_c'] += d_zc.T @ sc['x1']
            grads['proj'] += d_zc.T @ sc['y']
            grads['b_c'] += d_zc.sum(axis=0)
            d_x1 += d_zc @ p['w_c']
            d_y = d_y + d_zc @ p['proj']

            d_prev += d_x1[:, :H]
            d_seq[:, t, :] = d_y + d_x1[:, H:]
            d_state = d_prev

        pooled, blocks, a = cache['pooled'], cache['blocks'], cache['a']
        _, K, steps, cols = pooled.shape
        pool = self.shape.pool
        d_pooled = d_seq.reshape(N, steps, K, cols).transpose(0, 2, 1, 3)
        # Ties route the gradient to the first maximum only.
        flat = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(N, K, steps, cols, pool * pool)
        winner = np.eye(pool * pool, dtype=bool)[flat.argmax(axis=-1)]
        routed = (winner * d_pooled[..., None]).reshape(N, K, steps, cols, pool, pool)
        d_a = routed.transpose(0, 1, 2, 4, 3, 5).reshape(a.shape)
        d_z = d_a * (1 - a ** 2)
        grads['conv_b'] = d_z.sum(axis=(0, 2, 3))
        grads['conv_w'] = np.einsum('nijab,nkij->kab', cache['windows'], d_z)
        return loss, grads


def save_model(model: DcrnnModel, path: str) -> None:
    s = model.shape
    with open(path, 'wb') as f:
        f.write(MODEL_MAGIC)
        f.write(MODEL_HEADER.pack(MODEL_FORMAT_VERSION, s.height, s.width, s.filters, s.kernel,
                                  s.padding, s.stride, s.pool, s.hidden))
        for name in PARAM_NAMES:
            f.write(model.params[name].astype('<f8').tobytes())
    logging.info(f'Saved model to {path}')


def load_model(path: str) -> DcrnnModel:
    if not os.path.exists(path):
        logging.error(f'Model file does not exist: {path}')
        raise FileNotFoundError(path)
    with open(path, 'rb') as f:
        data = f.read()
    if data[:len(MODEL_MAGIC)] != MODEL_MAGIC:
        logging.error(f'Not a model file: {path}')
        raise ModelFileError(f'bad magic in {path}')
    offset = len(MODEL_MAGIC)
    version, *dims = MODEL_HEADER.unpack_from(data, offset)
    if version != MODEL_FORMAT_VERSION:
        raise ModelFileError(f'unsupported model format version {version}')
    shape = ModelShape(*dims)
    offset += MODEL_HEADER.size
    params = dict()
    for name, dims in shape.param_shapes().items():
        count = int(np.prod(dims))
        if offset + 8 * count > len(data):
            raise ModelFileError(f'{path} is truncated at parameter {name}')
        params[name] = np.frombuffer(data, dtype='<f8', count=count, offset=offset).reshape(dims).copy()
        offset += 8 * count
    if offset != len(data):
        raise ModelFileError(f'{path} has {len(data) - offset} trailing bytes')
    return DcrnnModel(shape, params)
