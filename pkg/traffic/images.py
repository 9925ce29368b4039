import logging
from dataclasses import dataclass

import numpy as np
from sklearn.preprocessing import MinMaxScaler

from traffic.flows import Dataset, dataset_matrix

DEFAULT_WIDTH = 8
DEFAULT_HEIGHT = 8
PIXEL_MAX = 255


class TooSmall(ValueError):
    pass


@dataclass(frozen=True)
class ByteImage:
    width: int
    height: int
    pixels: bytes

    def __post_init__(self):
        if len(self.pixels) != self.width * self.height:
            raise ValueError(f'{len(self.pixels)} pixels do not fill a {self.width}x{self.height} image')

    def as_array(self) -> np.ndarray:
        """Row-major (height, width) uint8 view."""
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.height, self.width)


class FeatureScaler:
    """Per-feature min-max scaling to [0, 255], fitted on a training split
    and reused unchanged for every later vector."""

    def __init__(self, scaler: MinMaxScaler):
        self.scaler = scaler
        self.constant = scaler.data_range_ == 0

    @property
    def n_features(self) -> int:
        return int(self.scaler.n_features_in_)

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise ValueError(f'Expected {self.n_features} features, got {X.shape[1]}')
        scaled = self.scaler.transform(X)
        scaled[:, self.constant] = 0.0
        # Round half up; clip keeps floating error inside the byte range.
        return np.clip(np.floor(scaled + 0.5), 0, PIXEL_MAX).astype(np.uint8)


def fit_scaler(train: Dataset) -> FeatureScaler:
    X, _ = dataset_matrix(train)
    if X.shape[0] == 0:
        raise ValueError('Cannot fit a scaler on an empty dataset')
    scaler = MinMaxScaler(feature_range=(0, PIXEL_MAX), clip=True)
    scaler.fit(X)
    fs = FeatureScaler(scaler)
    if fs.constant.any():
        logging.info(f'{int(fs.constant.sum())} constant features map to pixel 0')
    return fs


def check_shape(n_features: int, width: int, height: int) -> None:
    if width < 1 or height < 1 or width * height < n_features:
        logging.error(f'{width}x{height} image cannot hold {n_features} features')
        raise TooSmall(f'{width}x{height} < {n_features}')


def rescale_to_image(fv, scaler: FeatureScaler, width: int = DEFAULT_WIDTH,
                     height: int = DEFAULT_HEIGHT) -> ByteImage:
    fv = np.asarray(fv, dtype=np.float64)
    check_shape(fv.shape[0], width, height)
    pixels = np.zeros(width * height, dtype=np.uint8)
    pixels[:fv.shape[0]] = scaler.transform(fv)[0]
    return ByteImage(width, height, pixels.tobytes())


def matrix_images(X: np.ndarray, scaler: FeatureScaler, width: int = DEFAULT_WIDTH,
                  height: int = DEFAULT_HEIGHT) -> np.ndarray:
    """Vectorized rescale_to_image over the rows of X: (N, height, width) uint8."""
    X = np.atleast_2d(X)
    check_shape(X.shape[1], width, height)
    pixels = np.zeros((X.shape[0], width * height), dtype=np.uint8)
    if X.shape[0]:
        pixels[:, :X.shape[1]] = scaler.transform(X)
    return pixels.reshape(X.shape[0], height, width)


def dataset_images(dataset: Dataset, scaler: FeatureScaler, width: int = DEFAULT_WIDTH,
                   height: int = DEFAULT_HEIGHT):
    X, y = dataset_matrix(dataset)
    return matrix_images(X, scaler, width, height), y
