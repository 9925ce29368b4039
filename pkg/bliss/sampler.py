import numpy as np


class GaussianSampler:
    """Rounded continuous Gaussian as a discrete Gaussian approximation
    centered at zero."""

    def __init__(self, sigma: float, rng: np.random.Generator):
        if not sigma > 0:
            raise ValueError(f'sigma must be positive: {sigma}')
        self.sigma = sigma
        self.rng = rng

    def sample(self, n: int) -> np.ndarray:
        if n < 1:
            raise ValueError(f'sample size must be at least 1: {n}')
        return np.rint(self.rng.normal(0.0, self.sigma, n)).astype(np.int64)


def sample_gaussian(sampler: GaussianSampler, n: int) -> np.ndarray:
    return sampler.sample(n)
