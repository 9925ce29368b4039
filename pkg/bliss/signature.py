"""Simulation-grade bimodal lattice signatures.

A key pair is a public matrix G and vector T = G.s (mod 2p) for a ternary
secret s. Signing masks the challenge-scaled secret with a rounded Gaussian
vector and keeps the result only with the bimodal rejection probability, so
that accepted signatures do not reveal s. No constant-time behaviour or
production security is claimed.
"""
import hashlib
import logging
import math
import struct
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from bliss.sampler import GaussianSampler
from utils.helper_functions import length_prefixed

DIGEST_SIZE = 32
WIRE_HEADER = struct.Struct('<B32sI')


class InvalidParams(ValueError):
    pass


class RetryLimit(RuntimeError):
    pass


@dataclass(frozen=True)
class SignParams:
    n: int = 64
    m: int = 64
    modulus: int = 2048
    sigma: float = 64.0
    M: float = 3.0
    bound: Optional[float] = None
    kappa: int = 11
    retry_limit: int = 64

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise InvalidParams(f'dimensions must be positive: n={self.n} m={self.m}')
        if self.modulus < 2 or self.modulus % 2:
            raise InvalidParams(f'modulus must be even: {self.modulus}')
        if not self.sigma > 0 or not self.M > 1:
            raise InvalidParams(f'need sigma > 0 and M > 1: sigma={self.sigma} M={self.M}')
        if self.kappa < 1 or self.retry_limit < 1 or self.norm_bound <= 0:
            raise InvalidParams('kappa, retry_limit and bound must be positive')

    @property
    def norm_bound(self) -> float:
        if self.bound is None:
            return 8 * self.sigma
        return self.bound

    @property
    def challenge_range(self) -> int:
        return min(self.kappa, self.modulus - 1)


@dataclass(frozen=True)
class KeyPair:
    G: np.ndarray
    s: np.ndarray
    T: np.ndarray

    def public(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.G, self.T


@dataclass(frozen=True)
class Signature:
    S: Tuple[int, ...]
    F: bytes
    re: int


def keygen(params: SignParams, seed: int) -> KeyPair:
    rng = np.random.default_rng(seed)
    G = rng.integers(0, params.modulus, size=(params.n, params.m), dtype=np.int64)
    s = np.zeros(params.m, dtype=np.int64)
    while not s.any():
        s = rng.integers(-1, 2, size=params.m, dtype=np.int64)
    T = (G @ s) % params.modulus
    return KeyPair(G, s, T)


def commitment_digest(u: np.ndarray, message: bytes) -> bytes:
    return hashlib.sha256(length_prefixed(u.astype('<i8').tobytes(), message)).digest()


def challenge(G: np.ndarray, d: np.ndarray, message: bytes, params: SignParams) -> bytes:
    u = (G @ np.asarray(d, dtype=np.int64)) % params.modulus
    return commitment_digest(u, message)


def challenge_scalar(F: bytes, params: SignParams) -> int:
    """Reduce a digest to f in [1, min(kappa, 2p-1)]."""
    return 1 + int.from_bytes(F, 'big') % params.challenge_range


def symmetric_mod(values: np.ndarray, modulus: int) -> np.ndarray:
    """Representatives in (-modulus/2, modulus/2]."""
    reduced = np.mod(values, modulus)
    return np.where(reduced > modulus // 2, reduced - modulus, reduced)


def log_cosh(x: float) -> float:
    return float(np.logaddexp(x, -x)) - math.log(2.0)


def acceptance_probability(S: np.ndarray, Kc: np.ndarray, params: SignParams) -> float:
    """1 / (M exp(-|Kc|^2 / 2s^2) cosh(<S, Kc> / s^2)), evaluated in the log domain."""
    var = params.sigma ** 2
    log_p = -math.log(params.M) + float(Kc @ Kc) / (2 * var) - log_cosh(float(S @ Kc) / var)
    return min(1.0, math.exp(min(log_p, 0.0)))


def sign_attempt(keys: KeyPair, params: SignParams, message: bytes,
                 rng: np.random.Generator) -> Optional[Signature]:
    """One round of the signing loop; None when the round is rejected."""
    d = GaussianSampler(params.sigma, rng).sample(params.m)
    F = challenge(keys.G, d, message, params)
    f = challenge_scalar(F, params)
    Kc = symmetric_mod(f * keys.s, params.modulus)
    re = int(rng.integers(0, 2))
    S = d + (-1) ** re * Kc
    if rng.random() >= acceptance_probability(S, Kc, params):
        return None
    if np.abs(S).max() > params.norm_bound:
        return None
    return Signature(tuple(int(v) for v in S), F, re)


def sign(keys: KeyPair, params: SignParams, message: bytes, rng: np.random.Generator) -> Signature:
    for attempt in range(params.retry_limit):
        sig = sign_attempt(keys, params, message, rng)
        if sig is not None:
            if attempt:
                logging.debug(f'Signature accepted after {attempt + 1} attempts')
            return sig
    logging.error(f'Signing gave up after {params.retry_limit} attempts')
    raise RetryLimit(f'no signature accepted in {params.retry_limit} attempts')


def verify(public: Tuple[np.ndarray, np.ndarray], params: SignParams, message: bytes, sig) -> bool:
    """Check a Signature or its wire encoding against the public key (G, T)."""
    if isinstance(sig, (bytes, bytearray)):
        try:
            sig = decode_signature(bytes(sig))
        except ValueError as e:
            logging.debug(f'Undecodable signature: {e}')
            return False
    G, T = public
    if sig.re not in (0, 1) or len(sig.F) != DIGEST_SIZE or len(sig.S) != params.m:
        return False
    S = np.asarray(sig.S, dtype=np.int64)
    if np.abs(S).max() > params.norm_bound:
        return False
    f = challenge_scalar(sig.F, params)
    u = (G @ S - (-1) ** sig.re * f * T) % params.modulus
    return commitment_digest(u, message) == sig.F


def encode_signature(sig: Signature) -> bytes:
    body = np.asarray(sig.S, dtype='<i4').tobytes()
    return WIRE_HEADER.pack(sig.re, sig.F, len(sig.S)) + body


def decode_signature(data: bytes) -> Signature:
    if len(data) < WIRE_HEADER.size:
        raise ValueError(f'signature too short: {len(data)} bytes')
    re, F, m = WIRE_HEADER.unpack_from(data)
    if len(data) != WIRE_HEADER.size + 4 * m:
        raise ValueError(f'signature declares {m} entries but carries {len(data) - WIRE_HEADER.size} bytes')
    if re not in (0, 1):
        raise ValueError(f'invalid bimodal bit: {re}')
    S = np.frombuffer(data, dtype='<i4', offset=WIRE_HEADER.size)
    return Signature(tuple(int(v) for v in S), F, re)
