import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bliss.sampler import GaussianSampler, sample_gaussian
from bliss.signature import (InvalidParams, RetryLimit, SignParams, Signature, challenge, challenge_scalar,
                             decode_signature, encode_signature, keygen, sign, sign_attempt, verify)

PARAMS = SignParams()


@pytest.fixture(scope='module')
def keys():
    return keygen(PARAMS, 11)


def test_keygen_is_deterministic_and_consistent():
    first, second = keygen(PARAMS, 5), keygen(PARAMS, 5)
    assert np.array_equal(first.G, second.G)
    assert np.array_equal(first.s, second.s)
    assert np.array_equal(first.T, (first.G @ first.s) % PARAMS.modulus)
    assert set(np.unique(first.s)) <= {-1, 0, 1}
    assert first.s.any()


def test_public_keys_differ_across_seeds():
    publics = {keygen(PARAMS, seed).T.tobytes() for seed in range(100)}
    assert len(publics) == 100


@pytest.mark.parametrize('kwargs', [dict(modulus=2047), dict(n=0), dict(sigma=0.0), dict(M=1.0),
                                    dict(bound=-1.0), dict(kappa=0)])
def test_invalid_params(kwargs):
    with pytest.raises(InvalidParams):
        SignParams(**kwargs)


def test_sampler_mean_and_determinism():
    draws = sample_gaussian(GaussianSampler(1.0, np.random.default_rng(3)), 100_000)
    assert abs(draws.mean()) <= 0.02
    again = sample_gaussian(GaussianSampler(1.0, np.random.default_rng(3)), 100_000)
    assert np.array_equal(draws, again)
    assert draws.dtype == np.int64


def test_sampler_variance():
    sigma = 64.0
    draws = sample_gaussian(GaussianSampler(sigma, np.random.default_rng(4)), 100_000)
    assert abs(draws.var() - sigma ** 2) <= 0.05 * sigma ** 2


def test_sampler_rounds_normal_draws_without_a_tail_cut():
    draws = sample_gaussian(GaussianSampler(2.5, np.random.default_rng(11)), 1000)
    expected = np.rint(np.random.default_rng(11).normal(0.0, 2.5, 1000)).astype(np.int64)
    assert np.array_equal(draws, expected)


def test_sampler_rejects_bad_arguments():
    with pytest.raises(ValueError):
        GaussianSampler(0.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        GaussianSampler(1.0, np.random.default_rng(0)).sample(0)


def test_challenge_is_deterministic_and_message_bound(keys):
    rng = np.random.default_rng(8)
    collisions = 0
    for _ in range(1000):
        d = rng.integers(-100, 100, PARAMS.m)
        message = rng.bytes(16)
        F = challenge(keys.G, d, message, PARAMS)
        assert F == challenge(keys.G, d, message, PARAMS)
        altered = bytes([message[0] ^ 1]) + message[1:]
        collisions += F == challenge(keys.G, d, altered, PARAMS)
    assert collisions == 0


@given(st.binary(min_size=32, max_size=32))
def test_challenge_scalar_range(F):
    f = challenge_scalar(F, PARAMS)
    assert 1 <= f <= min(PARAMS.kappa, PARAMS.modulus - 1)
    assert f <= PARAMS.modulus - 1


@pytest.mark.slow
def test_thousand_roundtrips(keys):
    rng = np.random.default_rng(21)
    for i in range(1000):
        message = f'pattern-{i}'.encode()
        sig = sign(keys, PARAMS, message, rng)
        assert np.abs(np.array(sig.S)).max() <= PARAMS.norm_bound
        assert verify(keys.public(), PARAMS, message, sig)
        assert verify(keys.public(), PARAMS, message, encode_signature(sig))


def test_signing_is_deterministic(keys):
    first = sign(keys, PARAMS, b'omega', np.random.default_rng(2))
    second = sign(keys, PARAMS, b'omega', np.random.default_rng(2))
    assert first == second


def test_tampered_message_and_scaled_signature_fail(keys):
    sig = sign(keys, PARAMS, b'omega', np.random.default_rng(6))
    assert not verify(keys.public(), PARAMS, b'omegb', sig)
    scaled = Signature(tuple(10 * v for v in sig.S), sig.F, sig.re)
    if any(sig.S):
        assert not verify(keys.public(), PARAMS, b'omega', scaled)
    flipped = Signature(sig.S, sig.F, 1 - sig.re)
    assert not verify(keys.public(), PARAMS, b'omega', flipped)


def test_malformed_wire_signatures_fail(keys):
    sig = encode_signature(sign(keys, PARAMS, b'omega', np.random.default_rng(6)))
    assert not verify(keys.public(), PARAMS, b'omega', sig[:-1])
    assert not verify(keys.public(), PARAMS, b'omega', b'')
    with pytest.raises(ValueError):
        decode_signature(bytes([2]) + sig[1:])


def test_wire_layout(keys):
    sig = sign(keys, PARAMS, b'omega', np.random.default_rng(6))
    data = encode_signature(sig)
    assert len(data) == 1 + 32 + 4 + 4 * PARAMS.m
    assert data[0] == sig.re
    assert data[1:33] == sig.F
    assert int.from_bytes(data[33:37], 'little') == PARAMS.m
    assert decode_signature(data) == sig


@pytest.mark.slow
def test_single_bit_tampering_is_rejected(keys):
    rng = np.random.default_rng(13)
    trials, rejected = 0, 0
    for i in range(100):
        message = f'entry-{i}'.encode()
        wire = encode_signature(sign(keys, PARAMS, message, rng))
        for _ in range(100):
            trials += 1
            if rng.random() < 0.5:
                bit = int(rng.integers(len(message) * 8))
                tampered = bytearray(message)
                tampered[bit // 8] ^= 1 << (bit % 8)
                ok = verify(keys.public(), PARAMS, bytes(tampered), wire)
            else:
                bit = int(rng.integers(len(wire) * 8))
                tampered = bytearray(wire)
                tampered[bit // 8] ^= 1 << (bit % 8)
                ok = verify(keys.public(), PARAMS, message, bytes(tampered))
            rejected += not ok
    assert trials == 10_000
    assert rejected / trials >= 0.999


@pytest.mark.slow
def test_acceptance_rate_band(keys):
    rng = np.random.default_rng(17)
    accepted = sum(sign_attempt(keys, PARAMS, b'rate', rng) is not None for _ in range(10_000))
    assert 1 / (2 * PARAMS.M) <= accepted / 10_000 <= 1


def test_retry_limit(keys):
    strict = SignParams(bound=1.0, retry_limit=3)
    with pytest.raises(RetryLimit):
        sign(keys, strict, b'omega', np.random.default_rng(0))


@settings(max_examples=25, deadline=None)
@given(st.binary(max_size=64), st.integers(min_value=0, max_value=2 ** 32))
def test_completeness(keys, message, seed):
    sig = sign(keys, PARAMS, message, np.random.default_rng(seed))
    assert verify(keys.public(), PARAMS, message, sig)
