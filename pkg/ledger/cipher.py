"""Tweakable block cipher used for authentication tags and sealed logs.

The reference construction is XTS-AES: the 32-byte key is split into a data
key K1 and a tweak key K2, and block j of a message under tweak t is

    C_j = E_K1(P_j ^ T_j) ^ T_j,  T_j = E_K2(t) * alpha^j  in GF(2^128).

Any cipher exposing the same profile and functions can replace it.
"""
import logging
from dataclasses import dataclass

from Crypto.Cipher import AES
from Crypto.Util.Padding import pad, unpad


class BadLength(ValueError):
    pass


@dataclass(frozen=True)
class CipherProfile:
    key_size: int = 32
    tweak_size: int = 16
    block_size: int = 16


PROFILE = CipherProfile()
GF_REDUCTION = 0x87
GF_MASK = (1 << 128) - 1


def check_length(name: str, value: bytes, expected: int) -> None:
    if len(value) != expected:
        logging.error(f'Bad {name} length: {len(value)} bytes, expected {expected}')
        raise BadLength(f'{name} must be {expected} bytes, got {len(value)}')


def xor_bytes(a: bytes, b: bytes) -> bytes:
    return (int.from_bytes(a, 'little') ^ int.from_bytes(b, 'little')).to_bytes(len(a), 'little')


def mul_alpha(value: int) -> int:
    """Multiply by the primitive element in GF(2^128), little-endian convention."""
    value <<= 1
    if value >> 128:
        value = (value & GF_MASK) ^ GF_REDUCTION
    return value


class XtsCipher:

    def __init__(self, key: bytes, profile: CipherProfile = PROFILE):
        check_length('key', key, profile.key_size)
        half = profile.key_size // 2
        self.profile = profile
        self.data_cipher = AES.new(key[:half], AES.MODE_ECB)
        self.tweak_cipher = AES.new(key[half:], AES.MODE_ECB)

    def masks(self, tweak: bytes, count: int):
        check_length('tweak', tweak, self.profile.tweak_size)
        mask = int.from_bytes(self.tweak_cipher.encrypt(tweak), 'little')
        for _ in range(count):
            yield mask.to_bytes(self.profile.block_size, 'little')
            mask = mul_alpha(mask)

    def apply(self, tweak: bytes, data: bytes, encrypt: bool) -> bytes:
        size = self.profile.block_size
        if len(data) % size:
            raise BadLength(f'data must be a multiple of {size} bytes, got {len(data)}')
        op = self.data_cipher.encrypt if encrypt else self.data_cipher.decrypt
        out = list()
        for j, mask in enumerate(self.masks(tweak, len(data) // size)):
            block = data[j * size:(j + 1) * size]
            out.append(xor_bytes(op(xor_bytes(block, mask)), mask))
        return b''.join(out)


def tweak_encrypt(key: bytes, tweak: bytes, block: bytes) -> bytes:
    check_length('block', block, PROFILE.block_size)
    return XtsCipher(key).apply(tweak, block, encrypt=True)


def tweak_decrypt(key: bytes, tweak: bytes, block: bytes) -> bytes:
    check_length('block', block, PROFILE.block_size)
    return XtsCipher(key).apply(tweak, block, encrypt=False)


def encrypt_message(key: bytes, tweak: bytes, message: bytes) -> bytes:
    """Encrypt a message of any length (PKCS#7 padded to whole blocks)."""
    return XtsCipher(key).apply(tweak, pad(message, PROFILE.block_size), encrypt=True)


def decrypt_message(key: bytes, tweak: bytes, ciphertext: bytes) -> bytes:
    """Inverse of encrypt_message; raises ValueError on a corrupted padding."""
    if not ciphertext or len(ciphertext) % PROFILE.block_size:
        raise BadLength(f'ciphertext must be a non-empty multiple of {PROFILE.block_size} bytes')
    return unpad(XtsCipher(key).apply(tweak, ciphertext, encrypt=False), PROFILE.block_size)
