"""Append-only log of signed and encrypted attack patterns.

Each pattern is serialized canonically, signed with the honeynet lattice
key and encrypted with the tweakable cipher under its entry index. The
file layout is the magic b'HLOG' followed by, for every entry, the index
(8 bytes LE), ciphertext length (4 bytes LE), ciphertext, signature length
(4 bytes LE) and signature.
"""
import hashlib
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from bliss.signature import KeyPair, RetryLimit, SignParams, encode_signature, keygen, sign, verify
from honeynet.honeypots import AttackPattern, decode_pattern, encode_pattern
from ledger.cipher import PROFILE, decrypt_message, encrypt_message

LOG_MAGIC = b'HLOG'


class SigningFailed(RuntimeError):
    pass


class EmptyLog(ValueError):
    pass


class LogFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SealedLogEntry:
    index: int
    ciphertext: bytes
    signature: bytes


@dataclass
class SealedLog:
    key: bytes
    entries: List[SealedLogEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def next_index(self) -> int:
        return len(self.entries) + 1


@dataclass(frozen=True)
class HarvestResult:
    patterns: Tuple[AttackPattern, ...]
    failures: Tuple[Tuple[int, str], ...]


def honeynet_keys(seed: int, params: SignParams = SignParams()) -> Tuple[KeyPair, bytes]:
    """Lattice signing keys and log cipher key derived from a run seed."""
    cipher_key = hashlib.sha256(b'honeynet-log' + struct.pack('<q', seed)).digest()
    return keygen(params, seed), cipher_key


def index_tweak(index: int) -> bytes:
    return index.to_bytes(PROFILE.tweak_size, 'little')


def seal_pattern(pattern: AttackPattern, signer: KeyPair, params: SignParams, log: SealedLog,
                 rng: np.random.Generator) -> SealedLogEntry:
    data = encode_pattern(pattern)
    try:
        signature = sign(signer, params, data, rng)
    except RetryLimit as e:
        logging.error(f'Could not sign {pattern.family} pattern from {pattern.source}: {e}')
        raise SigningFailed(str(e))
    index = log.next_index
    entry = SealedLogEntry(index, encrypt_message(log.key, index_tweak(index), data), encode_signature(signature))
    log.entries.append(entry)
    return entry


def open_entry(entry: SealedLogEntry, key: bytes, public, params: SignParams) -> AttackPattern:
    """Decrypt and verify one entry; raise ValueError naming the problem."""
    try:
        data = decrypt_message(key, index_tweak(entry.index), entry.ciphertext)
    except ValueError as e:
        raise ValueError(f'decryption failed: {e}')
    if not verify(public, params, data, entry.signature):
        raise ValueError('signature does not verify')
    return decode_pattern(data)


def harvest(log: SealedLog, public, params: SignParams = SignParams()) -> HarvestResult:
    patterns, failures = list(), list()
    for entry in log.entries:
        try:
            patterns.append(open_entry(entry, log.key, public, params))
        except ValueError as e:
            logging.warning(f'Sealed log entry {entry.index} rejected: {e}')
            failures.append((entry.index, str(e)))
    return HarvestResult(tuple(patterns), tuple(failures))


def write_sealed_log(log: SealedLog, path: str) -> int:
    with open(path, 'wb') as f:
        f.write(LOG_MAGIC)
        for entry in log.entries:
            f.write(struct.pack('<QI', entry.index, len(entry.ciphertext)))
            f.write(entry.ciphertext)
            f.write(struct.pack('<I', len(entry.signature)))
            f.write(entry.signature)
    logging.info(f'Wrote {len(log.entries)} sealed entries to {path}')
    return len(log.entries)


def read_sealed_log(path: str, key: bytes) -> SealedLog:
    if not os.path.exists(path):
        logging.error(f'Sealed log does not exist: {path}')
        raise FileNotFoundError(path)
    with open(path, 'rb') as f:
        data = f.read()
    if data[:len(LOG_MAGIC)] != LOG_MAGIC:
        raise LogFormatError(f'{path} is not a sealed log')
    log = SealedLog(key)
    offset = len(LOG_MAGIC)
    try:
        while offset < len(data):
            index, size = struct.unpack_from('<QI', data, offset)
            offset += 12
            ciphertext = data[offset:offset + size]
            offset += size
            sig_size, = struct.unpack_from('<I', data, offset)
            offset += 4
            signature = data[offset:offset + sig_size]
            offset += sig_size
            if len(ciphertext) != size or len(signature) != sig_size:
                raise LogFormatError(f'entry {index} is truncated')
            if index != log.next_index:
                raise LogFormatError(f'entry index {index} breaks the sequence at {log.next_index}')
            log.entries.append(SealedLogEntry(index, ciphertext, signature))
    except struct.error as e:
        raise LogFormatError(f'{path} is truncated: {e}')
    return log
