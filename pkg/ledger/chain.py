import dataclasses
import enum
import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Set, Tuple, Union

import numpy as np

from ledger.cipher import PROFILE, BadLength, tweak_decrypt, tweak_encrypt
from utils.helper_functions import sha256_fields

HASH_SIZE = 32
TAG_SIZE = PROFILE.block_size
MAC_SIZE = 6
DEFAULT_LIFETIME_US = 60 * 1_000_000
DEFAULT_VALIDATORS = 5
DEFAULT_QUORUM = 3
KIND_AUTH = 'auth'
KIND_REGISTER = 'register'


class AlreadyRegistered(KeyError):
    pass


class EmptyPool(RuntimeError):
    pass


class ChainFileError(ValueError):
    pass


class DropReason(enum.Enum):
    EXPIRED = 'Expired'
    UNREGISTERED = 'Unregistered'
    BAD_TAG = 'BadTag'
    CONSENSUS_FAILED = 'ConsensusFailed'
    REPLAY = 'Replay'


@dataclass(frozen=True)
class Credentials:
    puf: bytes
    device_id: str
    mac: bytes
    user_id: Optional[str] = None

    def __post_init__(self):
        if len(self.mac) != MAC_SIZE:
            raise ValueError(f'MAC must be {MAC_SIZE} bytes, got {len(self.mac)}')

    @property
    def is_user(self) -> bool:
        return self.user_id is not None

    def digest(self) -> bytes:
        kind = b'user' if self.is_user else b'device'
        user = self.user_id.encode() if self.is_user else b''
        return sha256_fields(kind, self.puf, self.device_id.encode(), self.mac, user)


@dataclass
class SecretKey:
    key_id: str
    key: bytes
    issue_time: int
    lifetime: int = DEFAULT_LIFETIME_US
    used_tags: Set[bytes] = field(default_factory=set, repr=False, compare=False)

    def __post_init__(self):
        if self.lifetime <= 0:
            raise ValueError(f'Key lifetime must be positive: {self.lifetime}')

    def expires_at(self) -> int:
        return self.issue_time + self.lifetime


@dataclass(frozen=True)
class AuthTag:
    tag: bytes
    encrypted: bytes
    tweak: bytes


@dataclass(frozen=True)
class Transaction:
    key_id: str
    tag: bytes
    encrypted_tag: bytes
    tweak: bytes
    lifetime: int
    timestamp: int
    payload_digest: bytes
    kind: str = KIND_AUTH

    def __post_init__(self):
        if len(self.payload_digest) != HASH_SIZE:
            raise ValueError(f'payload digest must be {HASH_SIZE} bytes')

    def digest(self) -> bytes:
        return sha256_fields(self.kind.encode(), self.key_id.encode(), self.tag, self.encrypted_tag,
                             self.tweak, struct.pack('<qq', self.lifetime, self.timestamp),
                             self.payload_digest)

    def to_dict(self) -> dict:
        return {'key_id': self.key_id,
                'tag': self.tag.hex(),
                'encrypted_tag': self.encrypted_tag.hex(),
                'tweak': self.tweak.hex(),
                'lifetime': self.lifetime,
                'timestamp': self.timestamp,
                'payload_digest': self.payload_digest.hex(),
                'kind': self.kind}

    @classmethod
    def from_dict(cls, d: dict) -> 'Transaction':
        return cls(d['key_id'], bytes.fromhex(d['tag']), bytes.fromhex(d['encrypted_tag']),
                   bytes.fromhex(d['tweak']), d['lifetime'], d['timestamp'],
                   bytes.fromhex(d['payload_digest']), d['kind'])


@dataclass(frozen=True)
class Accepted:
    digest: bytes


@dataclass(frozen=True)
class Dropped:
    reason: DropReason


SubmitResult = Union[Accepted, Dropped]


def merkle_root(transactions) -> bytes:
    """Pairwise sha256 tree over transaction digests; an odd node is paired
    with itself."""
    level = [txn.digest() for txn in transactions]
    if not level:
        return hashlib.sha256(b'').digest()
    while len(level) > 1:
        if len(level) % 2 == 1:
            level.append(level[-1])
        level = [hashlib.sha256(level[i] + level[i + 1]).digest() for i in range(0, len(level), 2)]
    return level[0]


@dataclass(frozen=True)
class Block:
    index: int
    prev_hash: bytes
    merkle_root: bytes
    transactions: Tuple[Transaction, ...]
    validator_quorum: int
    block_hash: bytes = b''

    def hash(self) -> bytes:
        return sha256_fields(struct.pack('<Q', self.index), self.prev_hash, self.merkle_root,
                             struct.pack('<I', self.validator_quorum))

    def to_dict(self) -> dict:
        return {'index': self.index,
                'prev_hash': self.prev_hash.hex(),
                'merkle_root': self.merkle_root.hex(),
                'quorum': self.validator_quorum,
                'hash': self.block_hash.hex(),
                'txn_digests': [txn.digest().hex() for txn in self.transactions],
                'transactions': [txn.to_dict() for txn in self.transactions]}

    @classmethod
    def from_dict(cls, d: dict) -> 'Block':
        txns = tuple(Transaction.from_dict(t) for t in d['transactions'])
        digests = [txn.digest().hex() for txn in txns]
        if digests != d['txn_digests']:
            raise ChainFileError(f'Transaction digests of block {d["index"]} do not match its transactions')
        block = cls(d['index'], bytes.fromhex(d['prev_hash']), bytes.fromhex(d['merkle_root']), txns, d['quorum'],
                    bytes.fromhex(d['hash']))
        if block.block_hash != block.hash():
            raise ChainFileError(f'Header of block {d["index"]} does not match its stored hash')
        return block


def seal_block(index: int, prev_hash: bytes, transactions: Tuple[Transaction, ...], quorum: int) -> Block:
    block = Block(index, prev_hash, merkle_root(transactions), transactions, quorum)
    return dataclasses.replace(block, block_hash=block.hash())


GENESIS = seal_block(0, bytes(HASH_SIZE), (), 0)


def generate_tag(key: SecretKey, rng: np.random.Generator) -> AuthTag:
    """Draw a fresh nonce for `key` and encrypt it under a fresh tweak."""
    tag = rng.bytes(TAG_SIZE)
    while tag in key.used_tags:
        tag = rng.bytes(TAG_SIZE)
    key.used_tags.add(tag)
    tweak = rng.bytes(PROFILE.tweak_size)
    return AuthTag(tag, tweak_encrypt(key.key, tweak, tag), tweak)


def make_transaction(key: SecretKey, tag: AuthTag, payload: bytes, timestamp: int) -> Transaction:
    return Transaction(key.key_id, tag.tag, tag.encrypted, tag.tweak, key.lifetime, timestamp,
                       hashlib.sha256(payload).digest())


class Ledger:
    """Single-writer authentication ledger.

    Registered credentials map to derived secret keys. Authentication
    transactions are checked against the registry and the key lifetime,
    re-checked by every validator, and pooled until the next block is
    mined."""

    def __init__(self, seed: int = 0, validators: int = DEFAULT_VALIDATORS, quorum: int = DEFAULT_QUORUM,
                 faulty: FrozenSet[int] = frozenset(), default_lifetime: int = DEFAULT_LIFETIME_US):
        if validators < 1 or not 1 <= quorum <= validators:
            logging.error(f'Invalid validator setup: {validators} validators, quorum {quorum}')
            raise ValueError(f'need 1 <= quorum <= validators, got {quorum}/{validators}')
        if any(v < 0 or v >= validators for v in faulty):
            raise ValueError(f'faulty validator index out of range: {sorted(faulty)}')
        self.seed = seed
        self.validators = validators
        self.quorum = quorum
        self.faulty = frozenset(faulty)
        self.default_lifetime = default_lifetime
        self.chain: List[Block] = [GENESIS]
        self.registry: Dict[str, SecretKey] = dict()
        self.pending: List[Transaction] = list()
        self.seen: Set[Tuple[str, bytes]] = set()

    def derive_key(self, creds_digest: bytes) -> bytes:
        return hashlib.sha256(creds_digest + struct.pack('<q', self.seed)).digest()

    def register(self, creds: Credentials, now: int = 0) -> SecretKey:
        digest = creds.digest()
        key_id = digest.hex()
        if key_id in self.registry:
            logging.warning(f'Credentials already registered: {key_id[:16]}')
            raise AlreadyRegistered(key_id)
        key = SecretKey(key_id, self.derive_key(digest), now, self.default_lifetime)
        self.registry[key_id] = key
        # Only the credential digest is recorded; the PUF response never enters the chain.
        self.pending.append(Transaction(key_id, b'', b'', b'', key.lifetime, now, digest, KIND_REGISTER))
        logging.debug(f'Registered {"user" if creds.is_user else "device"} {creds.device_id} as {key_id[:16]}')
        return key

    def tag_valid(self, txn: Transaction) -> bool:
        key = self.registry.get(txn.key_id)
        if key is None:
            return False
        try:
            return tweak_decrypt(key.key, txn.tweak, txn.encrypted_tag) == txn.tag
        except BadLength:
            return False

    def run_consensus(self, txn: Transaction) -> int:
        """Number of validators that independently accept `txn`."""
        yes = 0
        for validator in range(self.validators):
            if validator in self.faulty:
                continue
            if txn.key_id in self.registry and self.tag_valid(txn):
                yes += 1
        return yes

    def submit_transaction(self, txn: Transaction, now: int) -> SubmitResult:
        key = self.registry.get(txn.key_id)
        if key is None:
            return self.drop(txn, DropReason.UNREGISTERED)
        if now > key.expires_at():
            return self.drop(txn, DropReason.EXPIRED)
        if not self.tag_valid(txn):
            return self.drop(txn, DropReason.BAD_TAG)
        if (txn.key_id, txn.tag) in self.seen:
            return self.drop(txn, DropReason.REPLAY)
        if self.run_consensus(txn) < self.quorum:
            return self.drop(txn, DropReason.CONSENSUS_FAILED)
        self.seen.add((txn.key_id, txn.tag))
        self.pending.append(txn)
        return Accepted(txn.digest())

    @staticmethod
    def drop(txn: Transaction, reason: DropReason) -> Dropped:
        logging.debug(f'Dropped transaction from {txn.key_id[:16]}: {reason.value}')
        return Dropped(reason)

    def renew(self, key_id: str, now: int) -> SecretKey:
        """Restart the lifetime window of a registered key."""
        key = self.registry[key_id]
        key.issue_time = now
        return key

    def mine_block(self) -> Block:
        if not self.pending:
            logging.error('Cannot mine a block without pending transactions')
            raise EmptyPool('no pending transactions')
        prev = self.chain[-1]
        txns = tuple(self.pending)
        block = seal_block(prev.index + 1, prev.block_hash, txns, self.quorum)
        self.chain.append(block)
        self.pending = list()
        logging.debug(f'Mined block {block.index} with {len(txns)} transactions')
        return block

    def verify_chain(self) -> bool:
        return verify_blocks(self.chain)

    @property
    def registry_size(self) -> int:
        return len(self.registry)


def verify_blocks(chain: List[Block]) -> bool:
    if not chain or chain[0] != GENESIS:
        logging.warning('Chain does not start with the genesis block')
        return False
    for block in chain:
        if block.block_hash != block.hash():
            logging.warning(f'Invalid block at index {block.index}: header does not match its stored hash')
            return False
    for prev, block in zip(chain, chain[1:]):
        if block.index != prev.index + 1:
            logging.warning(f'Block index gap after {prev.index}')
            return False
        if block.prev_hash != prev.block_hash:
            logging.warning(f'Invalid block at index {block.index}: previous hash mismatch')
            return False
        if block.merkle_root != merkle_root(block.transactions):
            logging.warning(f'Invalid block at index {block.index}: merkle root mismatch')
            return False
    return True


def export_ledger(ledger: Ledger, path: str) -> int:
    """Write one JSON object per block; returns the number of blocks."""
    with open(path, 'w') as f:
        for block in ledger.chain:
            f.write(json.dumps(block.to_dict(), sort_keys=True) + '\n')
    logging.info(f'Exported {len(ledger.chain)} blocks to {path}')
    return len(ledger.chain)


def load_chain(path: str) -> List[Block]:
    if not os.path.exists(path):
        logging.error(f'Ledger file does not exist: {path}')
        raise FileNotFoundError(path)
    chain = list()
    with open(path, 'r') as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                chain.append(Block.from_dict(json.loads(line)))
            except (KeyError, ValueError) as e:
                logging.error(f'Malformed block on line {line_no} of {path}: {e}')
                raise ChainFileError(f'{path}:{line_no}: {e}')
    return chain
