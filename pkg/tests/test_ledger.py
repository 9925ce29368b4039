import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ledger.chain import (GENESIS, AlreadyRegistered, Accepted, ChainFileError, Credentials, Dropped,
                          DropReason, EmptyPool, Ledger, Transaction, export_ledger, generate_tag, load_chain,
                          make_transaction, merkle_root, verify_blocks)
from ledger.cipher import BadLength, decrypt_message, encrypt_message, tweak_decrypt, tweak_encrypt

LIFETIME = 60_000_000


def device(i: int, mac: bytes = None) -> Credentials:
    return Credentials(bytes([i % 256]) * 16, f'dev-{i}', mac or bytes([i % 256]) * 6)


@pytest.fixture
def ledger():
    return Ledger(seed=3)


def auth(ledger, key, rng, now=0, payload=b'payload'):
    return make_transaction(key, generate_tag(key, rng), payload, now)


@given(st.binary(min_size=32, max_size=32), st.binary(min_size=16, max_size=16),
       st.binary(min_size=16, max_size=16))
def test_tweak_cipher_inverts(key, tweak, block):
    assert tweak_decrypt(key, tweak, tweak_encrypt(key, tweak, block)) == block


@given(st.binary(min_size=32, max_size=32), st.binary(min_size=16, max_size=16), st.binary(max_size=100))
def test_message_cipher_inverts(key, tweak, message):
    assert decrypt_message(key, tweak, encrypt_message(key, tweak, message)) == message


def test_tweak_changes_ciphertext():
    rng = np.random.default_rng(1)
    for _ in range(256):
        key, block = rng.bytes(32), rng.bytes(16)
        t1, t2 = rng.bytes(16), rng.bytes(16)
        assert tweak_encrypt(key, t1, block) != tweak_encrypt(key, t2, block)


def test_multi_block_messages_mask_each_block():
    key, tweak = bytes(range(32)), bytes(16)
    ciphertext = tweak_encrypt(key, tweak, bytes(16))
    message = encrypt_message(key, tweak, bytes(31))
    assert message[:16] == ciphertext
    assert message[16:] != ciphertext


@pytest.mark.parametrize('key, tweak, block', [(bytes(31), bytes(16), bytes(16)),
                                                (bytes(32), bytes(15), bytes(16)),
                                                (bytes(32), bytes(16), bytes(17))])
def test_bad_lengths(key, tweak, block):
    with pytest.raises(BadLength):
        tweak_encrypt(key, tweak, block)


def test_register_issues_key(ledger):
    key = ledger.register(device(1))
    assert ledger.registry_size == 1
    assert len(key.key) == 32
    assert ledger.pending[-1].kind == 'register'


def test_register_twice(ledger):
    ledger.register(device(1))
    with pytest.raises(AlreadyRegistered):
        ledger.register(device(1))


def test_mac_distinguishes_devices(ledger):
    keys = {ledger.register(device(1, bytes([m]) * 6)).key for m in range(20)}
    assert len(keys) == 20


def test_user_and_device_with_same_identity_differ():
    assert device(1).digest() != dataclasses.replace(device(1), user_id='alice').digest()


def test_tags_are_fresh_and_reproducible(ledger):
    key = ledger.register(device(1))
    rng = np.random.default_rng(4)
    first, second = generate_tag(key, rng), generate_tag(key, rng)
    assert first.tag != second.tag
    assert tweak_decrypt(key.key, first.tweak, first.encrypted) == first.tag
    other = Ledger(seed=3).register(device(1))
    assert generate_tag(other, np.random.default_rng(4)) == first


def test_submit_paths(ledger):
    key = ledger.register(device(1))
    rng = np.random.default_rng(0)
    txn = auth(ledger, key, rng)
    assert isinstance(ledger.submit_transaction(txn, 0), Accepted)
    assert ledger.submit_transaction(txn, 10) == Dropped(DropReason.REPLAY)
    late = auth(ledger, key, rng, now=LIFETIME + 1)
    assert ledger.submit_transaction(late, LIFETIME + 1) == Dropped(DropReason.EXPIRED)
    edge = auth(ledger, key, rng, now=LIFETIME)
    assert isinstance(ledger.submit_transaction(edge, LIFETIME), Accepted)


def test_replay_with_other_payload_still_collides(ledger):
    key = ledger.register(device(1))
    tag = generate_tag(key, np.random.default_rng(0))
    assert isinstance(ledger.submit_transaction(make_transaction(key, tag, b'a', 0), 0), Accepted)
    replay = make_transaction(key, tag, b'b', 5)
    assert ledger.submit_transaction(replay, 5) == Dropped(DropReason.REPLAY)


def test_renew_reopens_the_window(ledger):
    key = ledger.register(device(1))
    ledger.renew(key.key_id, LIFETIME + 10)
    txn = auth(ledger, key, np.random.default_rng(0), now=LIFETIME + 20)
    assert isinstance(ledger.submit_transaction(txn, LIFETIME + 20), Accepted)


def test_consensus_counts(ledger):
    key = ledger.register(device(1))
    txn = auth(ledger, key, np.random.default_rng(0))
    assert ledger.run_consensus(txn) == 5
    stranger = dataclasses.replace(txn, key_id='00' * 32)
    assert ledger.run_consensus(stranger) == 0


def test_faulty_validators():
    ledger = Ledger(seed=3, faulty=frozenset({0, 1}))
    key = ledger.register(device(1))
    txn = auth(ledger, key, np.random.default_rng(0))
    assert ledger.run_consensus(txn) == 3
    assert isinstance(ledger.submit_transaction(txn, 0), Accepted)
    stricter = Ledger(seed=3, faulty=frozenset({0, 1, 2}))
    key = stricter.register(device(1))
    txn = auth(stricter, key, np.random.default_rng(0))
    assert stricter.submit_transaction(txn, 0) == Dropped(DropReason.CONSENSUS_FAILED)


def test_rejections_carry_the_right_reason():
    ledger = Ledger(seed=9)
    rng = np.random.default_rng(9)
    keys = [ledger.register(device(i)) for i in range(10)]
    accepted = list()
    expected = list()
    for i in range(1000):
        key = keys[int(rng.integers(len(keys)))]
        now = 1000 + i
        kind = i % 4
        if kind == 0 and accepted:
            txn = accepted[int(rng.integers(len(accepted)))]
            reason = DropReason.REPLAY
        elif kind == 1:
            txn = auth(ledger, key, rng, now=now)
            now = key.expires_at() + 1 + int(rng.integers(1000))
            reason = DropReason.EXPIRED
        elif kind == 2:
            tag = generate_tag(key, rng)
            txn = Transaction(key.key_id, tag.tag, rng.bytes(16), tag.tweak, key.lifetime, now, bytes(32))
            reason = DropReason.BAD_TAG
        else:
            txn = dataclasses.replace(auth(ledger, key, rng, now=now), key_id=rng.bytes(32).hex())
            reason = DropReason.UNREGISTERED
        expected.append(reason)
        result = ledger.submit_transaction(txn, now)
        assert result == Dropped(reason)
        if kind == 0:
            continue
        good = auth(ledger, key, rng, now=1000 + i)
        assert isinstance(ledger.submit_transaction(good, 1000 + i), Accepted)
        accepted.append(good)
    assert len(expected) == 1000


def test_mine_block(ledger):
    key = ledger.register(device(1))
    ledger.mine_block()
    rng = np.random.default_rng(0)
    for _ in range(3):
        ledger.submit_transaction(auth(ledger, key, rng), 0)
    block = ledger.mine_block()
    assert len(block.transactions) == 3
    assert len(ledger.chain) == 3
    assert block.prev_hash == ledger.chain[1].hash()
    with pytest.raises(EmptyPool):
        ledger.mine_block()


def test_genesis_only_chain_verifies(ledger):
    assert ledger.chain == [GENESIS]
    assert ledger.verify_chain()


def test_hundred_blocks_verify(ledger):
    key = ledger.register(device(1))
    rng = np.random.default_rng(0)
    ledger.mine_block()
    for i in range(99):
        ledger.submit_transaction(auth(ledger, key, rng, now=i), i)
        ledger.mine_block()
        assert ledger.verify_chain()
    assert len(ledger.chain) == 101


def test_merkle_root_of_odd_count_duplicates_last(ledger):
    key = ledger.register(device(1))
    rng = np.random.default_rng(0)
    txns = [auth(ledger, key, rng) for _ in range(3)]
    assert merkle_root(txns) == merkle_root(txns + txns[-1:])


def tampered_chain(ledger):
    key = ledger.register(device(1))
    rng = np.random.default_rng(0)
    for i in range(4):
        ledger.submit_transaction(auth(ledger, key, rng, now=i), i)
        ledger.mine_block()
    return ledger.chain


def test_single_flipped_transaction_byte_is_detected(ledger):
    chain = tampered_chain(ledger)
    rng = np.random.default_rng(5)
    for _ in range(50):
        i = int(rng.integers(1, len(chain)))
        j = int(rng.integers(len(chain[i].transactions)))
        txn = chain[i].transactions[j]
        field = ('tag', 'encrypted_tag', 'tweak', 'payload_digest')[int(rng.integers(4))]
        value = bytearray(getattr(txn, field))
        if not value:
            continue
        value[int(rng.integers(len(value)))] ^= 1 << int(rng.integers(8))
        txns = list(chain[i].transactions)
        txns[j] = dataclasses.replace(txn, **{field: bytes(value)})
        forged = list(chain)
        forged[i] = dataclasses.replace(chain[i], transactions=tuple(txns))
        assert not verify_blocks(forged)
    assert verify_blocks(chain)


def test_flipped_header_byte_is_detected(ledger):
    chain = tampered_chain(ledger)
    root = bytearray(chain[2].merkle_root)
    root[0] ^= 0x80
    forged = list(chain)
    forged[2] = dataclasses.replace(chain[2], merkle_root=bytes(root))
    assert not verify_blocks(forged)


def test_tampered_quorum_of_last_block_is_detected(ledger):
    chain = tampered_chain(ledger)
    forged = list(chain)
    forged[-1] = dataclasses.replace(chain[-1], validator_quorum=chain[-1].validator_quorum ^ 1)
    assert not verify_blocks(forged)
    ledger.chain = forged
    assert not ledger.verify_chain()


def test_tampered_quorum_in_last_exported_line_is_rejected(ledger, tmp_path):
    tampered_chain(ledger)
    path = tmp_path / 'ledger.jsonl'
    export_ledger(ledger, str(path))
    lines = path.read_text().splitlines()
    block = json.loads(lines[-1])
    block['quorum'] ^= 1
    lines[-1] = json.dumps(block, sort_keys=True)
    path.write_text('\n'.join(lines) + '\n')
    with pytest.raises(ChainFileError):
        load_chain(str(path))


def test_export_and_reload(ledger, tmp_path):
    chain = tampered_chain(ledger)
    path = tmp_path / 'ledger.jsonl'
    assert export_ledger(ledger, str(path)) == len(chain)
    assert load_chain(str(path)) == chain


def test_tampered_export_is_rejected(ledger, tmp_path):
    tampered_chain(ledger)
    path = tmp_path / 'ledger.jsonl'
    export_ledger(ledger, str(path))
    lines = path.read_text().splitlines()
    block = json.loads(lines[2])
    tag = block['transactions'][0]['tag']
    block['transactions'][0]['tag'] = ('1' if tag[0] == '0' else '0') + tag[1:]
    lines[2] = json.dumps(block, sort_keys=True)
    path.write_text('\n'.join(lines) + '\n')
    with pytest.raises(ChainFileError):
        load_chain(str(path))
