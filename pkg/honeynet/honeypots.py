import enum
import hashlib
import logging
import struct
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from utils.helper_functions import length_prefixed, split_length_prefixed

DEFAULT_HONEYPOT_LIFETIME_US = 20 * 1_000_000
ACTION = struct.Struct('<QH32s')


class UnknownProfile(KeyError):
    pass


class EmptySession(ValueError):
    pass


class ActionCode(enum.IntEnum):
    CONNECT = 1
    AUTH_ATTEMPT = 2
    REQUEST = 3
    FLOOD = 4
    REPLAY = 5
    SCAN = 6
    EXFILTRATE = 7


@dataclass(frozen=True)
class SessionEvent:
    offset: int
    code: ActionCode
    payload: bytes
    features: Tuple[float, ...]


@dataclass(frozen=True)
class Action:
    offset: int
    code: ActionCode
    digest: bytes


@dataclass(frozen=True)
class AttackPattern:
    family: str
    actions: Tuple[Action, ...]
    source: str
    feature_summary: Tuple[float, ...]

    def __post_init__(self):
        if not self.actions:
            raise EmptySession('attack pattern without actions')
        offsets = [a.offset for a in self.actions]
        if any(b <= a for a, b in zip(offsets, offsets[1:])):
            raise ValueError(f'action offsets are not strictly increasing: {offsets}')


@dataclass
class VirtualHoneypot:
    id: str
    cloned_profile: str
    source_server: str
    deployed_at: int
    retire_at: int
    active: bool = True
    sessions: List[AttackPattern] = field(default_factory=list)


class Honeynet:
    """On-demand honeypots cloned from the profiles of servers whose
    services are being migrated away."""

    def __init__(self, lifetime: int = DEFAULT_HONEYPOT_LIFETIME_US):
        self.lifetime = lifetime
        self.honeypots: Dict[str, VirtualHoneypot] = dict()
        self.counter = 0

    def deploy_honeypot(self, profile: str, live_profiles: Iterable[str], source: str, now: int) -> VirtualHoneypot:
        if profile not in set(live_profiles):
            logging.error(f'Cannot clone unknown profile {profile}')
            raise UnknownProfile(profile)
        self.counter += 1
        hp = VirtualHoneypot(f'hp-{self.counter}', profile, source, now, now + self.lifetime)
        self.honeypots[hp.id] = hp
        logging.info(f'Deployed honeypot {hp.id} in place of {source} (profile {profile})')
        return hp

    def active_honeypots(self) -> List[VirtualHoneypot]:
        return [hp for hp in self.honeypots.values() if hp.active]

    def decoy_for(self, server_id: str) -> Optional[VirtualHoneypot]:
        """Active honeypot standing in for a migrated-away server."""
        for hp in self.active_honeypots():
            if hp.source_server == server_id:
                return hp
        return None

    def retire_expired(self, now: int) -> List[VirtualHoneypot]:
        retired = [hp for hp in self.active_honeypots() if now >= hp.retire_at]
        for hp in retired:
            retire_honeypot(hp, now)
        return retired


def retire_honeypot(hp: VirtualHoneypot, now: int) -> None:
    hp.active = False
    hp.retire_at = min(hp.retire_at, now)
    logging.info(f'Retired honeypot {hp.id} after {len(hp.sessions)} sessions')


def capture(hp: VirtualHoneypot, events: Iterable[SessionEvent], family: str, source: str) -> AttackPattern:
    if not hp.active:
        raise ValueError(f'honeypot {hp.id} is retired')
    events = sorted(events, key=lambda e: e.offset)
    if not events:
        logging.warning(f'Empty attacker session on {hp.id}')
        raise EmptySession(hp.id)
    actions = tuple(Action(e.offset, ActionCode(e.code), hashlib.sha256(e.payload).digest()) for e in events)
    summary = np.mean(np.array([e.features for e in events], dtype=np.float64), axis=0)
    pattern = AttackPattern(family, actions, source, tuple(float(v) for v in summary))
    hp.sessions.append(pattern)
    return pattern


def encode_pattern(pattern: AttackPattern) -> bytes:
    actions = b''.join(ACTION.pack(a.offset, int(a.code), a.digest) for a in pattern.actions)
    summary = np.asarray(pattern.feature_summary, dtype='<f8').tobytes()
    return length_prefixed(pattern.family.encode(), pattern.source.encode(), actions, summary)


def decode_pattern(data: bytes) -> AttackPattern:
    fields = split_length_prefixed(data)
    if len(fields) != 4:
        raise ValueError(f'pattern carries {len(fields)} fields, expected 4')
    family, source, actions, summary = fields
    if len(actions) % ACTION.size or len(summary) % 8:
        raise ValueError('pattern field sizes are not whole records')
    decoded = tuple(Action(offset, ActionCode(code), digest)
                    for offset, code, digest in ACTION.iter_unpack(actions))
    values = np.frombuffer(summary, dtype='<f8')
    return AttackPattern(family.decode(), decoded, source.decode(), tuple(float(v) for v in values))
