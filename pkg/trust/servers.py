import enum
import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Set, Tuple

DEFAULT_POSITIVE_CHANGE = 0.05
DEFAULT_NEGATIVE_CHANGE = 0.3


class NoServers(ValueError):
    pass


class Role(enum.Enum):
    GLOBAL = 'Global'
    LOCAL = 'Local'


class Polarity(enum.Enum):
    POSITIVE = 'Positive'
    NEGATIVE = 'Negative'


@dataclass(frozen=True)
class TrustEvent:
    polarity: Polarity
    magnitude: float

    def __post_init__(self):
        if not 0 <= self.magnitude <= 1:
            raise ValueError(f'trust change must lie in [0, 1]: {self.magnitude}')

    @classmethod
    def benign_completion(cls, magnitude: float = DEFAULT_POSITIVE_CHANGE) -> 'TrustEvent':
        return cls(Polarity.POSITIVE, magnitude)

    @classmethod
    def attack_involvement(cls, magnitude: float = DEFAULT_NEGATIVE_CHANGE) -> 'TrustEvent':
        return cls(Polarity.NEGATIVE, magnitude)


@dataclass
class EdgeServer:
    id: str
    profile: str
    slots_total: int
    tasks_running: int = 0
    tasks_waiting: int = 0
    trust: float = 0.5
    role: Role = Role.LOCAL
    services: Set[str] = field(default_factory=set)

    def __post_init__(self):
        if not 0 <= self.tasks_running <= self.slots_total:
            raise ValueError(f'{self.id}: running tasks {self.tasks_running} outside [0, {self.slots_total}]')
        if not 0 <= self.trust <= 1:
            raise ValueError(f'{self.id}: trust {self.trust} outside [0, 1]')

    @property
    def is_local(self) -> bool:
        return self.role == Role.LOCAL

    def apply(self, event: TrustEvent) -> float:
        self.trust = update_trust(self.trust, event)
        return self.trust


def update_trust(previous: float, event: TrustEvent) -> float:
    change = (1 - previous) * event.magnitude
    if event.polarity == Polarity.POSITIVE:
        value = previous + change
    else:
        value = previous - change
    return min(1.0, max(0.0, value))


def local_servers(servers: Iterable[EdgeServer]) -> List[EdgeServer]:
    return [s for s in servers if s.is_local]


def trust_threshold(servers: Iterable[EdgeServer]) -> float:
    """Mean trust of the local servers."""
    local = local_servers(servers)
    if not local:
        logging.error('Trust threshold requested for a fleet without local servers')
        raise NoServers('no local edge servers')
    return sum(s.trust for s in local) / len(local)


def classify_servers(servers: Iterable[EdgeServer], threshold: float) -> Tuple[List[EdgeServer], List[EdgeServer]]:
    high, low = list(), list()
    for server in local_servers(servers):
        if server.trust >= threshold:
            high.append(server)
        else:
            low.append(server)
    return high, low


def cpu_availability(server: EdgeServer) -> int:
    return max(0, server.slots_total - server.tasks_running)


def fleet_availability(servers: Iterable[EdgeServer]) -> int:
    return sum(cpu_availability(s) for s in servers)


@dataclass(frozen=True)
class LoadFigures:
    eq13_load: float
    pressure: float


def load_ratio(server: EdgeServer) -> LoadFigures:
    """Available CPU per waiting task, and its inverse used as load pressure.
    Both denominators are clamped to 1."""
    available = cpu_availability(server)
    return LoadFigures(available / max(server.tasks_waiting, 1),
                       server.tasks_waiting / max(available, 1))


def snapshot_fleet(servers: Iterable[EdgeServer], path: str, fitness: dict = None) -> int:
    """Write one server per line: id, profile, slots, running, waiting, trust, FV."""
    servers = list(servers)
    fitness = fitness or dict()
    with open(path, 'w') as f:
        f.write('id,profile,slots,running,waiting,trust,fv\n')
        for s in servers:
            fv = fitness.get(s.id)
            fv_text = f'{fv:.6f}' if fv is not None else ''
            f.write(f'{s.id},{s.profile},{s.slots_total},{s.tasks_running},{s.tasks_waiting},'
                    f'{s.trust:.6f},{fv_text}\n')
    return len(servers)
