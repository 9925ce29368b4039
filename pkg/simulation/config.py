"""Scenario configuration for the gateway simulation.

A scenario is an INI file with the sections [network], [packets],
[security], [ids], [trust], [honeynet] and [feedback]. Times are given in
seconds in the file and converted to integer microseconds by the engine.
"""
import configparser
import dataclasses
import enum
import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, Tuple

from traffic.synth import InvalidConfig
from utils.helper_functions import parse_csv, parse_kv_csv

US_PER_S = 1_000_000


class AttackerKind(enum.Enum):
    FUZZING = 'Fuzzing'
    DDOS = 'DDoS'
    IMPERSONATION = 'Impersonation'
    REPLAY = 'Replay'


@dataclass(frozen=True)
class SimConfig:
    # [network]
    iot_users: int = 50
    iot_devices: int = 50
    edge_gateways: int = 6
    cloud_servers: int = 1
    sim_time: float = 60.0
    malicious_nodes: int = 6
    seed: int = 1
    servers_per_profile: int = 2
    server_slots: int = 40
    validators: int = 5
    quorum: int = 3
    key_lifetime: float = 60.0
    block_interval: float = 1.0
    # [packets]
    packet_sizes: Tuple[int, ...] = (64, 128, 256, 512, 1024)
    benign_rate: float = 0.2
    attack_rate_min: float = 2.0
    attack_rate_max: float = 6.0
    gateway_service_rate: float = 50.0
    # [security]
    attack_families: Tuple[str, ...] = ('DoS', 'DDoS', 'Web')
    attack_mix: Dict[AttackerKind, float] = field(default_factory=lambda: {
        AttackerKind.FUZZING: 0.5, AttackerKind.IMPERSONATION: 0.5,
        AttackerKind.REPLAY: 0.5, AttackerKind.DDOS: 5.0})
    # [ids]
    known_families: Tuple[str, ...] = ('DoS', 'DDoS', 'Scan', 'Bot')
    train_benign: int = 3000
    train_attack: int = 250
    forest_trees: int = 20
    h0: int = 10
    refine_passes: int = 3
    theta_lo: float = 0.3
    theta_hi: float = 0.8
    feature_shift: float = 2.0
    feature_noise: float = 1.0
    aids_train_rows: int = 800
    aids_epochs: int = 5
    aids_hidden: int = 16
    image_width: int = 8
    image_height: int = 8
    # [trust]
    positive_change: float = 0.05
    negative_change: float = 0.3
    migration_interval: float = 10.0
    heap_arity: int = 3
    fitness_weights: Tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    # [honeynet]
    honeypot_lifetime: float = 20.0
    session_events: int = 4
    # [feedback]
    feedback: bool = True
    retrain_interval: float = 30.0
    holdout_family: str = 'Web'
    holdout_rows: int = 300

    def us(self, seconds: float) -> int:
        return int(round(seconds * US_PER_S))

    @property
    def horizon_us(self) -> int:
        return self.us(self.sim_time)


def validate_sim_config(config: SimConfig) -> None:
    counts = {'iot_users': config.iot_users, 'iot_devices': config.iot_devices,
              'edge_gateways': config.edge_gateways, 'cloud_servers': config.cloud_servers,
              'malicious_nodes': config.malicious_nodes}
    negative = [name for name, value in counts.items() if value < 0]
    if negative:
        logging.error(f'Negative counts in scenario: {negative}')
        raise InvalidConfig(f'counts must be non-negative: {", ".join(negative)}')
    if config.sim_time <= 0:
        logging.error(f'Invalid simulation time: {config.sim_time}')
        raise InvalidConfig(f'sim_time must be positive: {config.sim_time}')
    if config.malicious_nodes > config.iot_devices:
        raise InvalidConfig(f'{config.malicious_nodes} malicious nodes but only {config.iot_devices} devices')
    if config.iot_users + config.iot_devices > 0 and config.edge_gateways == 0:
        raise InvalidConfig('IoT nodes need at least one edge gateway')
    if config.malicious_nodes and not config.attack_families:
        raise InvalidConfig('malicious nodes need at least one attack family')
    if not config.packet_sizes or min(config.packet_sizes) <= 0:
        raise InvalidConfig(f'invalid packet size ladder: {config.packet_sizes}')
    if any(rate < 0 for rate in config.attack_mix.values()):
        raise InvalidConfig(f'attack rates must be non-negative: {config.attack_mix}')
    if not 0 < config.attack_rate_min <= config.attack_rate_max:
        raise InvalidConfig(f'invalid attack rate range [{config.attack_rate_min}, {config.attack_rate_max}]')
    if config.benign_rate < 0 or config.gateway_service_rate < 0:
        raise InvalidConfig('packet rates must be non-negative')
    if not 0 <= config.theta_lo < config.theta_hi <= 1:
        raise InvalidConfig(f'invalid triage band [{config.theta_lo}, {config.theta_hi}]')
    positive_intervals = {'migration_interval': config.migration_interval,
                          'retrain_interval': config.retrain_interval,
                          'block_interval': config.block_interval,
                          'key_lifetime': config.key_lifetime,
                          'honeypot_lifetime': config.honeypot_lifetime}
    bad = [name for name, value in positive_intervals.items() if value <= 0]
    if bad:
        raise InvalidConfig(f'intervals must be positive: {", ".join(bad)}')
    if config.servers_per_profile < 1 or config.server_slots < 1 or config.session_events < 1:
        raise InvalidConfig('servers_per_profile, server_slots and session_events must be at least 1')


def config_hash(config: SimConfig) -> str:
    values = dataclasses.asdict(config)
    values['attack_mix'] = {kind.value: rate for kind, rate in config.attack_mix.items()}
    text = json.dumps(values, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def parse_attack_mix(value: str) -> Dict[AttackerKind, float]:
    mix = dict()
    for kind, rate in parse_kv_csv(value).items():
        mix[AttackerKind(kind)] = float(rate)
    return mix


def check_config(config_path: str) -> configparser.ConfigParser:
    config = configparser.ConfigParser(converters={'csv': parse_csv})
    if not config.read(config_path):
        logging.error(f'Can not read config file: {config_path}')
        return configparser.ConfigParser()
    try:
        for option in ('iot_users', 'iot_devices', 'edge_gateways', 'cloud_servers', 'malicious_nodes', 'seed'):
            config.getint('network', option)
        config.getfloat('network', 'sim_time')
        [int(v) for v in config.getcsv('packets', 'packet_sizes')]
        config.getfloat('packets', 'benign_rate')
        config.getcsv('security', 'attack_families')
        parse_attack_mix(config.get('security', 'attack_mix'))
        config.getcsv('ids', 'known_families')
        config.getint('ids', 'forest_trees')
        config.getfloat('trust', 'migration_interval')
        config.getfloat('honeynet', 'lifetime')
        config.getboolean('feedback', 'enabled')
    except configparser.NoSectionError as e:
        logging.error(f'Missing section in config file: {e}')
        return configparser.ConfigParser()
    except configparser.NoOptionError as e:
        logging.error(f'Missing option in config file: {e}')
        return configparser.ConfigParser()
    except ValueError as e:
        logging.error(f'Invalid value in config file: {e}')
        return configparser.ConfigParser()
    return config


def sim_config_from_parser(config: configparser.ConfigParser) -> SimConfig:
    """Build a SimConfig from a checked parser. Options absent from the
    file keep their defaults."""
    d = SimConfig()

    def num(section, option, default):
        if isinstance(default, int) and not isinstance(default, bool):
            return config.getint(section, option, fallback=default)
        return config.getfloat(section, option, fallback=default)

    weights = config.getcsv('trust', 'fitness_weights', fallback=None)
    sim = SimConfig(
        iot_users=num('network', 'iot_users', d.iot_users),
        iot_devices=num('network', 'iot_devices', d.iot_devices),
        edge_gateways=num('network', 'edge_gateways', d.edge_gateways),
        cloud_servers=num('network', 'cloud_servers', d.cloud_servers),
        sim_time=num('network', 'sim_time', d.sim_time),
        malicious_nodes=num('network', 'malicious_nodes', d.malicious_nodes),
        seed=num('network', 'seed', d.seed),
        servers_per_profile=num('network', 'servers_per_profile', d.servers_per_profile),
        server_slots=num('network', 'server_slots', d.server_slots),
        validators=num('network', 'validators', d.validators),
        quorum=num('network', 'quorum', d.quorum),
        key_lifetime=num('network', 'key_lifetime', d.key_lifetime),
        block_interval=num('network', 'block_interval', d.block_interval),
        packet_sizes=tuple(int(v) for v in config.getcsv('packets', 'packet_sizes')),
        benign_rate=num('packets', 'benign_rate', d.benign_rate),
        attack_rate_min=num('packets', 'attack_rate_min', d.attack_rate_min),
        attack_rate_max=num('packets', 'attack_rate_max', d.attack_rate_max),
        gateway_service_rate=num('packets', 'gateway_service_rate', d.gateway_service_rate),
        attack_families=tuple(config.getcsv('security', 'attack_families')),
        attack_mix=parse_attack_mix(config.get('security', 'attack_mix')),
        known_families=tuple(config.getcsv('ids', 'known_families')),
        train_benign=num('ids', 'train_benign', d.train_benign),
        train_attack=num('ids', 'train_attack', d.train_attack),
        forest_trees=num('ids', 'forest_trees', d.forest_trees),
        h0=num('ids', 'h0', d.h0),
        refine_passes=num('ids', 'refine_passes', d.refine_passes),
        theta_lo=num('ids', 'theta_lo', d.theta_lo),
        theta_hi=num('ids', 'theta_hi', d.theta_hi),
        feature_shift=num('ids', 'feature_shift', d.feature_shift),
        feature_noise=num('ids', 'feature_noise', d.feature_noise),
        aids_train_rows=num('ids', 'aids_train_rows', d.aids_train_rows),
        aids_epochs=num('ids', 'aids_epochs', d.aids_epochs),
        aids_hidden=num('ids', 'aids_hidden', d.aids_hidden),
        image_width=num('ids', 'image_width', d.image_width),
        image_height=num('ids', 'image_height', d.image_height),
        positive_change=num('trust', 'positive_change', d.positive_change),
        negative_change=num('trust', 'negative_change', d.negative_change),
        migration_interval=num('trust', 'migration_interval', d.migration_interval),
        heap_arity=num('trust', 'heap_arity', d.heap_arity),
        fitness_weights=tuple(float(w) for w in weights) if weights else d.fitness_weights,
        honeypot_lifetime=num('honeynet', 'lifetime', d.honeypot_lifetime),
        session_events=num('honeynet', 'session_events', d.session_events),
        feedback=config.getboolean('feedback', 'enabled', fallback=d.feedback),
        retrain_interval=num('feedback', 'retrain_interval', d.retrain_interval),
        holdout_family=config.get('feedback', 'holdout_family', fallback=d.holdout_family),
        holdout_rows=num('feedback', 'holdout_rows', d.holdout_rows),
    )
    validate_sim_config(sim)
    return sim


def load_sim_config(config_path: str) -> SimConfig:
    config = check_config(config_path)
    if not config.sections():
        raise InvalidConfig(f'invalid scenario file: {config_path}')
    return sim_config_from_parser(config)
