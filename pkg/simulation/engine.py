"""Discrete-event simulation of IoT traffic through an authenticating
gateway with a two-stage intrusion detector, a trust-managed edge fleet
and on-demand honeypots.

Time is kept in integer microseconds. Every actor is a simpy process; all
randomness comes from per-concern numpy generators seeded by the scenario
seed, so a scenario and seed fully determine a run.
"""
import collections
import enum
import hashlib
import itertools
import logging
import struct
import time
import tracemalloc
from dataclasses import dataclass, replace
from typing import Deque, Dict, Iterable, List, Optional, Tuple

import numpy as np
import simpy

from aids.dcrnn import DcrnnModel, ModelShape
from aids.training import SingleClass, TrainConfig, malicious_probability, train
from bliss.signature import SignParams
from honeynet.honeypots import ActionCode, Honeynet, SessionEvent, VirtualHoneypot, capture
from honeynet.sealed_log import EmptyLog, SealedLog, SigningFailed, honeynet_keys, seal_pattern
from ledger.chain import (HASH_SIZE, TAG_SIZE, Accepted, Credentials, Dropped, Ledger, SecretKey, Transaction,
                          generate_tag, make_transaction)
from ledger.cipher import PROFILE
from sids.forest import Forest, TriageClass, classify_triage, detection_rate, refine_forest, train_forest
from sids.signatures import SignatureDB
from simulation.config import US_PER_S, AttackerKind, SimConfig, config_hash, validate_sim_config
from simulation.feedback import feedback_cycle
from simulation.metrics import MetricsReport, Outcome, compute_metrics
from traffic.flows import Dataset
from traffic.images import FeatureScaler, dataset_images, fit_scaler
from traffic.synth import InvalidConfig, SynthConfig, draw_features, synth_traffic
from trust.hbo import FitnessWeights
from trust.migration import CapacityExceeded, TargetDegraded, migrate, plan_migration
from trust.servers import EdgeServer, Role, TrustEvent, local_servers

STREAMS = ('topology', 'traffic', 'tags', 'features', 'attackers', 'honeynet')
FAMILY_ACTIONS = {'DoS': ActionCode.FLOOD, 'DDoS': ActionCode.FLOOD, 'Scan': ActionCode.SCAN,
                  'Bot': ActionCode.CONNECT, 'Infiltration': ActionCode.EXFILTRATE,
                  'Web': ActionCode.REQUEST, 'Heartbleed': ActionCode.REQUEST}
# benign transactions kept for replay attackers; older ones are evicted
REPLAY_POOL_SIZE = 1024


class PacketFate(enum.Enum):
    DROPPED_AUTH = 'dropped_auth'
    DROPPED_SIDS = 'dropped_sids'
    DROPPED_AIDS = 'dropped_aids'
    DELIVERED = 'delivered'
    HONEYPOT = 'honeypot'


@dataclass(frozen=True)
class Inspection:
    fate: PacketFate
    decision: int
    score: float


class IdsPipeline:
    """Signature triage by the forest; only Suspicious vectors reach the
    anomaly model. Scores of anomaly decisions are mapped into the
    suspicious vote band so that one score orders every packet."""

    def __init__(self, forest: Forest, model: Optional[DcrnnModel], scaler: Optional[FeatureScaler],
                 theta_lo: float, theta_hi: float):
        self.forest = forest
        self.model = model
        self.scaler = scaler
        self.theta_lo = theta_lo
        self.theta_hi = theta_hi

    def copy(self) -> 'IdsPipeline':
        return IdsPipeline(self.forest, self.model, self.scaler, self.theta_lo, self.theta_hi)

    def inspect(self, fv: np.ndarray) -> Inspection:
        triage = classify_triage(self.forest, fv, self.theta_lo, self.theta_hi)
        if triage.label == TriageClass.MALICIOUS:
            return Inspection(PacketFate.DROPPED_SIDS, 1, triage.attack_vote)
        if triage.label == TriageClass.NORMAL or self.model is None:
            return Inspection(PacketFate.DELIVERED, 0, triage.attack_vote)
        p_normal, p_malicious = malicious_probability(self.model, fv, self.scaler)
        score = self.theta_lo + (self.theta_hi - self.theta_lo) * p_malicious
        if p_malicious > p_normal:
            return Inspection(PacketFate.DROPPED_AIDS, 1, score)
        return Inspection(PacketFate.DELIVERED, 0, score)


@dataclass
class Node:
    id: str
    creds: Credentials
    key: SecretKey
    gateway: int
    service: Optional[str] = None
    family: Optional[str] = None
    target: Optional[str] = None
    rate: float = 0.0

    @property
    def malicious(self) -> bool:
        return self.family is not None


@dataclass
class Gateway:
    id: str
    injected: int = 0
    served: int = 0
    shed: int = 0
    peak_backlog: int = 0

    @property
    def backlog(self) -> int:
        return self.injected - self.served - self.shed

    def inject(self) -> None:
        self.injected += 1
        self.peak_backlog = max(self.peak_backlog, self.backlog)


def feature_families(config: SimConfig) -> Tuple[str, ...]:
    return tuple(sorted(set(config.known_families) | set(config.attack_families) | {config.holdout_family}))


def feature_config(config: SimConfig, benign: int = 0, attacks: Dict[str, int] = None) -> SynthConfig:
    """Generator settings shared by training, hold-out and live traffic so
    that every family keeps the same feature block."""
    attacks = attacks or dict()
    counts = {family: attacks.get(family, 0) for family in feature_families(config)}
    return SynthConfig(benign, counts, noise=config.feature_noise, shift=config.feature_shift)


def training_set(config: SimConfig) -> Dataset:
    if not config.known_families or config.train_attack <= 0 or config.train_benign <= 0:
        logging.error('Detector training needs benign rows and at least one known attack family')
        raise InvalidConfig('known_families, train_benign and train_attack must be non-empty')
    attacks = {family: config.train_attack for family in config.known_families}
    return synth_traffic(feature_config(config, config.train_benign, attacks), config.seed)


def holdout_set(config: SimConfig) -> Optional[Dataset]:
    if config.holdout_rows <= 0:
        return None
    return synth_traffic(feature_config(config, 0, {config.holdout_family: config.holdout_rows}), config.seed + 1)


def train_ids(config: SimConfig, train_set: Dataset = None) -> IdsPipeline:
    if train_set is None:
        train_set = training_set(config)
    forest = train_forest(train_set, config.forest_trees, seed=config.seed)
    if config.refine_passes > 0:
        forest = refine_forest(forest, train_set, min(config.h0, train_set.schema.length), config.refine_passes)
    scaler = fit_scaler(train_set)
    model = None
    if config.aids_train_rows > 0 and config.aids_epochs > 0:
        subset = train_set.with_records(train_set.records[:config.aids_train_rows])
        images, labels = dataset_images(subset, scaler, config.image_width, config.image_height)
        shape = ModelShape(height=config.image_height, width=config.image_width, hidden=config.aids_hidden)
        try:
            model, _ = train(DcrnnModel.initialize(shape, config.seed), images, labels,
                             TrainConfig(epochs=config.aids_epochs, seed=config.seed))
        except SingleClass:
            logging.warning('Anomaly model not trained: the training subset holds a single class')
    return IdsPipeline(forest, model, scaler, config.theta_lo, config.theta_hi)


def exp_interval(rng: np.random.Generator, rate: float) -> int:
    return max(1, int(round(rng.exponential(1 / rate) * US_PER_S)))


class Sim:
    """State of one simulated deployment. Built by build_topology, driven
    by run."""

    def __init__(self, config: SimConfig, ids, train_set: Dataset):
        self.config = config
        self.env = simpy.Environment()
        self.streams = {name: np.random.default_rng([config.seed, i]) for i, name in enumerate(STREAMS)}
        self.ids = ids
        self.train_set = train_set
        self.holdout = holdout_set(config)
        self.schema = train_set.schema
        self.synth = feature_config(config)
        self.ledger = Ledger(config.seed, config.validators, config.quorum,
                             default_lifetime=config.us(config.key_lifetime))
        self.fleet: Dict[str, EdgeServer] = dict()
        self.service_host: Dict[str, str] = dict()
        self.nodes: List[Node] = list()
        self.gateways: List[Gateway] = list()
        self.clouds: List[str] = list()
        self.honeynet = Honeynet(config.us(config.honeypot_lifetime))
        self.sign_params = SignParams()
        self.signer, log_key = honeynet_keys(config.seed, self.sign_params)
        self.sealed_log = SealedLog(log_key)
        self.harvested = 0
        self.db = SignatureDB()
        self.sessions: Dict[Tuple[str, str], List[SessionEvent]] = dict()
        self.attackers: List[Tuple[AttackerKind, float]] = list()
        self.outcomes: List[Outcome] = list()
        self.fates = collections.Counter()
        self.attack_log: List[Tuple[AttackerKind, str]] = list()
        self.replay_pool: Deque[Transaction] = collections.deque(maxlen=REPLAY_POOL_SIZE)
        self.migrations = list()
        self.feedback_runs = list()
        self.injected = 0
        self.packet_ids = itertools.count()
        self.weights = FitnessWeights(*config.fitness_weights)
        self.started = False

    @property
    def now(self) -> int:
        return int(self.env.now)

    def state_digest(self) -> str:
        h = hashlib.sha256()
        for key_id in sorted(self.ledger.registry):
            h.update(bytes.fromhex(key_id))
        for node in self.nodes:
            h.update(f'{node.id},{node.gateway},{node.service},{node.family},{node.target},{node.rate!r}'.encode())
        for server in self.fleet.values():
            h.update(f'{server.id},{server.profile},{sorted(server.services)},{server.trust!r}'.encode())
        return h.hexdigest()

    def record(self, fate: PacketFate) -> None:
        self.fates[fate.value] += 1

    # Data plane

    def send_packet(self, node: Node) -> PacketFate:
        now = self.now
        self.injected += 1
        pid = next(self.packet_ids)
        size = self.config.packet_sizes[pid % len(self.config.packet_sizes)]
        payload = struct.pack('<QI', pid, size) + node.id.encode()
        if now > node.key.expires_at():
            self.ledger.renew(node.key.key_id, now)
        txn = make_transaction(node.key, generate_tag(node.key, self.streams['tags']), payload, now)
        result = self.ledger.submit_transaction(txn, now)
        if isinstance(result, Dropped):
            logging.warning(f'Packet {pid} from {node.id} dropped at auth: {result.reason.value}')
            self.record(PacketFate.DROPPED_AUTH)
            return PacketFate.DROPPED_AUTH
        if not node.malicious:
            self.replay_pool.append(txn)
        fv = draw_features(self.streams['features'], self.synth, node.family, 1, self.schema.length)[0]
        inspection = self.ids.inspect(fv)
        self.outcomes.append(Outcome(int(node.malicious), inspection.decision, inspection.score))
        if inspection.fate != PacketFate.DELIVERED:
            self.record(inspection.fate)
            return inspection.fate
        if node.malicious:
            server = self.fleet[node.target]
            decoy = self.honeynet.decoy_for(server.id)
            if decoy is not None:
                self.absorb(decoy, node, fv, payload)
                self.record(PacketFate.HONEYPOT)
                return PacketFate.HONEYPOT
            server.apply(TrustEvent.attack_involvement(self.config.negative_change))
        else:
            server = self.fleet[self.service_host[node.service]]
            server.apply(TrustEvent.benign_completion(self.config.positive_change))
        server.tasks_waiting += 1
        self.record(PacketFate.DELIVERED)
        return PacketFate.DELIVERED

    # Honeynet

    def absorb(self, hp: VirtualHoneypot, node: Node, fv: np.ndarray, payload: bytes) -> None:
        events = self.sessions.setdefault((hp.id, node.id), list())
        code = FAMILY_ACTIONS.get(node.family, ActionCode.REQUEST)
        events.append(SessionEvent(self.now - hp.deployed_at, code, payload, tuple(float(v) for v in fv)))
        if len(events) >= self.config.session_events:
            self.close_session(hp, node.id)

    def close_session(self, hp: VirtualHoneypot, attacker_id: str) -> None:
        events = self.sessions.pop((hp.id, attacker_id), list())
        if not events:
            return
        family = next(n.family for n in self.nodes if n.id == attacker_id)
        pattern = capture(hp, events, family, attacker_id)
        try:
            entry = seal_pattern(pattern, self.signer, self.sign_params, self.sealed_log, self.streams['honeynet'])
        except SigningFailed:
            return
        logging.debug(f'Sealed {family} session of {attacker_id} on {hp.id} as entry {entry.index}')

    def retire_honeypots(self, now: int) -> None:
        for hp in self.honeynet.active_honeypots():
            if now >= hp.retire_at:
                for _, attacker_id in sorted(k for k in self.sessions if k[0] == hp.id):
                    self.close_session(hp, attacker_id)
        self.honeynet.retire_expired(now)

    # Trust and migration

    def migration_round(self) -> None:
        now = self.now
        self.retire_honeypots(now)
        local = local_servers(self.fleet.values())
        if not local:
            return
        live_profiles = {s.profile for s in local}
        for plan in plan_migration(self.fleet.values(), self.weights, self.config.heap_arity):
            try:
                result = migrate(plan, self.fleet)
            except (TargetDegraded, CapacityExceeded) as e:
                logging.warning(f'Migration {plan.source} -> {plan.target} abandoned: {e}')
                continue
            for service in plan.services:
                self.service_host[service] = plan.target
            self.migrations.append((now, result))
            if self.honeynet.decoy_for(plan.source) is None:
                self.honeynet.deploy_honeypot(self.fleet[plan.source].profile, live_profiles, plan.source, now)
        for server in local:
            server.tasks_waiting = 0

    # Attackers on the authentication plane

    def forged_transaction(self, key_id: str) -> Transaction:
        rng = self.streams['attackers']
        return Transaction(key_id, rng.bytes(TAG_SIZE), rng.bytes(TAG_SIZE), rng.bytes(PROFILE.tweak_size),
                           self.ledger.default_lifetime, self.now, rng.bytes(HASH_SIZE))

    def attack(self, kind: AttackerKind) -> None:
        rng = self.streams['attackers']
        if kind == AttackerKind.DDOS:
            if self.gateways:
                self.injected += 1
                self.gateways[int(rng.integers(len(self.gateways)))].inject()
            return
        if kind == AttackerKind.REPLAY:
            if not self.replay_pool:
                logging.debug('Replay attacker has nothing recorded yet')
                return
            txn = self.replay_pool[int(rng.integers(len(self.replay_pool)))]
        elif kind == AttackerKind.IMPERSONATION and self.nodes:
            victim = self.nodes[int(rng.integers(len(self.nodes)))]
            txn = self.forged_transaction(victim.key.key_id)
        else:
            if self.nodes:
                victim = self.nodes[int(rng.integers(len(self.nodes)))].creds
                puf = bytes([victim.puf[0] ^ 0xFF]) + victim.puf[1:]
                creds = replace(victim, puf=puf)
            else:
                creds = Credentials(rng.bytes(16), 'fuzz', rng.bytes(6))
            txn = self.forged_transaction(creds.digest().hex())
        self.injected += 1
        self.submit_forged(kind, txn)

    def submit_forged(self, kind: AttackerKind, txn: Transaction) -> None:
        result = self.ledger.submit_transaction(txn, self.now)
        if isinstance(result, Accepted):
            logging.error(f'{kind.value} transaction from {txn.key_id[:16]} was accepted')
            self.attack_log.append((kind, 'Accepted'))
            self.record(PacketFate.DELIVERED)
            return
        self.attack_log.append((kind, result.reason.value))
        self.record(PacketFate.DROPPED_AUTH)

    def serve_flood_request(self, gateway: Gateway) -> None:
        gateway.served += 1
        self.submit_forged(AttackerKind.DDOS, self.forged_transaction(self.streams['attackers'].bytes(32).hex()))

    def shed_backlog(self) -> None:
        for gateway in self.gateways:
            backlog = gateway.backlog
            if backlog:
                gateway.shed += backlog
                self.fates[PacketFate.DROPPED_AUTH.value] += backlog
                self.attack_log.extend([(AttackerKind.DDOS, 'Shed')] * backlog)
                logging.info(f'{gateway.id} shed {backlog} queued flood requests at the horizon')


def node_traffic(env: simpy.Environment, sim: Sim, node: Node):
    rng = sim.streams['traffic']
    while True:
        yield env.timeout(exp_interval(rng, node.rate))
        sim.send_packet(node)


def attacker(env: simpy.Environment, sim: Sim, kind: AttackerKind, rate: float):
    period = max(1, sim.config.us(1 / rate))
    yield env.timeout(period // 2)
    while True:
        sim.attack(kind)
        yield env.timeout(period)


def gateway_service(env: simpy.Environment, sim: Sim, gateway: Gateway, rate: float):
    period = max(1, sim.config.us(1 / rate))
    while True:
        yield env.timeout(period)
        if gateway.backlog > 0:
            sim.serve_flood_request(gateway)


def block_miner(env: simpy.Environment, sim: Sim):
    period = sim.config.us(sim.config.block_interval)
    while True:
        yield env.timeout(period)
        if sim.ledger.pending:
            sim.ledger.mine_block()


def migration_rounds(env: simpy.Environment, sim: Sim):
    period = sim.config.us(sim.config.migration_interval)
    while True:
        yield env.timeout(period)
        sim.migration_round()


def feedback_rounds(env: simpy.Environment, sim: Sim):
    period = sim.config.us(sim.config.retrain_interval)
    while True:
        yield env.timeout(period)
        try:
            feedback_cycle(sim)
        except EmptyLog:
            logging.info(f'No sealed honeypot patterns at {sim.now} us; retraining skipped')


def build_topology(config: SimConfig, ids=None, train_set: Dataset = None) -> Sim:
    """Instantiate actors, register every node on the ledger and train the
    detectors unless a pipeline is supplied."""
    validate_sim_config(config)
    if config.seed < 0:
        raise InvalidConfig(f'seed must be non-negative: {config.seed}')
    if train_set is None:
        train_set = training_set(config)
    if ids is None:
        ids = train_ids(config, train_set)
    sim = Sim(config, ids, train_set)
    rng = sim.streams['topology']

    sim.fleet['ge-0'] = EdgeServer('ge-0', 'global', config.server_slots, role=Role.GLOBAL)
    local_ids = [f'le-{i}' for i in range(config.edge_gateways)]
    for i, server_id in enumerate(local_ids):
        sim.fleet[server_id] = EdgeServer(server_id, f'profile-{i // config.servers_per_profile}',
                                          config.server_slots)
    sim.gateways = [Gateway(f'gw-{i}') for i in range(config.edge_gateways)]
    sim.clouds = [f'cloud-{i}' for i in range(config.cloud_servers)]

    roster = [(f'u-{i}', True) for i in range(config.iot_users)]
    roster += [(f'd-{i}', False) for i in range(config.iot_devices)]
    for index, (node_id, is_user) in enumerate(roster):
        creds = Credentials(rng.bytes(16), node_id, rng.bytes(6), node_id if is_user else None)
        key = sim.ledger.register(creds, 0)
        sim.nodes.append(Node(node_id, creds, key, index % max(1, config.edge_gateways)))

    devices = [n for n in sim.nodes if not n.creds.is_user]
    chosen = sorted(int(i) for i in rng.choice(len(devices), config.malicious_nodes, replace=False))
    for j, index in enumerate(chosen):
        node = devices[index]
        node.family = config.attack_families[j % len(config.attack_families)]
        node.target = local_ids[j % len(local_ids)]
        node.rate = float(sim.streams['attackers'].uniform(config.attack_rate_min, config.attack_rate_max))
    benign = [n for n in sim.nodes if not n.malicious]
    for index, node in enumerate(benign):
        node.service = f'svc-{node.id}'
        node.rate = config.benign_rate
        server = sim.fleet[local_ids[index % len(local_ids)]]
        server.services.add(node.service)
        server.tasks_running += 1
        sim.service_host[node.service] = server.id
    overloaded = [s.id for s in sim.fleet.values() if s.tasks_running > s.slots_total]
    if overloaded:
        logging.error(f'Initial placement exceeds server slots on {overloaded}')
        raise InvalidConfig(f'not enough slots for the initial services on {", ".join(overloaded)}')

    for kind, rate in config.attack_mix.items():
        inject_attacks(sim, kind, rate)
    logging.info(f'Built topology: {config.iot_users} users, {config.iot_devices} devices '
                 f'({config.malicious_nodes} malicious), {len(local_ids)} local edge servers')
    return sim


def inject_attacks(sim: Sim, kind: AttackerKind, rate: float) -> None:
    if rate < 0:
        raise ValueError(f'attack rate must be non-negative: {rate}')
    if rate > 0:
        sim.attackers.append((kind, rate))


def holdout_detection(sim: Sim) -> Optional[float]:
    forest = getattr(sim.ids, 'forest', None)
    if forest is None or sim.holdout is None:
        return None
    return detection_rate(forest, sim.holdout, sim.config.holdout_family, sim.config.theta_lo)


def run(sim: Sim, duration: float = None, measure_memory: bool = True) -> MetricsReport:
    config = sim.config
    if duration is None:
        duration = config.sim_time
    if not 0 < duration <= config.sim_time:
        raise ValueError(f'duration {duration} outside (0, {config.sim_time}]')
    if sim.started:
        raise RuntimeError('simulation already ran')
    sim.started = True
    env = sim.env
    for node in sim.nodes:
        if node.rate > 0:
            env.process(node_traffic(env, sim, node))
    for kind, rate in sim.attackers:
        env.process(attacker(env, sim, kind, rate))
    if config.gateway_service_rate > 0:
        for gateway in sim.gateways:
            env.process(gateway_service(env, sim, gateway, config.gateway_service_rate))
    env.process(block_miner(env, sim))
    env.process(migration_rounds(env, sim))
    if config.feedback:
        env.process(feedback_rounds(env, sim))

    tracing = measure_memory and not tracemalloc.is_tracing()
    if tracing:
        tracemalloc.start()
    wall, cpu = time.perf_counter(), time.process_time()
    env.run(until=config.us(duration))
    sim.shed_backlog()
    wall, cpu = time.perf_counter() - wall, time.process_time() - cpu
    peak = 0
    if tracing:
        peak = tracemalloc.get_traced_memory()[1]
        tracemalloc.stop()

    report = compute_metrics(sim.outcomes)
    report.fates = dict(sim.fates)
    report.holdout_detection_rate = holdout_detection(sim)
    report.config_hash = config_hash(config)
    report.seed = config.seed
    report.malicious_nodes = config.malicious_nodes
    report.wall_time, report.cpu_time, report.peak_memory = wall, cpu, peak
    logging.info(f'Run finished: {sim.injected} packets, fates {dict(sim.fates)}, '
                 f'detection rate {report.detection_rate}, accuracy {report.accuracy}')
    return report


def simulate(config: SimConfig, ids=None, train_set: Dataset = None,
             measure_memory: bool = True) -> Tuple[Sim, MetricsReport]:
    sim = build_topology(config, ids, train_set)
    return sim, run(sim, measure_memory=measure_memory)


def sweep_attackers(config: SimConfig, counts: Iterable[int], measure_memory: bool = True) -> List[MetricsReport]:
    """One run per malicious-node count; the detectors are trained once."""
    train_set = training_set(config)
    pipeline = train_ids(config, train_set)
    reports = list()
    for count in counts:
        logging.info(f'Sweep run with {count} malicious nodes')
        _, report = simulate(replace(config, malicious_nodes=count), pipeline.copy(), train_set, measure_memory)
        reports.append(report)
    return reports
