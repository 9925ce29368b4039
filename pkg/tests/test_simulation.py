import dataclasses
import os
import pathlib

import numpy as np
import pytest

from honeynet.honeypots import ActionCode, SessionEvent, capture
from honeynet.sealed_log import EmptyLog, seal_pattern
from simulation import config as sim_config
from simulation.config import AttackerKind, SimConfig, config_hash, load_sim_config, validate_sim_config
from simulation.engine import (REPLAY_POOL_SIZE, Inspection, PacketFate, build_topology, inject_attacks, run,
                               simulate, sweep_attackers, train_ids, training_set)
from simulation.feedback import feedback_cycle
from simulation.metrics import (FATES, OneClass, Outcome, compute_metrics, metrics_from_counts, read_report_csv,
                                roc_curve, write_report_csv, write_roc_csv)
from traffic.synth import InvalidConfig, draw_features

CONF_DIR = os.path.join(os.path.dirname(sim_config.__file__), 'conf')


def small(**overrides) -> SimConfig:
    base = SimConfig(iot_users=6, iot_devices=6, edge_gateways=2, malicious_nodes=2, sim_time=5.0,
                     attack_mix={}, train_benign=600, train_attack=80, forest_trees=10, refine_passes=1,
                     aids_train_rows=200, aids_epochs=2, holdout_rows=100, feedback=False)
    return dataclasses.replace(base, **overrides)


class StubIds:
    """Pipeline stand-in that gives every packet the same verdict."""

    def __init__(self, fate: PacketFate, decision: int, score: float):
        self.verdict = Inspection(fate, decision, score)

    def copy(self):
        return self

    def inspect(self, fv):
        return self.verdict


DELIVER_ALL = StubIds(PacketFate.DELIVERED, 0, 0.0)
DROP_ALL = StubIds(PacketFate.DROPPED_SIDS, 1, 1.0)


@pytest.fixture(scope='module')
def train():
    return training_set(small())


@pytest.fixture(scope='module')
def pipeline(train):
    return train_ids(small(), train)


def stub_sim(train, ids=DELIVER_ALL, **overrides):
    return build_topology(small(**overrides), ids, train)


def test_default_scenario_actor_counts(train):
    sim = build_topology(SimConfig(holdout_rows=0), DELIVER_ALL, train)
    assert len(sim.nodes) == 100
    assert sum(n.creds.is_user for n in sim.nodes) == 50
    assert len(sim.gateways) == 6
    assert sorted(sim.fleet) == ['ge-0', 'le-0', 'le-1', 'le-2', 'le-3', 'le-4', 'le-5']
    assert sim.clouds == ['cloud-0']
    assert sim.ledger.registry_size == 100
    malicious = [n for n in sim.nodes if n.malicious]
    assert len(malicious) == 6
    assert not any(n.creds.is_user for n in malicious)
    assert {kind for kind, _ in sim.attackers} == set(AttackerKind)
    for node in sim.nodes:
        if not node.malicious:
            assert node.service in sim.fleet[sim.service_host[node.service]].services


def test_idle_simulation(train):
    sim = stub_sim(train, iot_users=0, iot_devices=0, malicious_nodes=0)
    report = run(sim, measure_memory=False)
    assert sim.injected == 0
    assert (report.tp, report.fp, report.tn, report.fn) == (0, 0, 0, 0)
    assert report.detection_rate is None and report.accuracy is None


def test_initial_state_is_seed_determined(train):
    first, second = stub_sim(train), stub_sim(train)
    assert first.state_digest() == second.state_digest()
    assert stub_sim(train, seed=2).state_digest() != first.state_digest()


def test_replayed_transactions_are_dropped(train):
    sim = stub_sim(train, iot_users=10, iot_devices=0, malicious_nodes=0, benign_rate=5.0, sim_time=10.0)
    inject_attacks(sim, AttackerKind.REPLAY, 1.0)
    run(sim, measure_memory=False)
    assert [reason for kind, reason in sim.attack_log if kind == AttackerKind.REPLAY] == ['Replay'] * 10


def test_replay_pool_keeps_only_recent_transactions(train):
    sim = stub_sim(train, iot_users=1, iot_devices=0, malicious_nodes=0)
    node = sim.nodes[0]
    sim.send_packet(node)
    oldest = sim.replay_pool[0]
    for _ in range(REPLAY_POOL_SIZE + 4):
        sim.send_packet(node)
    assert len(sim.replay_pool) == REPLAY_POOL_SIZE
    assert oldest not in sim.replay_pool
    inject_attacks(sim, AttackerKind.REPLAY, 5.0)
    run(sim, measure_memory=False)
    assert {reason for kind, reason in sim.attack_log if kind == AttackerKind.REPLAY} == {'Replay'}


def test_forged_tags_and_credentials_are_never_accepted(train):
    sim = stub_sim(train, iot_users=4, iot_devices=4, malicious_nodes=0)
    inject_attacks(sim, AttackerKind.IMPERSONATION, 5.0)
    inject_attacks(sim, AttackerKind.FUZZING, 5.0)
    run(sim, measure_memory=False)
    reasons = dict()
    for kind, reason in sim.attack_log:
        reasons.setdefault(kind, list()).append(reason)
    assert reasons[AttackerKind.IMPERSONATION] == ['BadTag'] * 25
    assert reasons[AttackerKind.FUZZING] == ['Unregistered'] * 25


def test_flood_queue_growth_matches_injection(train):
    sim = stub_sim(train, iot_users=2, iot_devices=0, malicious_nodes=0, benign_rate=0.0,
                   gateway_service_rate=0.0, sim_time=10.0)
    inject_attacks(sim, AttackerKind.DDOS, 100.0)
    report = run(sim, measure_memory=False)
    assert sim.injected == 1000
    assert sum(g.peak_backlog for g in sim.gateways) == 1000
    assert report.fates == {'dropped_auth': 1000}


def test_served_and_shed_flood_requests_add_up(train):
    sim = stub_sim(train, iot_users=2, iot_devices=0, malicious_nodes=0, benign_rate=0.0,
                   gateway_service_rate=50.0, sim_time=10.0)
    inject_attacks(sim, AttackerKind.DDOS, 100.0)
    run(sim, measure_memory=False)
    assert sum(g.served + g.shed for g in sim.gateways) == 1000
    assert all(g.backlog == 0 for g in sim.gateways)
    assert sum(g.served for g in sim.gateways) > 0


def test_inject_attacks_rejects_negative_rates(train):
    with pytest.raises(ValueError):
        inject_attacks(stub_sim(train), AttackerKind.DDOS, -1.0)


def test_zero_attackers_leave_detection_not_applicable(train):
    sim = stub_sim(train, malicious_nodes=0)
    report = run(sim, measure_memory=False)
    assert report.tp + report.fn == 0
    assert report.detection_rate is None and report.fnr is None and report.precision is None
    assert report.accuracy == 1.0
    assert report.tn == len(sim.outcomes) > 0
    assert report.roc is None


def test_oracle_detects_all_malicious_traffic(train):
    sim = stub_sim(train, DROP_ALL, iot_users=0, iot_devices=4, malicious_nodes=4)
    report = run(sim, measure_memory=False)
    assert report.detection_rate == 1.0
    assert report.fates == {'dropped_sids': len(sim.outcomes)}


def test_run_guards(train):
    sim = stub_sim(train)
    with pytest.raises(ValueError):
        run(sim, duration=6.0)
    run(sim, duration=1.0, measure_memory=False)
    with pytest.raises(RuntimeError):
        run(sim)


def test_small_scenario_end_to_end(train, pipeline, tmp_path):
    config = small(attack_mix={AttackerKind.DDOS: 20.0, AttackerKind.REPLAY: 1.0})
    paths = list()
    for i in range(2):
        sim, report = simulate(config, pipeline.copy(), train, measure_memory=False)
        assert sum(sim.fates.values()) == sim.injected
        assert set(report.fates) <= set(FATES)
        assert len(sim.outcomes) == report.tp + report.fp + report.tn + report.fn
        assert sim.ledger.verify_chain()
        path = tmp_path / f'metrics-{i}.csv'
        write_report_csv([report], str(path))
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    rows = read_report_csv(str(paths[0]))
    assert rows[0]['config_hash'] == config_hash(config)
    assert rows[0]['malicious_nodes'] == 2


def test_detector_pipeline_drops_known_families(train, pipeline):
    sim = build_topology(small(iot_users=0, iot_devices=4, malicious_nodes=4, attack_families=('DoS',)),
                         pipeline.copy(), train)
    report = run(sim, measure_memory=False)
    assert report.detection_rate >= 0.8


def test_sweep_trains_once_and_varies_attackers():
    reports = sweep_attackers(small(), [0, 2], measure_memory=False)
    assert [r.malicious_nodes for r in reports] == [0, 2]
    assert reports[0].detection_rate is None
    assert len({r.config_hash for r in reports}) == 2


def test_metric_identities():
    report = metrics_from_counts(tp=9, fp=0, tn=0, fn=1)
    assert report.recall == pytest.approx(0.9)
    assert report.fnr == pytest.approx(0.1)
    assert report.precision == 1.0
    assert metrics_from_counts(tp=94, fp=5, tn=95, fn=6).accuracy == pytest.approx(0.945)


def test_confusion_counts_from_outcomes():
    outcomes = [Outcome(1, 1, 0.9), Outcome(1, 0, 0.2), Outcome(0, 1, 0.7), Outcome(0, 0, 0.1),
                Outcome(0, 0, 0.3)]
    report = compute_metrics(outcomes)
    assert (report.tp, report.fn, report.fp, report.tn) == (1, 1, 1, 2)
    assert report.roc is not None


def test_roc_reference_cases(tmp_path):
    assert roc_curve([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]).auc == 1.0
    assert roc_curve([0.5] * 4, [1, 0, 1, 0]).auc == 0.5
    rng = np.random.default_rng(0)
    random = roc_curve(rng.uniform(size=10_000), rng.integers(0, 2, 10_000))
    assert 0.48 <= random.auc <= 0.52
    with pytest.raises(OneClass):
        roc_curve([0.1, 0.2], [1, 1])
    path = tmp_path / 'roc.csv'
    roc = roc_curve([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    assert write_roc_csv(roc, str(path)) == len(roc.points)
    assert path.read_text().splitlines()[0] == 'fpr,tpr'


def test_report_reader_rejects_foreign_csv(tmp_path):
    path = tmp_path / 'other.csv'
    path.write_text('a,b\n1,2\n')
    with pytest.raises(ValueError):
        read_report_csv(str(path))


def test_feedback_on_empty_log(train):
    with pytest.raises(EmptyLog):
        feedback_cycle(stub_sim(train))


def test_feedback_cycle_learns_sealed_patterns(train, pipeline):
    sim = build_topology(small(feedback=True), pipeline.copy(), train)
    hp = sim.honeynet.deploy_honeypot('profile-0', ['profile-0'], 'le-0', 0)
    rng = np.random.default_rng(3)
    for i in range(60):
        rows = draw_features(rng, sim.synth, 'Web', 4, sim.schema.length)
        events = [SessionEvent(k + 1, ActionCode.REQUEST, b'GET /', tuple(row)) for k, row in enumerate(rows)]
        seal_pattern(capture(hp, events, 'Web', f'd-{i}'), sim.signer, sim.sign_params, sim.sealed_log, rng)
    before = sim.ids.forest
    summary = feedback_cycle(sim)
    assert summary.retrained and summary.patterns == 60 and summary.failures == ()
    assert summary.db_version == 1
    assert sim.ids.forest is not before
    assert summary.post_rate > summary.pre_rate

    again = feedback_cycle(sim)
    assert not again.retrained and again.patterns == 0
    assert again.pre_rate == again.post_rate == summary.post_rate


@pytest.mark.slow
def test_honeypot_feedback_raises_unseen_family_detection():
    config = load_sim_config(os.path.join(CONF_DIR, 'feedback_scenario.ini'))
    assert config.holdout_family not in config.known_families
    train = training_set(config)
    ids = train_ids(config, train)
    sim_on, on = simulate(dataclasses.replace(config, feedback=True), ids.copy(), train, measure_memory=False)
    _, off = simulate(dataclasses.replace(config, feedback=False), ids.copy(), train, measure_memory=False)
    assert any(cycle.retrained for cycle in sim_on.feedback_runs)
    assert on.holdout_detection_rate > off.holdout_detection_rate


def test_bundled_scenarios_load():
    ref = load_sim_config(os.path.join(CONF_DIR, 'reference_scenario.ini'))
    assert (ref.iot_users, ref.iot_devices, ref.edge_gateways, ref.cloud_servers) == (50, 50, 6, 1)
    assert ref.sim_time == 60.0 and ref.malicious_nodes == 6
    assert ref.attack_mix == {AttackerKind.FUZZING: 0.5, AttackerKind.IMPERSONATION: 0.5,
                          AttackerKind.REPLAY: 0.5, AttackerKind.DDOS: 5.0}
    assert ref.feedback and ref.honeypot_lifetime == 20.0
    assert sum(ref.fitness_weights) == pytest.approx(1.0)
    feedback = load_sim_config(os.path.join(CONF_DIR, 'feedback_scenario.ini'))
    assert feedback.attack_mix == {}
    assert feedback.attack_families == ('Web', 'DoS')


def test_incomplete_or_missing_scenario_files(tmp_path):
    path = tmp_path / 'broken.ini'
    path.write_text('[network]\niot_users = 5\n')
    with pytest.raises(InvalidConfig):
        load_sim_config(str(path))
    with pytest.raises(InvalidConfig):
        load_sim_config(str(tmp_path / 'absent.ini'))
    reference = pathlib.Path(CONF_DIR, 'reference_scenario.ini').read_text()
    path.write_text(reference.replace('malicious_nodes = 6', 'malicious_nodes = 60'))
    with pytest.raises(InvalidConfig):
        load_sim_config(str(path))


@pytest.mark.parametrize('overrides', [dict(iot_devices=-1), dict(sim_time=0.0), dict(malicious_nodes=7),
                                       dict(edge_gateways=0), dict(attack_families=()),
                                       dict(theta_lo=0.8, theta_hi=0.3), dict(migration_interval=0.0),
                                       dict(packet_sizes=()), dict(attack_rate_min=0.0)])
def test_invalid_scenarios(overrides):
    with pytest.raises(InvalidConfig):
        validate_sim_config(small(**overrides))


def test_config_hash_tracks_every_setting():
    assert config_hash(small()) == config_hash(small())
    assert config_hash(small()) != config_hash(small(seed=2))
    assert len(config_hash(small())) == 16
