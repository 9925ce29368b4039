"""Command-line entry point.

    python3 -m sentinel.cli ingest [--dataset CSV] [--schema FILE] [--config INI]
    python3 -m sentinel.cli train-sids [--dataset CSV] [--config INI] [--seed N]
    python3 -m sentinel.cli train-aids [--dataset CSV] [--config INI] [--seed N]
    python3 -m sentinel.cli simulate --config INI [--seed N] [--feedback on|off]
                                     [--sweep N | --malicious-sweep RANGE]
    python3 -m sentinel.cli report --out RUN_DIR
    python3 -m sentinel.cli verify-log --out RUN_DIR [--seed N]

Artifacts go to --out, which defaults to $NGWN_SENTINEL_OUT or ./out.
"""
import argparse
import configparser
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from typing import List, Optional

import pandas as pd

from aids.dcrnn import DcrnnModel, ModelShape, save_model
from aids.training import TrainConfig, accuracy, train
from honeynet.sealed_log import harvest, honeynet_keys, read_sealed_log, write_sealed_log
from ledger.chain import export_ledger
from sids.forest import refine_forest, save_forest, train_forest
from simulation.config import SimConfig, load_sim_config
from simulation.engine import simulate, sweep_attackers, training_set
from simulation.metrics import read_report_csv, write_report_csv, write_resources_csv, write_roc_csv
from traffic.flows import Dataset, default_schema, load_flow_csv, load_schema, split_dataset, write_flow_csv
from traffic.images import dataset_images, fit_scaler
from trust.hbo import fleet_fitness
from trust.servers import snapshot_fleet
from utils.helper_functions import parse_range_argument

VERBS = ('ingest', 'train-sids', 'train-aids', 'simulate', 'report', 'verify-log')
DEFAULT_OUT = 'out'
TRAIN_FRACTION = 0.7
METRICS_FILE = 'metrics.csv'
RUN_FILE = 'run.ini'
LOG_FILE = 'honeynet.hlog'


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class Command:
    verb: str
    options: dict = field(default_factory=dict)


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f'{self.prog}: {message}')


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog='sentinel')
    verbs = parser.add_subparsers(dest='verb', metavar='VERB', parser_class=ArgumentParser)
    verbs.required = True
    default_out = os.environ.get('NGWN_SENTINEL_OUT', DEFAULT_OUT)

    def add_verb(name: str, help_text: str) -> ArgumentParser:
        sub = verbs.add_parser(name, help=help_text)
        sub.add_argument('--out', default=default_out, help='output (or run) directory')
        return sub

    for name, help_text in (('ingest', 'load and clean a flow CSV, or synthesize one'),
                            ('train-sids', 'train and refine the signature forest'),
                            ('train-aids', 'train the anomaly model')):
        sub = add_verb(name, help_text)
        sub.add_argument('--dataset', help='CICIDS-2017 style flow CSV; synthetic flows if omitted')
        sub.add_argument('--schema', help='feature schema file, one column name per line')
        sub.add_argument('--config', help='scenario file supplying detector settings')
        sub.add_argument('--seed', type=int)

    sub = add_verb('simulate', 'run a scenario and write its metrics')
    sub.add_argument('--config', required=True, help='scenario file')
    sub.add_argument('--seed', type=int)
    sub.add_argument('--feedback', choices=('on', 'off'))
    runs = sub.add_mutually_exclusive_group()
    runs.add_argument('--sweep', type=int, help='number of consecutive seeds to run')
    runs.add_argument('--malicious-sweep',
                      help='malicious node counts as N, N1,N2,... or start:end:step')

    add_verb('report', 'print the metrics of a run directory')
    sub = add_verb('verify-log', 'decrypt and verify the sealed honeypot log of a run directory')
    sub.add_argument('--seed', type=int, help='run seed; read from run.ini if omitted')
    return parser


def parse_args(argv: List[str]) -> Command:
    args = build_parser().parse_args(argv)
    options = {k: v for k, v in vars(args).items() if k != 'verb'}
    if args.verb == 'simulate' and args.sweep is not None and args.sweep < 1:
        raise UsageError(f'--sweep must be at least 1: {args.sweep}')
    if args.verb == 'simulate' and args.malicious_sweep is not None:
        if not parse_range_argument(args.malicious_sweep):
            raise UsageError(f'invalid --malicious-sweep range: {args.malicious_sweep}')
    return Command(args.verb, options)


def setup_logging(out: str) -> None:
    os.makedirs(os.path.join(out, 'log'), exist_ok=True)
    FORMAT = '%(asctime)s %(levelname)s %(message)s'
    logging.basicConfig(
        format=FORMAT,
        filename=os.path.join(out, 'log', 'sentinel.log'),
        level=logging.INFO,
        datefmt='%Y-%m-%d %H:%M:%S'
    )
    logging.info(f'Started: {sys.argv}')


def scenario(options: dict) -> SimConfig:
    config = load_sim_config(options['config']) if options.get('config') else SimConfig()
    if options.get('seed') is not None:
        config = replace(config, seed=options['seed'])
    return config


def flows(options: dict, config: SimConfig) -> Dataset:
    if not options.get('dataset'):
        return training_set(config)
    schema = load_schema(options['schema']) if options.get('schema') else default_schema()
    return load_flow_csv(options['dataset'], schema)


def write_summary(rows: dict, path: str) -> None:
    pd.DataFrame([rows]).to_csv(path, index=False, float_format='%.6f')
    logging.info(f'Wrote summary to {path}')


def run_ingest(options: dict) -> int:
    config = scenario(options)
    dataset = flows(options, config)
    out = options['out']
    write_flow_csv(dataset, os.path.join(out, 'flows.csv'))
    summary = {'rows': len(dataset), 'benign': dataset.count(False), 'attack': dataset.count(True),
               'dropped': dataset.dropped_count, 'families': ';'.join(sorted(dataset.families()))}
    write_summary(summary, os.path.join(out, 'ingest_summary.csv'))
    print(f'{len(dataset)} flows ({dataset.dropped_count} dropped) written to {out}')
    return 0


def run_train_sids(options: dict) -> int:
    config = scenario(options)
    train_set, test_set = split_dataset(flows(options, config), TRAIN_FRACTION, config.seed)
    forest = train_forest(train_set, config.forest_trees, seed=config.seed)
    baseline = forest.accuracy(test_set)
    if config.refine_passes > 0:
        forest = refine_forest(forest, train_set, min(config.h0, train_set.schema.length), config.refine_passes)
    refined = forest.accuracy(test_set)
    save_forest(forest, os.path.join(options['out'], 'forest.irf'))
    write_summary({'train_rows': len(train_set), 'test_rows': len(test_set), 'trees': forest.size,
                   'features': len(forest.feature_set), 'baseline_accuracy': baseline,
                   'refined_accuracy': refined}, os.path.join(options['out'], 'sids_summary.csv'))
    print(f'forest of {forest.size} trees over {len(forest.feature_set)} features, '
          f'test accuracy {refined:.4f} (baseline {baseline:.4f})')
    return 0


def run_train_aids(options: dict) -> int:
    config = scenario(options)
    train_set, test_set = split_dataset(flows(options, config), TRAIN_FRACTION, config.seed)
    if config.aids_train_rows > 0:
        train_set = train_set.with_records(train_set.records[:config.aids_train_rows])
    scaler = fit_scaler(train_set)
    images, labels = dataset_images(train_set, scaler, config.image_width, config.image_height)
    shape = ModelShape(height=config.image_height, width=config.image_width, hidden=config.aids_hidden)
    model, losses = train(DcrnnModel.initialize(shape, config.seed), images, labels,
                          TrainConfig(epochs=max(1, config.aids_epochs), seed=config.seed))
    test_images, test_labels = dataset_images(test_set, scaler, config.image_width, config.image_height)
    score = accuracy(model, test_images, test_labels)
    save_model(model, os.path.join(options['out'], 'dcrnn.bin'))
    write_summary({'train_rows': len(train_set), 'test_rows': len(test_set), 'epochs': len(losses),
                   'final_loss': losses[-1], 'test_accuracy': score},
                  os.path.join(options['out'], 'aids_summary.csv'))
    print(f'anomaly model test accuracy {score:.4f}')
    return 0


def write_run_ini(config: SimConfig, options: dict, path: str) -> None:
    run = configparser.ConfigParser()
    run['run'] = {'config': options['config'], 'seed': str(config.seed),
                  'feedback': 'on' if config.feedback else 'off'}
    with open(path, 'w') as f:
        run.write(f)


def run_simulate(options: dict) -> int:
    config = scenario(options)
    if options.get('feedback'):
        config = replace(config, feedback=options['feedback'] == 'on')
    out = options['out']
    logging.info(f'Scenario {options["config"]} with seed {config.seed}, feedback {config.feedback}')
    if options.get('malicious_sweep'):
        reports = sweep_attackers(config, parse_range_argument(options['malicious_sweep']))
    elif options.get('sweep'):
        reports = [simulate(replace(config, seed=config.seed + i))[1] for i in range(options['sweep'])]
    else:
        sim, report = simulate(config)
        reports = [report]
        if report.roc is not None:
            write_roc_csv(report.roc, os.path.join(out, 'roc.csv'))
        write_sealed_log(sim.sealed_log, os.path.join(out, LOG_FILE))
        export_ledger(sim.ledger, os.path.join(out, 'ledger.jsonl'))
        servers = list(sim.fleet.values())
        snapshot_fleet(servers, os.path.join(out, 'fleet.csv'), fleet_fitness(servers, sim.weights))
    write_report_csv(reports, os.path.join(out, METRICS_FILE))
    write_resources_csv(reports, os.path.join(out, 'resources.csv'))
    write_run_ini(config, options, os.path.join(out, RUN_FILE))
    for report in reports:
        print(f'seed {report.seed} malicious {report.malicious_nodes}: detection {report.detection_rate} '
              f'accuracy {report.accuracy} hold-out {report.holdout_detection_rate}')
    return 0


def run_report(options: dict) -> int:
    rows = read_report_csv(os.path.join(options['out'], METRICS_FILE))
    print(pd.DataFrame(rows).to_string(index=False))
    return 0


def run_verify_log(options: dict) -> int:
    out = options['out']
    seed = options.get('seed')
    if seed is None:
        run = configparser.ConfigParser()
        if not run.read(os.path.join(out, RUN_FILE)):
            raise FileNotFoundError(f'{os.path.join(out, RUN_FILE)} missing; pass --seed')
        if not run.has_option('run', 'seed'):
            raise LookupError(f'{os.path.join(out, RUN_FILE)} has no [run] seed; pass --seed')
        seed = run.getint('run', 'seed')
    signer, key = honeynet_keys(seed)
    log = read_sealed_log(os.path.join(out, LOG_FILE), key)
    result = harvest(log, signer.public())
    if result.failures:
        for index, reason in result.failures:
            print(f'sentinel: verify-log: entry {index}: {reason}', file=sys.stderr)
        return 1
    print(f'{len(result.patterns)} sealed entries verified')
    return 0


HANDLERS = {'ingest': run_ingest, 'train-sids': run_train_sids, 'train-aids': run_train_aids,
            'simulate': run_simulate, 'report': run_report, 'verify-log': run_verify_log}


def execute(cmd: Command) -> int:
    out = cmd.options.get('out', DEFAULT_OUT)
    if cmd.verb in ('report', 'verify-log') and not os.path.isdir(out):
        print(f'sentinel: {cmd.verb}: run directory does not exist: {out}', file=sys.stderr)
        return 1
    setup_logging(out)
    logging.info(f'Verb {cmd.verb} with options {cmd.options}')
    try:
        return HANDLERS[cmd.verb](cmd.options)
    except UsageError as e:
        print(f'sentinel: {e}', file=sys.stderr)
        return 2
    except (ValueError, LookupError, OSError, RuntimeError, configparser.Error) as e:
        logging.error(f'{cmd.verb} failed: {type(e).__name__}: {e}')
        print(f'sentinel: {cmd.verb}: {type(e).__name__}: {e}', file=sys.stderr)
        return 1


def main(argv: Optional[List[str]] = None) -> int:
    try:
        cmd = parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as e:
        build_parser().print_usage(sys.stderr)
        print(f'sentinel: {e}', file=sys.stderr)
        return 2
    return execute(cmd)


if __name__ == '__main__':
    sys.exit(main())
