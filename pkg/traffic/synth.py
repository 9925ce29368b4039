import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from traffic.flows import (ATTACK_FAMILIES, ClassLabel, Dataset, FeatureSchema, FlowRecord, Split,
                           default_schema)


class InvalidConfig(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    """Settings for the synthetic flow generator.

    Every attack family raises the mean of its own block of `block`
    consecutive features by `shift` standard deviations; blocks follow
    ATTACK_FAMILIES order. Families not in ATTACK_FAMILIES are placed after
    the known ones."""
    benign: int
    attacks: Dict[str, int] = field(default_factory=dict)
    noise: float = 1.0
    shift: float = 2.0
    block: int = 5
    loc: float = 10.0
    interval_us: int = 1000

    @property
    def attack_total(self) -> int:
        return sum(self.attacks.values())


def validate_config(config: SynthConfig, n_features: int) -> None:
    if config.benign < 0 or any(count < 0 for count in config.attacks.values()):
        logging.error(f'Negative record count in generator config: {config}')
        raise InvalidConfig('record counts must be non-negative')
    if config.benign + config.attack_total == 0:
        logging.error('Generator config requests zero records')
        raise InvalidConfig('at least one record must be requested')
    if config.noise <= 0 or config.block < 1 or config.interval_us < 0:
        raise InvalidConfig(f'invalid generator parameters: {config}')
    for family in config.attacks:
        start = family_block_start(config, family)
        if start + config.block > n_features:
            logging.error(f'Feature block of family {family} exceeds {n_features} features')
            raise InvalidConfig(f'not enough features for family {family}')


def family_block_start(config: SynthConfig, family: str) -> int:
    if family in ATTACK_FAMILIES:
        return ATTACK_FAMILIES.index(family) * config.block
    extra = sorted(f for f in config.attacks if f not in ATTACK_FAMILIES)
    if family not in extra:
        extra = sorted(extra + [family])
    return (len(ATTACK_FAMILIES) + extra.index(family)) * config.block


def family_shift_vector(config: SynthConfig, family: Optional[str], n_features: int = 46) -> np.ndarray:
    """Mean feature vector the generator uses for `family` (None for benign)."""
    mean = np.full(n_features, config.loc, dtype=np.float64)
    if family is None:
        return mean
    start = family_block_start(config, family)
    mean[start:start + config.block] += config.shift * config.noise
    return mean


def draw_features(rng: np.random.Generator, config: SynthConfig, family: Optional[str], count: int,
                  n_features: int = 46) -> np.ndarray:
    """Draw `count` feature rows from the benign (family None) or attack
    distribution."""
    mean = family_shift_vector(config, family, n_features)
    return mean + config.noise * rng.standard_normal((count, n_features))


def synth_traffic(config: SynthConfig, seed: int, schema: FeatureSchema = None) -> Dataset:
    if schema is None:
        schema = default_schema()
    validate_config(config, schema.length)
    rng = np.random.default_rng(seed)

    blocks = [draw_features(rng, config, None, config.benign, schema.length)]
    labels = [ClassLabel.benign()] * config.benign
    for family in sorted(config.attacks):
        count = config.attacks[family]
        blocks.append(draw_features(rng, config, family, count, schema.length))
        labels.extend([ClassLabel.attack(family)] * count)
    values = np.concatenate(blocks, axis=0)
    order = rng.permutation(len(labels))

    records = list()
    for i, idx in enumerate(order):
        records.append(FlowRecord(f'syn-{seed}-{i:06d}',
                                  tuple(float(v) for v in values[idx]),
                                  labels[idx],
                                  i * config.interval_us))
    logging.info(f'Generated {config.benign} benign and {config.attack_total} attack records (seed {seed})')
    return Dataset(tuple(records), schema, Split.UNSPLIT)
