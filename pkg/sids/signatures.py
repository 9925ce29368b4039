import logging
from dataclasses import dataclass, field
from typing import Iterable, Tuple

from sids.forest import Forest, GrowthState, refine_forest, train_forest
from traffic.flows import ClassLabel, Dataset, FlowRecord

PROVENANCE_DATASET = 'dataset'
PROVENANCE_HONEYPOT = 'honeypot'


class UnverifiedPattern(ValueError):
    pass


@dataclass(frozen=True)
class SignaturePattern:
    family: str
    features: Tuple[float, ...]
    provenance: str = PROVENANCE_HONEYPOT
    source: str = ''
    verified: bool = False


@dataclass(frozen=True)
class SignatureDB:
    patterns: Tuple[SignaturePattern, ...] = field(default_factory=tuple)
    version: int = 0

    def families(self) -> set:
        return {p.family for p in self.patterns}

    def training_rows(self) -> Tuple[FlowRecord, ...]:
        return tuple(FlowRecord(f'sig-{i}-{p.provenance}', tuple(p.features), ClassLabel.attack(p.family))
                     for i, p in enumerate(self.patterns))


def ingest_signatures(db: SignatureDB, patterns: Iterable[SignaturePattern]) -> SignatureDB:
    patterns = tuple(patterns)
    for p in patterns:
        if not p.verified:
            logging.error(f'Refusing unverified {p.family} pattern from {p.source or p.provenance}')
            raise UnverifiedPattern(f'{p.family} pattern from {p.source or p.provenance} is not verified')
    logging.info(f'Ingested {len(patterns)} patterns into signature DB version {db.version + 1}')
    return SignatureDB(db.patterns + patterns, db.version + 1)


def augmented_training_set(base_train: Dataset, db: SignatureDB) -> Dataset:
    return base_train.with_records(base_train.records + db.training_rows())


def retrain_with_signatures(base_train: Dataset, db: SignatureDB, Z0: int, params: GrowthState, seed: int,
                            h0: int, max_passes: int) -> Forest:
    """Retrain over the full initial feature set with every stored
    signature as an extra attack row, then refine."""
    train = augmented_training_set(base_train, db)
    logging.info(f'Retraining on {len(train)} rows ({len(train) - len(base_train)} from signatures)')
    forest = train_forest(train, Z0, params, seed)
    return refine_forest(forest, train, h0, max_passes)
