import enum
import logging
import os
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from sklearn.model_selection import train_test_split

DEFAULT_SCHEMA_FILE = os.path.join(os.path.dirname(__file__), 'conf', 'cicids2017_schema.txt')
LABEL_COLUMN = 'Label'
FLOW_ID_COLUMN = 'Flow ID'
TIMESTAMP_COLUMN = 'Timestamp'
BENIGN_LABEL = 'BENIGN'
ATTACK_FAMILIES = ('DoS', 'DDoS', 'Web', 'Infiltration', 'Scan', 'Bot', 'Heartbleed')


class MissingFile(FileNotFoundError):
    pass


class SchemaMismatch(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


class LabelKind(enum.Enum):
    BENIGN = 'Benign'
    ATTACK = 'Attack'


class Split(enum.Enum):
    TRAIN = 'Train'
    TEST = 'Test'
    UNSPLIT = 'Unsplit'


@dataclass(frozen=True)
class ClassLabel:
    kind: LabelKind
    family: Optional[str] = None

    def __post_init__(self):
        if self.kind == LabelKind.BENIGN and self.family is not None:
            raise ValueError('Benign labels carry no attack family')

    @classmethod
    def benign(cls) -> 'ClassLabel':
        return cls(LabelKind.BENIGN)

    @classmethod
    def attack(cls, family: str) -> 'ClassLabel':
        return cls(LabelKind.ATTACK, family)

    @property
    def is_attack(self) -> bool:
        return self.kind == LabelKind.ATTACK

    def to_text(self) -> str:
        if not self.is_attack:
            return BENIGN_LABEL
        return self.family


def parse_label(text: str) -> ClassLabel:
    """Map a CICIDS-2017 label string to a ClassLabel.

    Sub-family labels ("DoS Hulk", "Web Attack - Brute Force", "PortScan")
    collapse onto their family; labels outside the known families keep
    their own text as family name."""
    value = text.strip()
    if value.upper() == BENIGN_LABEL:
        return ClassLabel.benign()
    lowered = value.lower()
    if lowered.startswith('ddos'):
        return ClassLabel.attack('DDoS')
    if lowered.startswith('dos'):
        return ClassLabel.attack('DoS')
    if lowered.startswith('web'):
        return ClassLabel.attack('Web')
    if 'scan' in lowered:
        return ClassLabel.attack('Scan')
    for family in ATTACK_FAMILIES:
        if lowered == family.lower():
            return ClassLabel.attack(family)
    logging.debug(f'Unknown attack label kept as family: {value}')
    return ClassLabel.attack(value)


@dataclass(frozen=True)
class FeatureSchema:
    names: Tuple[str, ...]

    def __post_init__(self):
        normalized = [normalize_column(name) for name in self.names]
        if len(set(normalized)) != len(normalized):
            raise ValueError(f'Duplicate feature names in schema: {self.names}')

    @property
    def length(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class FlowRecord:
    flow_id: str
    features: Tuple[float, ...]
    label: ClassLabel
    timestamp: int = 0


@dataclass(frozen=True)
class Dataset:
    records: Tuple[FlowRecord, ...]
    schema: FeatureSchema
    split: Split = Split.UNSPLIT
    dropped_count: int = field(default=0, compare=False)

    def __post_init__(self):
        for record in self.records:
            if len(record.features) != self.schema.length:
                raise SchemaMismatch(f'Record {record.flow_id} has {len(record.features)} features, '
                                     f'schema declares {self.schema.length}')

    def __len__(self) -> int:
        return len(self.records)

    def count(self, attack: bool) -> int:
        return sum(1 for r in self.records if r.label.is_attack == attack)

    def families(self) -> set:
        return {r.label.family for r in self.records if r.label.is_attack}

    def with_records(self, records, split: Split = None) -> 'Dataset':
        return Dataset(tuple(records), self.schema, self.split if split is None else split)


def normalize_column(name: str) -> str:
    return name.strip().lower()


def load_schema(path: str) -> FeatureSchema:
    """Read a schema file with one feature name per line."""
    if not os.path.exists(path):
        logging.error(f'Schema file does not exist: {path}')
        raise MissingFile(path)
    with open(path, 'r') as f:
        names = [line.strip() for line in f if line.strip()]
    return FeatureSchema(tuple(names))


def default_schema() -> FeatureSchema:
    return load_schema(DEFAULT_SCHEMA_FILE)


def vectorize(record: FlowRecord) -> np.ndarray:
    return np.asarray(record.features, dtype=np.float64)


def dataset_matrix(dataset: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    """Return the (records x features) matrix and 0/1 attack labels."""
    if not dataset.records:
        return np.zeros((0, dataset.schema.length)), np.zeros(0, dtype=np.int64)
    X = np.array([r.features for r in dataset.records], dtype=np.float64)
    y = np.array([int(r.label.is_attack) for r in dataset.records], dtype=np.int64)
    return X, y


def load_flow_csv(path: str, schema: FeatureSchema) -> Dataset:
    """Load a CICIDS-2017 style flow CSV.

    Columns are matched to the schema by trimmed, case-insensitive name, so
    the file may order them freely. Besides the schema only the label, flow id
    and timestamp columns may appear. Rows with a missing, non-numeric or
    non-finite feature cell are dropped and counted."""
    if not os.path.exists(path):
        logging.error(f'Flow CSV does not exist: {path}')
        raise MissingFile(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        logging.error(f'Flow CSV has no header: {path}')
        raise SchemaMismatch(f'{path}: no header row')
    columns = {normalize_column(c): c for c in frame.columns}
    missing = [name for name in schema.names if normalize_column(name) not in columns]
    if missing or normalize_column(LABEL_COLUMN) not in columns:
        logging.error(f'Header of {path} does not match schema. Missing: {missing}')
        raise SchemaMismatch(f'{path}: missing columns {missing or [LABEL_COLUMN]}')
    extra = set(columns) - {normalize_column(n) for n in schema.names} \
        - {normalize_column(c) for c in (LABEL_COLUMN, FLOW_ID_COLUMN, TIMESTAMP_COLUMN)}
    if extra:
        logging.error(f'Header of {path} has columns not in schema: {sorted(extra)}')
        raise SchemaMismatch(f'{path}: unexpected columns {sorted(extra)}')

    feature_columns = [columns[normalize_column(name)] for name in schema.names]
    raw = frame[feature_columns]
    numeric = raw.apply(pd.to_numeric, errors='coerce')
    valid = np.isfinite(numeric.to_numpy(dtype=np.float64)).all(axis=1)
    dropped = int((~valid).sum())
    if dropped:
        logging.warning(f'Dropped {dropped} rows with missing or non-numeric cells from {path}')
    # Python float parsing is correctly rounded, which keeps write/load exact.
    values = raw[valid].to_numpy(dtype=object).astype(np.float64)

    labels = frame.loc[valid, columns[normalize_column(LABEL_COLUMN)]].tolist()
    row_numbers = np.flatnonzero(valid)
    flow_ids = None
    if normalize_column(FLOW_ID_COLUMN) in columns:
        flow_ids = frame.loc[valid, columns[normalize_column(FLOW_ID_COLUMN)]].tolist()
    timestamps = None
    if normalize_column(TIMESTAMP_COLUMN) in columns:
        timestamps = frame.loc[valid, columns[normalize_column(TIMESTAMP_COLUMN)]].tolist()

    records = list()
    for idx, row in enumerate(values):
        flow_id = flow_ids[idx] if flow_ids is not None else f'row-{row_numbers[idx]}'
        timestamp = 0
        if timestamps is not None:
            try:
                timestamp = int(timestamps[idx])
            except ValueError:
                # CICIDS ships wall-clock dates here; they carry no scenario offset.
                timestamp = 0
        records.append(FlowRecord(flow_id,
                                  tuple(float(v) for v in row),
                                  parse_label(labels[idx]),
                                  timestamp))
    if not records:
        logging.error(f'No valid rows in {path}')
        raise EmptyDataset(path)
    logging.info(f'Loaded {len(records)} records from {path} ({dropped} dropped)')
    return Dataset(tuple(records), schema, Split.UNSPLIT, dropped)


def write_flow_csv(dataset: Dataset, path: str) -> int:
    """Write a dataset in the layout load_flow_csv reads back exactly."""
    header = [FLOW_ID_COLUMN, TIMESTAMP_COLUMN] + list(dataset.schema.names) + [LABEL_COLUMN]
    rows = [[r.flow_id, str(r.timestamp)] + [repr(float(v)) for v in r.features] + [r.label.to_text()]
            for r in dataset.records]
    frame = pd.DataFrame(rows, columns=header)
    frame.to_csv(path, index=False)
    logging.info(f'Wrote {len(rows)} records to {path}')
    return len(rows)


def split_dataset(dataset: Dataset, train_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """Deterministic split, stratified on the label text when every class
    has at least two members."""
    if not 0 < train_fraction < 1:
        raise ValueError(f'train_fraction must be in (0, 1): {train_fraction}')
    indices = np.arange(len(dataset.records))
    strata = [r.label.to_text() for r in dataset.records]
    _, counts = np.unique(strata, return_counts=True)
    stratify = strata if counts.min() >= 2 else None
    train_idx, test_idx = train_test_split(indices,
                                           train_size=train_fraction,
                                           random_state=seed % (2 ** 32),
                                           stratify=stratify)
    train = dataset.with_records((dataset.records[i] for i in sorted(train_idx)), Split.TRAIN)
    test = dataset.with_records((dataset.records[i] for i in sorted(test_idx)), Split.TEST)
    return train, test
