"""Improved Random Forest: bootstrap trees over an active feature set that
is refined pass by pass.

Every pass ranks the active features by OOB-weighted impurity importance,
keeps a pool of important features, prunes unimportant features that fall
more than two standard deviations below their pool mean, promotes
unimportant features that reach the weakest important one, adapts the tree
count and regrows the forest on the surviving features.
"""
import enum
import logging
import math
import os
import pickle
import struct
from dataclasses import dataclass, replace
from typing import Dict, FrozenSet, List, Optional, Tuple

import lz4.frame
import numpy as np
from sklearn.tree import DecisionTreeClassifier

from traffic.flows import Dataset, EmptyDataset, dataset_matrix

FOREST_MAGIC = b'IRF1'
FOREST_FORMAT_VERSION = 1
DEFAULT_THETA_LO = 0.3
DEFAULT_THETA_HI = 0.8


class AllZero(ValueError):
    pass


class ForestFileError(ValueError):
    pass


class TriageClass(enum.Enum):
    NORMAL = 'Normal'
    MALICIOUS = 'Malicious'
    SUSPICIOUS = 'Suspicious'


@dataclass(frozen=True)
class TriageResult:
    label: TriageClass
    attack_vote: float


@dataclass(frozen=True)
class GrowthState:
    P: float = 0.5
    M_av: float = 1.0
    p_u: float = 0.5
    p_g: float = 0.5
    dh: int = 0
    dg: int = 0
    f: int = 2
    pass_n: int = 0

    def __post_init__(self):
        if not 0 < self.P < 1:
            raise ValueError(f'P must lie in (0, 1): {self.P}')
        if self.M_av < 1:
            raise ValueError(f'M_av must be at least 1: {self.M_av}')
        if not (0 <= self.p_u <= 1 and 0 <= self.p_g <= 1):
            raise ValueError(f'split probabilities must lie in [0, 1]: {self.p_u}, {self.p_g}')


@dataclass
class TreeModel:
    estimator: DecisionTreeClassifier
    features: Tuple[int, ...]
    oob_weight: float
    weights: Dict[int, float]

    @property
    def node_count(self) -> int:
        return int(self.estimator.tree_.node_count)

    def attack_votes(self, X: np.ndarray) -> np.ndarray:
        return self.estimator.predict(X[:, list(self.features)]) == 1


@dataclass
class Forest:
    trees: List[TreeModel]
    feature_set: FrozenSet[int]
    growth: GrowthState
    seed: int
    n_features: int

    @property
    def size(self) -> int:
        return len(self.trees)

    def attack_vote(self, X: np.ndarray) -> np.ndarray:
        """Fraction of trees voting Attack for every row of X."""
        X = np.atleast_2d(X)
        votes = np.zeros(X.shape[0])
        for tree in self.trees:
            votes += tree.attack_votes(X)
        return votes / len(self.trees)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.attack_vote(X) >= 0.5).astype(np.int64)

    def accuracy(self, dataset: Dataset) -> float:
        X, y = dataset_matrix(dataset)
        if not len(y):
            raise EmptyDataset('cannot score an empty dataset')
        return float((self.predict(X) == y).mean())


@dataclass(frozen=True)
class FeaturePools:
    important: FrozenSet[int]
    unimportant: FrozenSet[int]
    weights: Dict[int, float]
    alpha: float
    beta: float

    @classmethod
    def build(cls, important, unimportant, weights: Dict[int, float]) -> 'FeaturePools':
        rest = [weights.get(k, 0.0) for k in sorted(unimportant)]
        alpha, beta = (float(np.mean(rest)), float(np.std(rest))) if rest else (0.0, 0.0)
        return cls(frozenset(important), frozenset(unimportant), dict(weights), alpha, beta)

    @property
    def features(self) -> FrozenSet[int]:
        return self.important | self.unimportant

    def reweigh(self, weights: Dict[int, float]) -> 'FeaturePools':
        return FeaturePools.build(self.important, self.unimportant, weights)

    def remove(self, removed) -> 'FeaturePools':
        return FeaturePools.build(self.important, self.unimportant - set(removed), self.weights)

    def promote(self, promoted) -> 'FeaturePools':
        return FeaturePools.build(self.important | set(promoted), self.unimportant - set(promoted), self.weights)


def grow_tree(X: np.ndarray, y: np.ndarray, features: Tuple[int, ...], rng: np.random.Generator) -> TreeModel:
    n = X.shape[0]
    sample = rng.integers(0, n, n)
    oob = np.setdiff1d(np.arange(n), sample, assume_unique=False)
    estimator = DecisionTreeClassifier(max_features='sqrt',
                                       random_state=int(rng.integers(0, 2 ** 31 - 1)))
    columns = list(features)
    estimator.fit(X[sample][:, columns], y[sample])
    if len(oob):
        oob_weight = float((estimator.predict(X[oob][:, columns]) == y[oob]).mean())
    else:
        oob_weight = 1.0
    weights = {k: float(v) for k, v in zip(features, estimator.feature_importances_)}
    return TreeModel(estimator, features, oob_weight, weights)


def grow_forest(train: Dataset, Z: int, features, growth: GrowthState, seed: int, pass_n: int = 0) -> Forest:
    X, y = dataset_matrix(train)
    if not len(y):
        logging.error('Cannot grow a forest on an empty dataset')
        raise EmptyDataset('training set is empty')
    features = tuple(sorted(features))
    rng = np.random.default_rng([seed, pass_n])
    trees = [grow_tree(X, y, features, rng) for _ in range(Z)]
    M_av = max(1.0, float(np.mean([t.node_count for t in trees])))
    return Forest(trees, frozenset(features), replace(growth, M_av=M_av, pass_n=pass_n), seed, X.shape[1])


def train_forest(train: Dataset, Z0: int, params: GrowthState = None, seed: int = 0, features=None) -> Forest:
    """Grow Z0 bootstrap trees over the initial feature set (all features
    unless given)."""
    if Z0 < 1:
        raise ValueError(f'Z0 must be at least 1: {Z0}')
    if params is None:
        params = GrowthState()
    if features is None:
        features = range(train.schema.length)
    forest = grow_forest(train, Z0, features, params, seed)
    logging.info(f'Trained forest of {Z0} trees over {len(forest.feature_set)} features '
                 f'(M_av={forest.growth.M_av:.1f})')
    return forest


def combine_weights(tree_weights: List[Dict[int, float]], oob_weights: List[float], features) -> Dict[int, float]:
    """Sum per-tree importances scaled by tree OOB accuracy and normalize by
    the largest sum."""
    totals = {k: 0.0 for k in features}
    for weights, oob in zip(tree_weights, oob_weights):
        for k, w in weights.items():
            totals[k] = totals.get(k, 0.0) + w * oob
    top = max(totals.values(), default=0.0)
    if top <= 0:
        logging.error('Every feature has zero summed weight')
        raise AllZero('all feature weights are zero')
    return {k: v / top for k, v in totals.items()}


def feature_weights(forest: Forest) -> Dict[int, float]:
    return combine_weights([t.weights for t in forest.trees], [t.oob_weight for t in forest.trees],
                           forest.feature_set)


def partition_features(weights: Dict[int, float], h0: int) -> FeaturePools:
    if not 0 <= h0 <= len(weights):
        raise ValueError(f'h0 must lie in [0, {len(weights)}]: {h0}')
    ranked = sorted(weights, key=lambda k: (-weights[k], k))
    return FeaturePools.build(ranked[:h0], ranked[h0:], weights)


def prune_unimportant(pools: FeaturePools) -> FrozenSet[int]:
    if not pools.unimportant:
        return frozenset()
    threshold = pools.alpha - 2 * pools.beta
    return frozenset(k for k in pools.unimportant if pools.weights.get(k, 0.0) < threshold)


def promote_features(pools: FeaturePools) -> FrozenSet[int]:
    if not pools.important or not pools.unimportant:
        return frozenset()
    floor = min(pools.weights.get(k, 0.0) for k in pools.important)
    return frozenset(k for k in pools.unimportant if pools.weights.get(k, 0.0) >= floor)


def tree_bound_factor(Z: int, M_av: float, P: float) -> float:
    return Z * M_av * P ** (M_av - 1) * (1 - P ** M_av) ** (Z - 1)


def tree_delta(state: GrowthState, g: int, Z: int) -> int:
    """Signed number of trees to add for a forest of Z trees whose
    unimportant pool holds g features."""
    if g < 1:
        raise ValueError(f'g must be at least 1: {g}')
    l = tree_bound_factor(Z, state.M_av, state.P)
    numerator = state.p_u * state.dh + state.p_g * state.dg
    if numerator == 0:
        return 0
    magnitude = math.floor(abs(l * numerator / g))
    return magnitude if numerator > 0 else -magnitude


def refine_forest(forest: Forest, train: Dataset, h0: int, max_passes: int) -> Forest:
    if max_passes < 1:
        raise ValueError(f'max_passes must be at least 1: {max_passes}')
    pools: Optional[FeaturePools] = None
    growth = forest.growth
    for pass_n in range(1, max_passes + 1):
        try:
            weights = feature_weights(forest)
        except AllZero:
            logging.warning(f'Stopping refinement at pass {pass_n}: no feature carries weight')
            break
        if pools is None:
            pools = partition_features(weights, min(h0, len(weights)))
        else:
            pools = pools.reweigh(weights)
        g = len(pools.unimportant)
        if g < growth.f:
            logging.info(f'Refinement converged at pass {pass_n}: g={g} < f={growth.f}')
            break
        removed = prune_unimportant(pools)
        pools = pools.remove(removed)
        promoted = promote_features(pools)
        pools = pools.promote(promoted)
        growth = replace(growth, dh=len(promoted), dg=len(pools.unimportant) - g, pass_n=pass_n)
        Z = max(1, forest.size + tree_delta(growth, g, forest.size))
        logging.debug(f'Pass {pass_n}: removed {sorted(removed)}, promoted {sorted(promoted)}, Z={Z}')
        forest = grow_forest(train, Z, pools.features, growth, forest.seed, pass_n)
        growth = forest.growth
    logging.info(f'Refined forest keeps {len(forest.feature_set)} features with {forest.size} trees')
    return forest


def classify_votes(votes: np.ndarray, theta_lo: float, theta_hi: float) -> List[TriageClass]:
    if not 0 <= theta_lo < theta_hi <= 1:
        raise ValueError(f'need 0 <= theta_lo < theta_hi <= 1, got {theta_lo}, {theta_hi}')
    labels = list()
    for vote in votes:
        if vote >= theta_hi:
            labels.append(TriageClass.MALICIOUS)
        elif vote <= theta_lo:
            labels.append(TriageClass.NORMAL)
        else:
            labels.append(TriageClass.SUSPICIOUS)
    return labels


def classify_triage(forest: Forest, fv, theta_lo: float = DEFAULT_THETA_LO,
                    theta_hi: float = DEFAULT_THETA_HI) -> TriageResult:
    vote = float(forest.attack_vote(np.asarray(fv, dtype=np.float64))[0])
    return TriageResult(classify_votes([vote], theta_lo, theta_hi)[0], vote)


def detection_rate(forest: Forest, dataset: Dataset, family: str, theta_lo: float = DEFAULT_THETA_LO) -> float:
    """Share of `family` rows that triage does not pass as Normal."""
    rows = [r.features for r in dataset.records if r.label.family == family]
    if not rows:
        raise EmptyDataset(f'no rows of family {family}')
    votes = forest.attack_vote(np.array(rows, dtype=np.float64))
    return float((votes > theta_lo).mean())


def save_forest(forest: Forest, path: str) -> None:
    payload = lz4.frame.compress(pickle.dumps(forest, protocol=pickle.HIGHEST_PROTOCOL))
    with open(path, 'wb') as f:
        f.write(FOREST_MAGIC)
        f.write(struct.pack('<I', FOREST_FORMAT_VERSION))
        f.write(payload)
    logging.info(f'Saved forest of {forest.size} trees to {path}')


def load_forest(path: str) -> Forest:
    if not os.path.exists(path):
        logging.error(f'Forest file does not exist: {path}')
        raise FileNotFoundError(path)
    with open(path, 'rb') as f:
        magic = f.read(len(FOREST_MAGIC))
        if magic != FOREST_MAGIC:
            logging.error(f'Not a forest file: {path}')
            raise ForestFileError(f'bad magic {magic!r} in {path}')
        try:
            version, = struct.unpack('<I', f.read(4))
        except struct.error:
            logging.error(f'Truncated forest header: {path}')
            raise ForestFileError(f'truncated header in {path}')
        if version != FOREST_FORMAT_VERSION:
            raise ForestFileError(f'unsupported forest format version {version}')
        payload = f.read()
    try:
        forest = pickle.loads(lz4.frame.decompress(payload))
    except (RuntimeError, ValueError, pickle.UnpicklingError, EOFError, AttributeError, ImportError, IndexError) as e:
        logging.error(f'Corrupt forest payload in {path}: {e}')
        raise ForestFileError(f'corrupt payload in {path}') from e
    if not isinstance(forest, Forest):
        raise ForestFileError(f'{path} does not hold a forest')
    return forest
