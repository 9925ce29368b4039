import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn import metrics

FATES = ('dropped_auth', 'dropped_sids', 'dropped_aids', 'delivered', 'honeypot')
REPORT_COLUMNS = ('config_hash', 'seed', 'malicious_nodes', 'tp', 'fp', 'tn', 'fn', 'detection_rate',
                  'accuracy', 'fnr', 'precision', 'recall', 'auc', 'holdout_detection_rate') + FATES


class OneClass(ValueError):
    pass


@dataclass(frozen=True)
class Outcome:
    truth: int
    decision: int
    score: float


@dataclass(frozen=True)
class RocCurve:
    points: Tuple[Tuple[float, float], ...]
    auc: float


@dataclass
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    detection_rate: Optional[float]
    accuracy: Optional[float]
    fnr: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    roc: Optional[RocCurve] = None
    wall_time: float = 0.0
    cpu_time: float = 0.0
    peak_memory: int = 0
    fates: dict = field(default_factory=dict)
    holdout_detection_rate: Optional[float] = None
    config_hash: str = ''
    seed: int = 0
    malicious_nodes: int = 0

    @property
    def auc(self) -> Optional[float]:
        return self.roc.auc if self.roc else None

    def row(self) -> dict:
        ret = {'config_hash': self.config_hash, 'seed': self.seed, 'malicious_nodes': self.malicious_nodes,
               'tp': self.tp, 'fp': self.fp, 'tn': self.tn, 'fn': self.fn,
               'detection_rate': self.detection_rate, 'accuracy': self.accuracy, 'fnr': self.fnr,
               'precision': self.precision, 'recall': self.recall, 'auc': self.auc,
               'holdout_detection_rate': self.holdout_detection_rate}
        for fate in FATES:
            ret[fate] = self.fates.get(fate, 0)
        return ret


def ratio(numerator: int, denominator: int) -> Optional[float]:
    """None stands for a metric that is not applicable."""
    if denominator == 0:
        return None
    return numerator / denominator


def metrics_from_counts(tp: int, fp: int, tn: int, fn: int) -> MetricsReport:
    return MetricsReport(tp, fp, tn, fn,
                         detection_rate=ratio(tp, tp + fn),
                         accuracy=ratio(tp + tn, tp + tn + fp + fn),
                         fnr=ratio(fn, tp + fn),
                         precision=ratio(tp, tp + fp),
                         recall=ratio(tp, tp + fn))


def compute_metrics(outcomes: Iterable[Outcome]) -> MetricsReport:
    outcomes = list(outcomes)
    if not outcomes:
        return metrics_from_counts(0, 0, 0, 0)
    truths = [o.truth for o in outcomes]
    decisions = [o.decision for o in outcomes]
    tn, fp, fn, tp = (int(v) for v in metrics.confusion_matrix(truths, decisions, labels=[0, 1]).ravel())
    report = metrics_from_counts(tp, fp, tn, fn)
    try:
        report.roc = roc_curve([o.score for o in outcomes], truths)
    except OneClass:
        logging.debug('ROC not applicable: outcomes hold a single class')
    return report


def roc_curve(scores: Sequence[float], truths: Sequence[int]) -> RocCurve:
    truths = np.asarray(truths, dtype=np.int64)
    if truths.sum() == 0 or truths.sum() == len(truths):
        raise OneClass('ROC needs at least one positive and one negative sample')
    fpr, tpr, _ = metrics.roc_curve(truths, np.asarray(scores, dtype=np.float64), drop_intermediate=False)
    points = tuple((float(x), float(y)) for x, y in zip(fpr, tpr))
    return RocCurve(points, float(metrics.auc(fpr, tpr)))


def write_report_csv(reports: Iterable[MetricsReport], path: str) -> int:
    frame = pd.DataFrame([r.row() for r in reports], columns=list(REPORT_COLUMNS))
    frame.to_csv(path, index=False, float_format='%.6f')
    logging.info(f'Wrote {len(frame)} report rows to {path}')
    return len(frame)


def write_roc_csv(roc: RocCurve, path: str) -> int:
    frame = pd.DataFrame(roc.points, columns=['fpr', 'tpr'])
    frame.to_csv(path, index=False, float_format='%.6f')
    return len(frame)


def write_resources_csv(reports: Iterable[MetricsReport], path: str) -> int:
    frame = pd.DataFrame([{'seed': r.seed, 'malicious_nodes': r.malicious_nodes, 'wall_time': r.wall_time,
                           'cpu_time': r.cpu_time, 'peak_memory': r.peak_memory} for r in reports])
    frame.to_csv(path, index=False)
    return len(frame)


def read_report_csv(path: str) -> List[dict]:
    frame = pd.read_csv(path, dtype={'config_hash': str})
    missing = [c for c in REPORT_COLUMNS if c not in frame.columns]
    if missing:
        logging.error(f'Report {path} lacks columns {missing}')
        raise ValueError(f'{path} is not a metrics report: missing {", ".join(missing)}')
    return frame.to_dict('records')
