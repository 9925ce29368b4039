import logging
from dataclasses import dataclass
from typing import Optional, Tuple

from honeynet.sealed_log import EmptyLog, SealedLog, harvest
from sids.forest import GrowthState, detection_rate
from sids.signatures import PROVENANCE_HONEYPOT, SignaturePattern, ingest_signatures, retrain_with_signatures


@dataclass(frozen=True)
class FeedbackSummary:
    time: int
    pre_rate: Optional[float]
    post_rate: Optional[float]
    patterns: int
    failures: Tuple[Tuple[int, str], ...]
    db_version: int
    retrained: bool


def holdout_rate(sim, forest) -> Optional[float]:
    if sim.holdout is None:
        return None
    return detection_rate(forest, sim.holdout, sim.config.holdout_family, sim.config.theta_lo)


def feedback_cycle(sim) -> FeedbackSummary:
    """Harvest the sealed entries added since the previous cycle, ingest
    the verified patterns and retrain the signature forest with them."""
    if not len(sim.sealed_log):
        logging.error('Feedback cycle started on an empty honeypot log')
        raise EmptyLog('no sealed honeypot patterns')
    config = sim.config
    fresh = SealedLog(sim.sealed_log.key, sim.sealed_log.entries[sim.harvested:])
    result = harvest(fresh, sim.signer.public(), sim.sign_params)
    sim.harvested = len(sim.sealed_log)

    forest = sim.ids.forest
    pre = holdout_rate(sim, forest)
    retrained = False
    if result.patterns:
        patterns = [SignaturePattern(p.family, p.feature_summary, PROVENANCE_HONEYPOT, p.source, verified=True)
                    for p in result.patterns]
        sim.db = ingest_signatures(sim.db, patterns)
        forest = retrain_with_signatures(sim.train_set, sim.db, config.forest_trees, GrowthState(),
                                         config.seed + sim.db.version, min(config.h0, sim.schema.length),
                                         max(1, config.refine_passes))
        sim.ids.forest = forest
        retrained = True
    post = holdout_rate(sim, forest)
    summary = FeedbackSummary(sim.now, pre, post, len(result.patterns), result.failures, sim.db.version, retrained)
    sim.feedback_runs.append(summary)
    logging.info(f'Feedback at {sim.now} us: {len(result.patterns)} patterns, {len(result.failures)} rejected, '
                 f'hold-out detection {pre} -> {post}')
    return summary
