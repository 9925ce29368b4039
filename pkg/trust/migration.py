import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Tuple

from trust.hbo import DEFAULT_ARITY, FitnessWeights, NoFeasibleTarget, build_heap, select_target
from trust.servers import EdgeServer, classify_servers, local_servers, trust_threshold


class TargetDegraded(RuntimeError):
    pass


class CapacityExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class MigrationPlan:
    source: str
    target: str
    services: Tuple[str, ...]

    def __post_init__(self):
        if self.source == self.target:
            raise ValueError(f'migration source and target are both {self.source}')


@dataclass(frozen=True)
class MigrationResult:
    plan: MigrationPlan
    moved: int
    target_running: int
    threshold: float


def migrate(plan: MigrationPlan, fleet: Dict[str, EdgeServer], threshold: float = None) -> MigrationResult:
    """Move the plan's services from source to target, all or nothing."""
    source, target = fleet[plan.source], fleet[plan.target]
    if threshold is None:
        threshold = trust_threshold(fleet.values())
    if target.trust < threshold:
        logging.warning(f'Migration target {target.id} degraded: trust {target.trust:.3f} < {threshold:.3f}')
        raise TargetDegraded(f'{target.id} left the high-trust set')
    missing = set(plan.services) - source.services
    if missing:
        raise ValueError(f'{source.id} does not host {sorted(missing)}')
    moved = len(plan.services)
    if target.tasks_running + moved > target.slots_total:
        logging.warning(f'Migration to {target.id} needs {moved} slots, '
                        f'{target.slots_total - target.tasks_running} free')
        raise CapacityExceeded(f'{target.id} cannot host {moved} more services')
    source.services -= set(plan.services)
    target.services |= set(plan.services)
    target.tasks_running += moved
    source.tasks_running = max(0, source.tasks_running - moved)
    logging.info(f'Migrated {moved} services from {source.id} to {target.id}')
    return MigrationResult(plan, moved, target.tasks_running, threshold)


def plan_migration(servers: Iterable[EdgeServer], weights: FitnessWeights = FitnessWeights(),
                   arity: int = DEFAULT_ARITY) -> List[MigrationPlan]:
    """One plan per low-trust local server that still hosts services."""
    local = local_servers(servers)
    if not local:
        return list()
    threshold = trust_threshold(local)
    high, low = classify_servers(local, threshold)
    fleet_heap = build_heap(local, weights, arity, threshold)
    plans = list()
    for source in sorted(low, key=lambda s: s.id):
        if not source.services:
            continue
        try:
            target = select_target(fleet_heap, source, high)
        except NoFeasibleTarget:
            logging.info(f'Skipping migration of {source.id}: no feasible target')
            continue
        plans.append(MigrationPlan(source.id, target.id, tuple(sorted(source.services))))
    return plans
