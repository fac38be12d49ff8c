"""Federated round loop: selection, local training, defense, aggregation, bookkeeping."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import metrics
from .attacks import AttackSchedule, choose_attackers, poisoned_view, static_schedule
from .data import Dataset, generate_synthetic, load_csv, partition_dirichlet, split_holdout
from .defenses import baselines, trident
from .defenses.trident import RatingPolicy, ValidationState
from .mathcore import (STREAM_ATTACKERS, STREAM_CLIENT, STREAM_DATA_TEST, STREAM_DATA_TRAIN,
                       STREAM_DEFENSE, STREAM_INIT, STREAM_PARTITION, STREAM_SELECTION,
                       STREAM_SPLIT, make_rng)
from .model import ModelParams, TrainConfig, init_params, predict, train_local
from .state import ClientRecord, new_records

log = logging.getLogger(__name__)

DEFENSES = ("fedavg", "krum", "tmean", "median", "foolsgold", "flame", "fedtrident")


@dataclass(frozen=True)
class ExperimentConfig:
    num_clients: int = 100
    clients_per_round: int = 20
    rounds: int = 60
    num_classes: int = 6
    feature_dim: int = 32
    hidden: int = 64
    # synthetic task; the scale is tuned so clean FedAvg reaches GAC ~0.91 while
    # a 30% flipping attack leaves a clear SRE / ASR gap
    train_samples_per_class: int = 10000
    test_samples_per_class: int = 500
    separation: float = 16.0
    noise: float = 8.0
    class_offset: float = 1.0
    validation_fraction: float = 0.1
    train_csv: str | None = None
    test_csv: str | None = None
    # federation and adversary
    alpha: float = 1.0
    malicious_fraction: float = 0.3
    attack_source: int = 3
    attack_target: int = 1
    attack_phases: tuple | None = None  # ((first, last, source, target), ...)
    defense: str = "fedtrident"
    train: TrainConfig = field(default_factory=TrainConfig)
    policy: RatingPolicy = field(default_factory=RatingPolicy)
    enable_validation: bool = True
    enable_exclusion: bool = True
    enable_remediation: bool = True
    baseline: baselines.BaselineConfig = field(default_factory=baselines.BaselineConfig)
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.defense not in DEFENSES:
            raise ValueError(f"unknown defense {self.defense!r}; expected one of {', '.join(DEFENSES)}")
        if self.num_clients < 1 or not 1 <= self.clients_per_round:
            raise ValueError("need num_clients >= 1 and clients_per_round >= 1")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if not 0 <= self.malicious_fraction < 0.5:
            raise ValueError(f"malicious_fraction must lie in [0, 0.5) (P < K/2), got {self.malicious_fraction}")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def schedule(self) -> AttackSchedule:
        T = max(self.rounds, 1)
        if self.attack_phases:
            from .attacks import dynamic_schedule
            sched = dynamic_schedule(self.attack_phases)
        else:
            sched = static_schedule(self.attack_source, self.attack_target, T)
        sched.validate_classes(self.num_classes)
        if sched.total_rounds < self.rounds:
            raise ValueError(f"attack schedule covers {sched.total_rounds} rounds, need {self.rounds}")
        return sched

    def replace(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    sre: float | None
    asr: float | None
    gac: float | None
    gas: float | None
    participants: tuple[int, ...]
    bad: tuple[int, ...]
    attackers_present: tuple[int, ...]
    blacklist_size: int
    newly_blacklisted: tuple[int, ...]
    source_neuron: int | None = None
    target_neuron: int | None = None
    reverted: bool = False
    ambiguous: bool = False
    density_ratio: float | None = None
    precision: float | None = None
    recall: float | None = None


@dataclass
class Environment:
    """Everything derived from the config and seed before round 1."""
    clients: list[Dataset]
    test: Dataset
    validation: Dataset
    attackers: frozenset[int]
    schedule: AttackSchedule
    initial: ModelParams


@dataclass
class SimulationState:
    t: int
    global_model: ModelParams
    records: dict[int, ClientRecord]
    validation: ValidationState = field(default_factory=ValidationState)
    foolsgold: baselines.FoolsGold | None = None

    @property
    def blacklist(self) -> list[int]:
        return sorted(k for k, r in self.records.items() if r.blacklisted)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rounds: list[RoundMetrics]
    final_model: ModelParams
    state: SimulationState
    env: Environment


def build_environment(config: ExperimentConfig) -> Environment:
    seed = config.seed
    E, d = config.num_classes, config.feature_dim
    if config.train_csv:
        train = load_csv(config.train_csv)
        test_all = load_csv(config.test_csv) if config.test_csv else train
        E = max(train.num_classes, test_all.num_classes, E)
        train = Dataset(train.features, train.labels, E)
        test_all = Dataset(test_all.features, test_all.labels, E)
        d = train.feature_dim
    else:
        train = generate_synthetic(E, d, config.train_samples_per_class, config.separation,
                                   config.noise, make_rng(seed, STREAM_DATA_TRAIN), config.class_offset)
        test_all = generate_synthetic(E, d, config.test_samples_per_class, config.separation,
                                      config.noise, make_rng(seed, STREAM_DATA_TEST), config.class_offset)
    test, validation = split_holdout(test_all, config.validation_fraction, make_rng(seed, STREAM_SPLIT))
    clients = partition_dirichlet(train, config.num_clients, config.alpha, make_rng(seed, STREAM_PARTITION))
    attackers = choose_attackers(config.num_clients, config.malicious_fraction, make_rng(seed, STREAM_ATTACKERS))
    initial = init_params(d, config.hidden, E, make_rng(seed, STREAM_INIT))
    return Environment(clients, test, validation, attackers, config.schedule(), initial)


def select_clients(pool: Sequence[int], m: int, rng: np.random.Generator) -> tuple[int, ...]:
    pool = sorted(int(k) for k in pool)
    if not pool:
        raise RuntimeError("no eligible clients left to select")
    if len(pool) <= m:
        return tuple(pool)
    pick = rng.choice(len(pool), size=m, replace=False)
    return tuple(sorted(pool[i] for i in pick))


def aggregate_uniform(models: Sequence[ModelParams]) -> ModelParams:
    if not models:
        raise ValueError("cannot aggregate an empty set of models")
    dims = {m.dims for m in models}
    if len(dims) != 1:
        raise ValueError("models have mismatched dimensions")
    return models[0].with_flat(np.mean(np.stack([m.flat for m in models]), axis=0))


def accumulate_update(record: ClientRecord, local: ModelParams, previous: ModelParams,
                      good_size: int | None = None) -> ClientRecord:
    """Add this round's ``local - previous`` to the client's history."""
    if local.dims != previous.dims:
        raise ValueError("dimension mismatch")
    delta = local.flat - previous.flat
    acc = delta.copy() if record.accumulated_update is None else record.accumulated_update + delta
    n = record.good_round_count + 1
    mean_size = record.mean_good_size
    if good_size is not None:
        mean_size += (good_size - mean_size) / n
    return replace(record, accumulated_update=acc, good_round_count=n, mean_good_size=mean_size)


def _train_one(args):
    k, t, model, data, train_cfg, seed = args
    if len(data) == 0:
        return model
    return train_local(model, data, train_cfg, make_rng(seed, (STREAM_CLIENT, k, t)))


def local_training(config: ExperimentConfig, env: Environment, model: ModelParams,
                   participants: Sequence[int], t: int, pool: ThreadPoolExecutor | None = None):
    jobs = [(k, t, model, poisoned_view(k, env.clients[k], env.schedule, env.attackers, t),
             config.train, config.seed) for k in participants]
    if pool is None:
        return [_train_one(j) for j in jobs]
    return list(pool.map(_train_one, jobs))  # map preserves input order


def evaluate_model(model: ModelParams, data: Dataset, source: int, target: int) -> dict:
    cm = metrics.confusion(data.labels, predict(model, data), data.num_classes)
    return metrics.evaluate(cm, source, target)


def run_round(state: SimulationState, config: ExperimentConfig, env: Environment,
              locals_hook=None, pool: ThreadPoolExecutor | None = None) -> tuple[SimulationState, RoundMetrics]:
    """Execute one round in the fixed order: select, train, detect, aggregate,
    accumulate, validate, rate/exclude/remediate, evaluate.

    ``locals_hook(t, participants, models) -> models`` lets tests substitute
    the uploaded local models.
    """
    t = state.t + 1
    prev = state.global_model
    eligible = [k for k, r in state.records.items() if not r.blacklisted]
    if len(eligible) < config.clients_per_round:
        log.warning("round %d: only %d eligible clients (< %d)", t, len(eligible), config.clients_per_round)
    participants = select_clients(eligible, config.clients_per_round, make_rng(config.seed, (STREAM_SELECTION, t)))
    models = local_training(config, env, prev, participants, t, pool)
    if locals_hook is not None:
        models = list(locals_hook(t, participants, models))
    by_id = dict(zip(participants, models))

    defense = config.defense
    detection = None
    good: tuple[int, ...] = tuple(participants)
    bad: tuple[int, ...] = ()
    if defense == "fedtrident" and len(participants) >= 2:
        detection = trident.detect(models, prev, participants)
        good, bad = detection.good, detection.bad
        candidate = aggregate_uniform([by_id[k] for k in good])
    elif defense == "krum" and len(participants) >= 2:
        candidate, chosen = baselines.krum(models)
        good = (participants[chosen],)
        bad = tuple(k for k in participants if k != participants[chosen])
    elif defense == "tmean":
        candidate = baselines.trimmed_mean(models, config.baseline.trim_fraction)
    elif defense == "median":
        candidate = baselines.coordinate_median(models)
    elif defense == "foolsgold":
        if state.foolsgold is None:
            state.foolsgold = baselines.FoolsGold(config.baseline.foolsgold_horizon)
        candidate, w = state.foolsgold.aggregate(models, prev, participants)
        bad = tuple(k for k, wk in zip(participants, w) if wk <= 0.0)
        good = tuple(k for k in participants if k not in bad)
    elif defense == "flame" and len(participants) >= 2:
        candidate, admitted = baselines.flame(models, prev, config.baseline.flame_lambda,
                                              make_rng(config.seed, (STREAM_DEFENSE, t)))
        good = tuple(participants[i] for i in admitted)
        bad = tuple(k for k in participants if k not in good)
    else:
        candidate = aggregate_uniform(models)

    records = state.records
    for k in good:
        records[k] = accumulate_update(records[k], by_id[k], prev, len(good))

    new_global = candidate
    reverted = False
    if defense == "fedtrident" and detection is not None and config.enable_validation:
        outcome = trident.validate_global(candidate, prev, env.validation, detection.source_neuron,
                                          detection.target_neuron, config.policy, state.validation)
        new_global, reverted = outcome.model, outcome.reverted

    newly: list[int] = []
    if defense == "fedtrident":
        bad_set = set(bad)
        for k in participants:
            rec, flagged = trident.update_rating(records[k], k in bad_set, config.policy, t,
                                                 allow_blacklist=config.enable_exclusion)
            records[k] = rec
            if flagged:
                newly.append(k)
                if config.enable_remediation:
                    new_global = trident.unlearn(new_global, rec)

    f, g = env.schedule.effective_flip(t)
    ev = evaluate_model(new_global, env.test, f, g)
    present = tuple(k for k in participants if k in env.attackers)
    if detection is not None or defense in ("krum", "flame", "foolsgold"):
        precision, recall = metrics.precision_recall(bad, present)
    else:
        precision, recall = None, None
    rm = RoundMetrics(
        round=t, sre=ev["sre"], asr=ev["asr"], gac=ev["gac"], gas=ev["gas"],
        participants=tuple(participants), bad=tuple(bad), attackers_present=present,
        blacklist_size=sum(r.blacklisted for r in records.values()), newly_blacklisted=tuple(newly),
        source_neuron=detection.source_neuron if detection else None,
        target_neuron=detection.target_neuron if detection else None,
        reverted=reverted, ambiguous=detection.ambiguous if detection else False,
        density_ratio=detection.density_ratio if detection else None,
        precision=precision, recall=recall,
    )
    new_state = SimulationState(t, new_global, records, state.validation, state.foolsgold)
    return new_state, rm


def initial_state(config: ExperimentConfig, env: Environment) -> SimulationState:
    return SimulationState(0, env.initial, new_records(config.num_clients, config.policy.r_init))


def run_experiment(config: ExperimentConfig, env: Environment | None = None, locals_hook=None,
                   trajectory_dir: str | Path | None = None, progress=None) -> ExperimentResult:
    env = env if env is not None else build_environment(config)
    state = initial_state(config, env)
    history: list[RoundMetrics] = []
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    store = TrajectoryStore(trajectory_dir) if trajectory_dir is not None else None
    try:
        for _ in range(config.rounds):
            prev = state.global_model
            hook = locals_hook
            if store is not None:
                hook = store.wrap(locals_hook, prev)
            state, rm = run_round(state, config, env, hook, pool)
            history.append(rm)
            if progress is not None:
                progress(rm)
    finally:
        if pool is not None:
            pool.shutdown()
    return ExperimentResult(config, history, state.global_model, state, env)


class TrajectoryStore:
    """Per-round dump of client update deltas in the ModelParams binary format.

    Layout: ``<dir>/round_<t>/client_<k>.bin`` holding ``local - previous``.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def write(self, t: int, client_id: int, delta: ModelParams):
        folder = self.root / f"round_{t:04d}"
        folder.mkdir(exist_ok=True)
        (folder / f"client_{client_id:04d}.bin").write_bytes(delta.to_bytes())

    def read(self, t: int, client_id: int) -> ModelParams:
        return ModelParams.from_bytes((self.root / f"round_{t:04d}" / f"client_{client_id:04d}.bin").read_bytes())

    def wrap(self, inner, previous: ModelParams):
        def hook(t, participants, models):
            if inner is not None:
                models = list(inner(t, participants, models))
            for k, m in zip(participants, models):
                self.write(t, k, m.with_flat(m.flat - previous.flat))
            return models
        return hook


def unlearn_clients(model: ModelParams, records: dict[int, ClientRecord], clients) -> ModelParams:
    """Post-hoc removal of several clients' accumulated contributions."""
    for k in sorted(clients):
        model = trident.unlearn(model, records[k])
    return model
