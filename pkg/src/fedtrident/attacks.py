"""Targeted label-flipping adversaries: who attacks and which flip applies when."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, flip_labels


@dataclass(frozen=True)
class AttackPhase:
    first_round: int
    last_round: int
    source: int
    target: int

    def covers(self, t: int) -> bool:
        return self.first_round <= t <= self.last_round


@dataclass(frozen=True)
class AttackSchedule:
    phases: tuple[AttackPhase, ...]

    def __post_init__(self):
        phases = tuple(sorted(self.phases, key=lambda p: p.first_round))
        if not phases:
            raise ValueError("an attack schedule needs at least one phase")
        if phases[0].first_round != 1:
            raise ValueError(f"schedule must start at round 1, starts at {phases[0].first_round}")
        for p in phases:
            if p.last_round < p.first_round:
                raise ValueError(f"empty phase {p.first_round}-{p.last_round}")
            if p.source == p.target:
                raise ValueError(f"phase {p.first_round}-{p.last_round}: source equals target")
            if min(p.source, p.target) < 1:
                raise ValueError("classes are 1-based")
        for prev, nxt in zip(phases, phases[1:]):
            if nxt.first_round <= prev.last_round:
                raise ValueError(f"phases overlap at round {nxt.first_round}")
            if nxt.first_round > prev.last_round + 1:
                raise ValueError(f"gap between rounds {prev.last_round} and {nxt.first_round}")
        object.__setattr__(self, "phases", phases)

    @property
    def total_rounds(self) -> int:
        return self.phases[-1].last_round

    def phase_at(self, t: int) -> AttackPhase:
        for p in self.phases:
            if p.covers(t):
                return p
        raise ValueError(f"round {t} is outside the schedule (1..{self.total_rounds})")

    def effective_flip(self, t: int) -> tuple[int, int]:
        p = self.phase_at(t)
        return p.source, p.target

    @property
    def final_flip(self) -> tuple[int, int]:
        return self.phases[-1].source, self.phases[-1].target

    def is_safety_attack(self) -> bool:
        """True when every phase lowers the hazard class."""
        return all(p.source > p.target for p in self.phases)

    def validate_classes(self, num_classes: int):
        for p in self.phases:
            if max(p.source, p.target) > num_classes:
                raise ValueError(f"flip {p.source}->{p.target} exceeds {num_classes} classes")


def static_schedule(source: int, target: int, total_rounds: int) -> AttackSchedule:
    if total_rounds < 1:
        raise ValueError("total_rounds must be >= 1")
    return AttackSchedule((AttackPhase(1, total_rounds, source, target),))


def dynamic_schedule(phases) -> AttackSchedule:
    """``phases`` is an iterable of ``(first, last, source, target)`` tuples or AttackPhase."""
    items = tuple(p if isinstance(p, AttackPhase) else AttackPhase(*map(int, p)) for p in phases)
    return AttackSchedule(items)


def choose_attackers(num_clients: int, fraction: float, rng: np.random.Generator) -> frozenset[int]:
    """Pick ``round(fraction * K)`` malicious client ids (0-based); enforces P < K/2."""
    P = int(round(fraction * num_clients))
    if fraction < 0 or (P > 0 and 2 * P >= num_clients):
        raise ValueError(f"malicious fraction {fraction} violates P < K/2 for K={num_clients}")
    return frozenset(int(k) for k in rng.choice(num_clients, size=P, replace=False))


def poisoned_view(client_id: int, clean: Dataset, schedule: AttackSchedule | None,
                  attackers, t: int) -> Dataset:
    if schedule is None or client_id not in attackers:
        return clean
    f, g = schedule.effective_flip(t)
    return flip_labels(clean, f, g)
