"""Per-client server-side bookkeeping shared by the engine and the defenses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ClientRecord:
    client_id: int
    rating: float
    consecutive_detections: int = 0
    accumulated_update: np.ndarray | None = None  # flat, same length as ModelParams.flat
    good_round_count: int = 0
    mean_good_size: float = 0.0  # running mean of |C_good| over this client's good rounds
    blacklisted: bool = False
    blacklisted_round: int | None = None

    def copy(self) -> "ClientRecord":
        acc = None if self.accumulated_update is None else self.accumulated_update.copy()
        return ClientRecord(self.client_id, self.rating, self.consecutive_detections, acc,
                            self.good_round_count, self.mean_good_size, self.blacklisted,
                            self.blacklisted_round)


def new_records(num_clients: int, initial_rating: float) -> dict[int, ClientRecord]:
    return {k: ClientRecord(k, initial_rating) for k in range(num_clients)}
