"""Two-BS, two-user, three-file worked example with fixed per-bit delays."""
from __future__ import annotations

import numpy as np

from .demand import DemandModel
from .geometry import NetworkLayout, toy_layout
from .radio import TauTable

__all__ = ["TOY_P", "TOY_S", "TOY_Q", "TOY_TAU", "toy_problem"]

TOY_P = np.array([0.46, 0.30, 0.24])
TOY_S = np.array([0.6, 0.4])
TOY_Q = {
    "hom": np.array([[0.46, 0.30, 0.24], [0.46, 0.30, 0.24]]),
    "het": np.array([[0.75, 0.25, 0.0], [0.02, 0.38, 0.60]]),
}
# rank 1, rank 2, (no rank 3), backhaul
TOY_TAU = (1.0, 2.0, None, 3.0)


def toy_problem(kind: str = "het") -> tuple[DemandModel, TauTable, NetworkLayout]:
    """User ``u`` always sits in cell ``u``; files have unit size, one slot per BS."""
    if kind not in TOY_Q:
        raise ValueError(f"kind must be one of {sorted(TOY_Q)}")
    model = DemandModel(TOY_Q[kind].copy(), TOY_S.copy(), np.eye(2))
    return model, TauTable.from_ranks(list(TOY_TAU)), toy_layout()
