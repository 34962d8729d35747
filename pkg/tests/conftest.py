import numpy as np
import pandas as pd
import pytest

from rgax.events import Column, EventTable, FeatureSpec


def make_shots(n=600, seed=0, actors=("a", "b", "c", "d"), probs=None, beta=None):
    """Synthetic shot table with three numeric features and one categorical."""
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, 3))
    ids = rng.choice(list(actors), n, p=probs)
    skill = np.zeros(n)
    if beta:
        for a, b in beta.items():
            skill[ids == a] = b
    eta = -1.0 + 0.8 * Z[:, 0] - 0.4 * Z[:, 1] + skill
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    frame = pd.DataFrame({
        "outcome": y, "actor_id": ids, "on_target": rng.integers(0, 2, n).astype(float),
        "team_for": rng.choice(["X", "Y"], n), "team_against": rng.choice(["X", "Y"], n),
        "z1": Z[:, 0], "z2": Z[:, 1], "z3": Z[:, 2],
        "body": rng.choice(["foot", "head", "other"], n),
    })
    spec = FeatureSpec((Column("z1"), Column("z2"), Column("z3"),
                        Column("body", "categorical")))
    return EventTable.from_frame(frame, spec, "shot")


@pytest.fixture
def shots():
    return make_shots()
