import numpy as np
import pytest

from forksim.engine import GameParams, run_game


def small_game(strategy, alpha=0.35, horizon=4000, seed=1, tiebreak="against-attacker",
               record_view=True, **kw):
    p = GameParams(alpha=alpha, horizon_heights=horizon, seed=seed,
                   tiebreak=tiebreak, record_view=record_view)
    return run_game(p, strategy, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
