"""Counter-based random-stream derivation.

Every random consumer gets its own ``numpy`` Generator derived from
``(master seed, run seed, component)`` through a SeedSequence spawn key, so
streams never interact: adding evaluation episodes, reordering components or
running seeds in parallel cannot perturb any other stream.
"""

from __future__ import annotations

import numpy as np

# component indices within one run
ENV_STREAM = 0
AGENT_STREAM = 1
MODEL_STREAM = 2
ROLLOUT_STREAM = 3
EVAL_STREAM = 4
CURVE_STREAM = 5
MODEL_ERROR_STREAM = 6
META_DECIDE_STREAM = 7

# trainer-level streams (outside any single run)
META_STREAM = 100

# namespaces for deriving run seeds from a master seed
RUN_NAMESPACE = 1
META_TRAIN_NAMESPACE = 2
META_EVAL_NAMESPACE = 3


def component_rng(*path: int) -> np.random.Generator:
    """Independent generator for an integer path such as (seed, component)."""
    if not path:
        raise ValueError("need at least one path element")
    entropy, *key = path
    return np.random.default_rng(np.random.SeedSequence(entropy=entropy, spawn_key=tuple(key)))


def derive_seed(*path: int) -> int:
    """Collapse an integer path into one seed, e.g. (master, namespace, run)."""
    entropy, *key = path
    ss = np.random.SeedSequence(entropy=entropy, spawn_key=tuple(key))
    return int(ss.generate_state(1, np.uint64)[0])
