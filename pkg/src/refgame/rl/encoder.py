"""Dialogue state to feature vector for the value network."""
from __future__ import annotations

import numpy as np

from ..colors import distance_features
from ..dialogue import DialogueState, Speaker

# layout: 3 posterior entries, posterior mass on the target, 8 action flags,
# 3 pairwise-distance stats (/100), conversation length (/10), previous
# speaker flag
STATE_DIM = 17

N_ACTION_FLAGS = 8
DISTANCE_SCALE = 1.0 / 100.0
LENGTH_SCALE = 1.0 / 10.0


def encode_state(state: DialogueState) -> np.ndarray:
    vec = np.empty(STATE_DIM)
    p = state.posterior
    vec[0:3] = p
    vec[3] = p[state.context.target_index]
    for flag in range(N_ACTION_FLAGS):
        vec[4 + flag] = float(state.action_history >> flag & 1)
    feats = distance_features(state.context)
    vec[12] = feats.d_min * DISTANCE_SCALE
    vec[13] = feats.d_max * DISTANCE_SCALE
    vec[14] = feats.d_avg * DISTANCE_SCALE
    vec[15] = state.l_conv * LENGTH_SCALE
    vec[16] = 1.0 if state.pt is Speaker.DIRECTOR else 0.0
    return vec
