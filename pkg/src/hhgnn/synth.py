"""Planted synthetic CHAR data.

Each user owns a few (placement, activity-subset) combinations. Every
distinct combination has a latent prototype; an instance is its combo's
prototype plus a per-user offset plus Gaussian noise. The combo's labels
are positive, a random disjoint subset of the others negative, the rest
missing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import MISSING, NEG, POS, InstanceTable, Schema

PP_NAMES = ("InBag", "InHand", "InPocket", "OnTable")
ACT_NAMES = (
    "AtComputer",
    "Bicycling",
    "Cooking",
    "Driving",
    "Eating",
    "InMeeting",
    "Lying",
    "Running",
    "Sitting",
    "Sleeping",
    "Standing",
    "Talking",
    "Walking",
)


@dataclass(frozen=True)
class SyntheticSpec:
    num_users: int = 10
    num_pp: int = 4
    num_act: int = 13
    d_x: int = 32
    num_instances: int = 2000
    noise_sigma: float = 0.5
    combos_per_user: int = 3
    seed: int = 0
    max_acts_per_combo: int = 3
    user_offset_scale: float = 0.5
    # chance that a label outside the combo is recorded as negative (else missing)
    observe_negative: float = 0.8

    def __post_init__(self):
        counts = (self.num_users, self.num_pp, self.num_act, self.d_x, self.num_instances,
                  self.combos_per_user, self.max_acts_per_combo)
        if min(counts) < 1:
            raise ValueError("all counts must be positive")
        if self.noise_sigma < 0 or self.user_offset_scale < 0:
            raise ValueError("noise scales must be >= 0")
        if not 0.0 <= self.observe_negative <= 1.0:
            raise ValueError("observe_negative must lie in [0, 1]")


def _names(defaults: tuple[str, ...], n: int, prefix: str) -> tuple[str, ...]:
    return defaults if n == len(defaults) else tuple(f"{prefix}{i:02d}" for i in range(n))


def generate(spec: SyntheticSpec) -> InstanceTable:
    rng = np.random.default_rng(spec.seed)
    pp_names = _names(PP_NAMES, spec.num_pp, "pp")
    act_names = _names(ACT_NAMES, spec.num_act, "act")
    schema = Schema(tuple(f"f{j:02d}" for j in range(spec.d_x)), pp_names, act_names)
    users = tuple(f"user{u:02d}" for u in range(spec.num_users))
    max_acts = min(spec.max_acts_per_combo, spec.num_act)

    user_combos = []
    prototypes: dict[tuple, np.ndarray] = {}
    for _ in users:
        combos = []
        for _ in range(spec.combos_per_user):
            pp = int(rng.integers(spec.num_pp))
            k = int(rng.integers(1, max_acts + 1))
            acts = tuple(sorted(int(a) for a in rng.choice(spec.num_act, size=k, replace=False)))
            combo = (pp, acts)
            if combo not in prototypes:
                prototypes[combo] = rng.normal(0.0, 1.0, spec.d_x)
            combos.append(combo)
        user_combos.append(combos)
    offsets = rng.normal(0.0, spec.user_offset_scale, (spec.num_users, spec.d_x))

    n_lab = spec.num_pp + spec.num_act
    feats = np.empty((spec.num_instances, spec.d_x))
    labels = np.empty((spec.num_instances, n_lab), dtype=np.int8)
    owner = []
    for i in range(spec.num_instances):
        u = int(rng.integers(spec.num_users))
        pp, acts = user_combos[u][int(rng.integers(spec.combos_per_user))]
        noise = rng.normal(0.0, spec.noise_sigma, spec.d_x) if spec.noise_sigma > 0 else 0.0
        feats[i] = prototypes[(pp, acts)] + offsets[u] + noise
        observed = rng.random(n_lab) < spec.observe_negative
        row = np.where(observed, NEG, MISSING).astype(np.int8)
        row[pp] = POS
        row[[spec.num_pp + a for a in acts]] = POS
        labels[i] = row
        owner.append(users[u])
    return InstanceTable(schema, feats, labels, tuple(owner))
