"""Shared fixtures. The expensive ones are session-scoped and lazy.

Tests that need a language model with real answer behavior share one
pretrained tiny-world model; its weights are frozen, so sharing is
read-only. Editor systems are never shared: every test builds its own.
"""

import pytest

from medrek.dataset import SynthConfig, generate_synthetic
from medrek.lm import CausalLM, LmConfig, pretrain

TINY_WORLD_CFG = SynthConfig(
    seed=0,
    n_records=6,
    n_subject_areas=2,
    n_subjects=6,
    n_relations=3,
    n_objects=4,
    n_locality_facts=2,
    valid_fraction=0.3,
)


@pytest.fixture(scope="session")
def tiny_pretrained():
    world = generate_synthetic(TINY_WORLD_CFG)
    lm = CausalLM(world.vocab, LmConfig(d_lm=64, heads=4), seed=1)
    pretrain(lm, world.corpus_lines, epochs=400, lr=4e-3, seed=0, target_ce=0.6, target_accuracy=0.9)
    lm.freeze()
    return world, lm
