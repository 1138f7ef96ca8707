import logging

import numpy as np
import pytest
import torch

from oceankg.config import ExperimentConfig, SyntheticConfig
from oceankg.graph import Entity, KnowledgeGraph, Relation, Triple
from oceankg.synthetic import STANDARD_RELATIONS
from oceankg.transe import TransEConfig


def small_config(**kw) -> ExperimentConfig:
    """Desk-scale shapes shared by the pipeline tests."""
    base = dict(
        d=16, d_model=16, d_k=16, token_len=24, backbone_hidden=16, backbone_layers=2,
        backbone_heads=2, decoder_layers=1, decoder_heads=2, learning_rate=1e-3, max_epochs=2,
        patience=None, kge=TransEConfig(d=16, epochs=5),
        synthetic=SyntheticConfig(rows=2, cols=3, t_total=80),
        split=(0.6, 0.2, 0.2),
    )
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture
def cfg():
    return small_config()


@pytest.fixture
def fig3_graph():
    """Region r1 linked to an ocean, a sea area, a current and a temperature literal."""
    ents = [
        Entity("r1", "Region", "Grid cell r1.", (0.0, 0.0)),
        Entity("o1", "Ocean", "Ocean o1."),
        Entity("s1", "Sea", "Sea area s1."),
        Entity("c1", "Current", "Current c1."),
        Entity("temp_r1", "Attribute", "27.1°C"),
        Entity("r2", "Region", "Grid cell r2.", (5.0, 0.0)),
    ]
    rels = list(STANDARD_RELATIONS)
    triples = [
        Triple("r1", "has_temperature", "temp_r1", "(r1, has temperature, 27.1°C)"),
        Triple("r1", "part_of", "o1", "(r1, is at, ocean o1)"),
        Triple("r1", "located_in", "s1", "(r1, belongs to, sea area s1)"),
        Triple("r1", "influenced_by", "c1", "(r1, has current, c1)"),
        Triple("r2", "influenced_by", "c1", "(r2, has current, c1)"),
    ]
    return KnowledgeGraph(ents, rels, triples)


def random_graph(rng: np.random.Generator, n_entities: int, n_triples: int, n_relations: int = 3) -> KnowledgeGraph:
    ents = [Entity(f"e{i}", "Sea", f"entity {i}") for i in range(n_entities)]
    rels = [Relation(f"r{j}", f"rel_{j}") for j in range(n_relations)]
    triples = []
    for _ in range(n_triples):
        h, t = rng.integers(n_entities, size=2)
        triples.append(Triple(f"e{h}", f"r{rng.integers(n_relations)}", f"e{t}"))
    return KnowledgeGraph(ents, rels, triples)


@pytest.fixture(autouse=True)
def _deterministic():
    torch.manual_seed(0)
    logging.getLogger("oceankg").setLevel(logging.WARNING)
    yield
