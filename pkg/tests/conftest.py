"""Shared fixtures: the demo taxonomy, random tree generation, tiny corpora."""

from __future__ import annotations

import numpy as np
import pytest

from hmlc import autodiff as ad
from hmlc.corpus import Corpus, Record
from hmlc.hierarchy import ROOT, LabelHierarchy, parse_hierarchy
from hmlc.synthetic import demo_hierarchy, make_synthetic_corpus


@pytest.fixture(autouse=True)
def _reset_dtype():
    """Tests that switch to f64 must not leak the setting into neighbours."""
    yield
    ad.set_default_dtype("f32")


@pytest.fixture()
def f64():
    ad.set_default_dtype("f64")
    yield
    ad.set_default_dtype("f32")


@pytest.fixture(scope="session")
def demo() -> LabelHierarchy:
    return demo_hierarchy()


@pytest.fixture(scope="session")
def demo_corpus(demo) -> Corpus:
    return make_synthetic_corpus(demo, 160, seed=11)


def random_tree(rng: np.random.Generator, n_labels: int, max_children: int = 4
                ) -> LabelHierarchy:
    """A random single-parent tree: each new label attaches to the root or to
    any earlier label with fewer than ``max_children`` children."""
    edges = [(ROOT, "L0")]
    child_count = {"L0": 0}
    for i in range(1, n_labels):
        open_parents = [v for v, c in child_count.items() if c < max_children]
        pick = int(rng.integers(0, len(open_parents) + 1))
        parent = ROOT if pick == len(open_parents) else open_parents[pick]
        name = f"L{i}"
        edges.append((parent, name))
        child_count[name] = 0
        if parent != ROOT:
            child_count[parent] += 1
    return parse_hierarchy(edges)


def make_record(h: LabelHierarchy, rid: str, names, text: str = "alpha beta") -> Record:
    from hmlc.hierarchy import labels_to_bits

    return Record(
        id=rid,
        fields={"name": text, "description": "", "comments": ""},
        labels=labels_to_bits(h, names),
    )
