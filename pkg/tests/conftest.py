"""Shared fixtures: tiny catalog, splits, and scripted gateways."""

from __future__ import annotations

import json

import pytest

from recfeat.dataset import (
    Interaction,
    ItemCatalog,
    UserSplit,
    partition_preferences,
)
from recfeat.gateway import Gateway, ScriptedChatBackend


@pytest.fixture
def catalog() -> ItemCatalog:
    cat = ItemCatalog()
    for i in range(1, 31):
        cat.entries[f"i{i:02d}"] = (f"Product {i:02d}", f"Description of product {i:02d}")
    return cat


def make_split(user_id: str = "u1", n_train: int = 5, first_item: int = 1) -> UserSplit:
    """Train items rated 5,2,4,1,5,... chronologically; last item is test."""
    ratings = [5, 2, 4, 1, 5, 3, 4, 2, 5, 1]
    train = [
        Interaction(user_id, f"i{first_item + j:02d}", ratings[j % len(ratings)], 100 + j)
        for j in range(n_train)
    ]
    test = Interaction(user_id, f"i{first_item + n_train:02d}", 5, 100 + n_train)
    return UserSplit(user_id=user_id, train=train, test=test)


@pytest.fixture
def split() -> UserSplit:
    return make_split()


@pytest.fixture
def profile(split):
    return partition_preferences(split, threshold=4)


def gateway_for(responder, **kwargs) -> Gateway:
    """Cache-less gateway over a scripted chat backend."""
    return Gateway(ScriptedChatBackend(responder), **kwargs)


def write_jsonl_file(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
