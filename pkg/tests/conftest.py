import json

import pytest

from npcforge import data_path
from npcforge.gateway import MockBackend
from npcforge.runner import load_registries
from npcforge.world import World, load_world


@pytest.fixture(scope="session")
def demo_world() -> World:
    return load_world(data_path("world_demo.json"))


@pytest.fixture(scope="session")
def registries():
    return load_registries(
        [data_path("registry_merchant.json"), data_path("registry_guild.json")]
    )


@pytest.fixture
def merchant_registry(registries):
    from npcforge.world import RoleKind

    return registries[RoleKind.MERCHANT]


@pytest.fixture
def guild_registry(registries):
    from npcforge.world import RoleKind

    return registries[RoleKind.GUILD_RECEPTIONIST]


def gold_backend(calls: list[dict], reply: str) -> MockBackend:
    """Mock scripted with a tool-call payload then a dialogue reply."""
    return MockBackend([json.dumps(calls, ensure_ascii=False), reply])
