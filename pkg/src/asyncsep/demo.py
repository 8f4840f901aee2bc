"""Accessors for the bundled demo scene.

The demo ships as package data so the CLI and the acceptance suite can run
without external audio: three speech-like sources, three two-channel
devices, 15 s at 16 kHz, clock offsets of +0.3 / -0.3 / 0 Hz.  All
acceptance figures refer to this scene with DEMO_SEED.
"""

from __future__ import annotations

from importlib import resources

import yaml

from .scene import SceneSpec, scene_from_dict

__all__ = ["DEMO_SEED", "demo_scene", "demo_train_scene", "demo_scene_path"]

DEMO_SEED = 2024


def _load(name: str) -> SceneSpec:
    ref = resources.files("asyncsep.data").joinpath(name)
    return scene_from_dict(yaml.safe_load(ref.read_text()))


def demo_scene_path(train: bool = False) -> str:
    """Filesystem path of the bundled scene YAML (for CLI usage)."""
    name = "demo_train_scene.yaml" if train else "demo_scene.yaml"
    return str(resources.files("asyncsep.data").joinpath(name))


def demo_scene() -> SceneSpec:
    return _load("demo_scene.yaml")


def demo_train_scene() -> SceneSpec:
    return _load("demo_train_scene.yaml")
