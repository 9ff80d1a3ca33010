"""Semantic surface and object labels shared by annotation, rendering and planning.

Twelve label ids are stable across the toolkit: seven surface types, the
track-limits marking, and four object classes.  Id 255 is reserved for rays
that escape the scene ("miss") and must never be assigned to geometry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SemanticLabel:
    id: int
    name: str
    color: tuple[int, int, int]


ROAD = SemanticLabel(0, "road", (90, 90, 96))
DRIVABLE = SemanticLabel(1, "drivable", (128, 64, 128))
CURB = SemanticLabel(2, "curb", (220, 60, 60))
CARPET = SemanticLabel(3, "carpet", (0, 120, 190))
GRASS = SemanticLabel(4, "grass", (80, 160, 60))
SAND = SemanticLabel(5, "sand", (215, 190, 130))
WATER = SemanticLabel(6, "water", (50, 110, 220))
TRACK_LIMITS = SemanticLabel(7, "track_limits", (240, 240, 240))
PEOPLE = SemanticLabel(8, "people", (230, 30, 90))
VEHICLES = SemanticLabel(9, "vehicles", (250, 150, 30))
STRUCTURES = SemanticLabel(10, "structures", (150, 110, 180))
VEGETATION = SemanticLabel(11, "vegetation", (35, 100, 40))

ALL_LABELS: tuple[SemanticLabel, ...] = (
    ROAD,
    DRIVABLE,
    CURB,
    CARPET,
    GRASS,
    SAND,
    WATER,
    TRACK_LIMITS,
    PEOPLE,
    VEHICLES,
    STRUCTURES,
    VEGETATION,
)

MISS_ID = 255

BY_ID: dict[int, SemanticLabel] = {lab.id: lab for lab in ALL_LABELS}
BY_NAME: dict[str, SemanticLabel] = {lab.name: lab for lab in ALL_LABELS}

assert len(BY_ID) == 12 and len(BY_NAME) == 12, "label ids/names must be bijective"


def label_by_name(name: str) -> SemanticLabel:
    try:
        return BY_NAME[name]
    except KeyError:
        raise KeyError(f"unknown semantic label {name!r}; known: {sorted(BY_NAME)}") from None


def color_table() -> np.ndarray:
    """256x3 uint8 lookup table mapping label id to RGB; miss renders black."""
    table = np.zeros((256, 3), dtype=np.uint8)
    for lab in ALL_LABELS:
        table[lab.id] = lab.color
    return table
