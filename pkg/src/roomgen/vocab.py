"""Fixed categorical vocabularies shared by the room model, tokenizer and metrics."""

from __future__ import annotations

from dataclasses import dataclass

ROOM_TYPES = (
    "bedroom",
    "bathroom",
    "kitchen",
    "living",
    "dining",
    "office",
    "pantry",
    "garage",
)

WALL_CONDITIONS = ("new", "existing", "renovated", "fire_rated")

DOOR_FAMILIES = ("single_swing", "double_swing", "sliding", "pocket", "bifold", "overhead")
WINDOW_FAMILIES = ("fixed", "casement", "sliding", "awning")
DOOR_SWINGS = ("left", "right", "none")

ENTITY_EXTRAS = ("none", "wood", "laminate", "metal")

PROP = "prop"
CASEWORK = "casework"


@dataclass(frozen=True)
class CategoryInfo:
    name: str
    kind: str
    width: tuple[float, float]  # meters, (min, max) along the wall
    depth: tuple[float, float]  # meters, (min, max) into the room
    placement: str = "wall"  # "wall" hugs the anchor wall, "center" floats into the room
    rotations: tuple[float, ...] = (0.0,)


ENTITY_CATEGORIES: tuple[CategoryInfo, ...] = (
    # casework
    CategoryInfo("base_cabinet", CASEWORK, (0.6, 0.9), (0.6, 0.6)),
    CategoryInfo("sink_cabinet", CASEWORK, (0.8, 1.0), (0.6, 0.6)),
    CategoryInfo("tall_cabinet", CASEWORK, (0.5, 0.7), (0.6, 0.6)),
    CategoryInfo("vanity", CASEWORK, (0.6, 1.2), (0.5, 0.55)),
    CategoryInfo("pantry_shelf", CASEWORK, (0.8, 1.2), (0.35, 0.45)),
    CategoryInfo("workbench", CASEWORK, (1.4, 2.0), (0.6, 0.7)),
    # props
    CategoryInfo("bed", PROP, (1.4, 1.8), (1.9, 2.1)),
    CategoryInfo("nightstand", PROP, (0.4, 0.5), (0.4, 0.45)),
    CategoryInfo("dresser", PROP, (0.9, 1.4), (0.45, 0.5)),
    CategoryInfo("wardrobe", PROP, (0.9, 1.5), (0.55, 0.6)),
    CategoryInfo("desk", PROP, (1.0, 1.6), (0.6, 0.75)),
    CategoryInfo("office_chair", PROP, (0.55, 0.65), (0.55, 0.65)),
    CategoryInfo("bookshelf", PROP, (0.8, 1.0), (0.3, 0.35)),
    CategoryInfo("sofa", PROP, (1.8, 2.4), (0.85, 0.95)),
    CategoryInfo("armchair", PROP, (0.75, 0.9), (0.75, 0.9), rotations=(-0.5235987755982988, 0.0, 0.5235987755982988)),
    CategoryInfo("coffee_table", PROP, (0.9, 1.2), (0.5, 0.6), placement="center"),
    CategoryInfo("tv_stand", PROP, (1.2, 1.8), (0.4, 0.45)),
    CategoryInfo("dining_table", PROP, (1.2, 1.8), (0.8, 1.0), placement="center", rotations=(0.0, 1.5707963267948966)),
    CategoryInfo("sideboard", PROP, (1.2, 1.6), (0.45, 0.5)),
    CategoryInfo("toilet", PROP, (0.4, 0.45), (0.65, 0.7)),
    CategoryInfo("bathtub", PROP, (1.5, 1.7), (0.7, 0.8)),
    CategoryInfo("shower", PROP, (0.8, 0.9), (0.8, 0.9)),
    CategoryInfo("refrigerator", PROP, (0.7, 0.9), (0.7, 0.75)),
    CategoryInfo("storage_rack", PROP, (1.0, 1.5), (0.45, 0.6)),
)

CATEGORY_NAMES = tuple(c.name for c in ENTITY_CATEGORIES)
CATEGORY_INDEX = {name: i for i, name in enumerate(CATEGORY_NAMES)}
CATEGORY_KIND = tuple(c.kind for c in ENTITY_CATEGORIES)

# Hard limits that size the categorical heads and tables.
MAX_EDGES = 16
MAX_TOKEN_ID = 64


def room_type_id(name: str) -> int:
    return ROOM_TYPES.index(name)


def category_id(name: str) -> int:
    return CATEGORY_INDEX[name]


def categories_of_kind(kind: str) -> list[int]:
    return [i for i, k in enumerate(CATEGORY_KIND) if k == kind]
