import pytest

from lhnav.world import ObjectInstance, Region, Scene


def scene_from(rows, objects=(), seed=0, label="room"):
    """Build a scene whose free cells form one region; objects are
    (id, category, (row, col), portable) tuples placed at cell centers."""
    free = tuple(
        (r, c)
        for r, row in enumerate(rows)
        for c, ch in enumerate(row)
        if ch == "."
    )
    regions = [Region(id="0", label=label, cells=free)]
    objs = []
    for obj_id, category, cell, portable in objects:
        x = (cell[1] + 0.5) * 0.25
        y = (cell[0] + 0.5) * 0.25
        objs.append(
            ObjectInstance(
                id=obj_id,
                category=category,
                region_id="0",
                position=(x, y),
                portable=portable,
            )
        )
    return Scene(grid=rows, regions=regions, objects=objs, seed=seed)


@pytest.fixture
def corridor_scene():
    rows = [
        "#########",
        "#.......#",
        "#########",
    ]
    return scene_from(rows, objects=[("box-0", "box", (1, 7), True)], label="corridor")


@pytest.fixture
def two_room_scene():
    """Bedroom with a bag, office with a desk, one doorway between them."""
    rows = [
        "############",
        "#.....#....#",
        "#.....#....#",
        "#..........#",
        "#.....#....#",
        "#.....#....#",
        "############",
    ]
    bedroom_cells = tuple(
        (r, c) for r in range(1, 6) for c in range(1, 6)
    )
    office_cells = tuple(
        (r, c) for r in range(1, 6) for c in range(7, 11)
    )
    hall_cells = ((3, 6),)
    regions = [
        Region(id="0", label="bedroom", cells=bedroom_cells),
        Region(id="4", label="office", cells=office_cells),
        Region(id="hall", label="hallway", cells=hall_cells),
    ]
    objects = [
        ObjectInstance(
            id="bag-0",
            category="bag",
            region_id="0",
            position=((1 + 0.5) * 0.25, (1 + 0.5) * 0.25),
            portable=True,
        ),
        ObjectInstance(
            id="desk-0",
            category="desk",
            region_id="4",
            position=((9 + 0.5) * 0.25, (4 + 0.5) * 0.25),
            portable=False,
        ),
    ]
    return Scene(grid=rows, regions=regions, objects=objects, seed=42)


@pytest.fixture
def sealed_scene():
    """Two rooms with no connecting door: disconnected free space."""
    rows = [
        "#########",
        "#...#...#",
        "#...#...#",
        "#...#...#",
        "#########",
    ]
    left = tuple((r, c) for r in range(1, 4) for c in range(1, 4))
    right = tuple((r, c) for r in range(1, 4) for c in range(5, 8))
    regions = [
        Region(id="0", label="cellar", cells=left),
        Region(id="1", label="vault", cells=right),
    ]
    objects = [
        ObjectInstance(
            id="cup-0", category="cup", region_id="0",
            position=((1 + 0.5) * 0.25, (1 + 0.5) * 0.25), portable=True,
        ),
        ObjectInstance(
            id="jar-0", category="jar", region_id="1",
            position=((6 + 0.5) * 0.25, (2 + 0.5) * 0.25), portable=True,
        ),
    ]
    return Scene(grid=rows, regions=regions, objects=objects, seed=7)


@pytest.fixture
def open_scene():
    """A 14x14 single room with a central pillar for occlusion tests."""
    rows = []
    for r in range(14):
        if r == 0 or r == 13:
            rows.append("#" * 14)
        elif r in (6, 7):
            rows.append("#" + "." * 5 + "##" + "." * 5 + "#")
        else:
            rows.append("#" + "." * 12 + "#")
    return scene_from(
        rows,
        objects=[
            ("box-0", "box", (2, 2), True),
            ("lamp-0", "lamp", (2, 11), False),
            ("toy-0", "toy", (11, 11), True),
        ],
        label="den",
    )
