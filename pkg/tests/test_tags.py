import random

import pytest

from driveqa.tags import (
    Camera,
    KeyObjectTag,
    TagParseError,
    extract_tags,
    format_keyobj_tag,
    parse_keyobj_tag,
)

CAMERAS = list(Camera)


def random_tag(rng: random.Random) -> KeyObjectTag:
    return KeyObjectTag(
        object_id=f"c{rng.randint(1, 99)}",
        camera=rng.choice(CAMERAS),
        center_x=round(rng.uniform(0, 1600), 1),
        center_y=round(rng.uniform(0, 900), 1),
    )


def oracle_extract(text: str) -> list[KeyObjectTag]:
    """Brute force: try a full parse at every substring between < and >."""
    found = []
    for start in range(len(text)):
        if text[start] != "<":
            continue
        end = text.find(">", start)
        if end == -1:
            continue
        try:
            found.append(parse_keyobj_tag(text[start : end + 1]))
        except TagParseError:
            continue
    return found


def test_literal_example_round_trip():
    raw = "<c4,CAM_FRONT,920.8,383.3>"
    tag = parse_keyobj_tag(raw)
    assert tag.object_id == "c4"
    assert tag.camera is Camera.CAM_FRONT
    assert tag.center_x == 920.8
    assert tag.center_y == 383.3
    assert format_keyobj_tag(tag) == raw


def test_round_trip_generated_tags():
    rng = random.Random(20240)
    for _ in range(1000):
        tag = random_tag(rng)
        assert parse_keyobj_tag(format_keyobj_tag(tag)) == tag


def test_format_renders_one_decimal():
    tag = KeyObjectTag("c1", Camera.CAM_BACK, 5.0, 899.95)
    assert format_keyobj_tag(tag) == "<c1,CAM_BACK,5.0,900.0>"


@pytest.mark.parametrize(
    "raw",
    [
        "<c4,CAM_FRONT,920.8>",
        "<c4,CAM_FRONT,920.8,383.3,9>",
        "<CAM_FRONT,920.8,383.3>",
        "<c4,NOT_A_CAMERA,100.0,100.0>",
        "<c4,CAM_FRONT,1700.0,100.0>",
        "<c4,CAM_FRONT,100.0,-3.0>",
        "<x4,CAM_FRONT,100.0,100.0>",
        "c4,CAM_FRONT,100.0,100.0",
        "<c4,CAM_FRONT,100.0,100.0> trailing",
        "<c4,CAM_FRONT,100.0,100.0",
    ],
)
def test_parse_rejects_malformed(raw):
    with pytest.raises(TagParseError):
        parse_keyobj_tag(raw)


def test_parse_error_carries_position():
    with pytest.raises(TagParseError) as excinfo:
        parse_keyobj_tag("<c4,CAM_FRONT,920.8>")
    assert excinfo.value.position is not None
    assert "position" in str(excinfo.value)


def test_extract_from_prose():
    text = (
        "Objects <c1,CAM_FRONT,10.0,20.0> and <c2,CAM_BACK,30.0,40.0> are nearby; "
        "<broken> and <c3,CAM_FRONT> do not parse."
    )
    tags = extract_tags(text)
    assert [t.object_id for t in tags] == ["c1", "c2"]


def test_extract_keeps_duplicates_in_order():
    text = "<c5,CAM_FRONT,1.0,2.0> again <c5,CAM_FRONT,1.0,2.0>"
    tags = extract_tags(text)
    assert len(tags) == 2
    assert tags[0] == tags[1]


def test_extract_matches_oracle_on_random_embeddings():
    rng = random.Random(77)
    fillers = [
        "the ego vehicle keeps lane",
        "watch for < danger > signs",
        "turn at <c9> soon",
        "a < lone bracket",
        "nothing here",
        "angle >> marks << here",
    ]
    for _ in range(1000):
        parts = []
        for _ in range(rng.randint(0, 4)):
            parts.append(rng.choice(fillers))
            if rng.random() < 0.7:
                parts.append(format_keyobj_tag(random_tag(rng)))
        text = " ".join(parts)
        assert extract_tags(text) == oracle_extract(text)
