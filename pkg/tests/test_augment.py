import logging

from driveqa.augment import (
    augment_frame,
    describe_object_answer,
    describe_object_question,
)
from driveqa.dataset import Frame, KeyObjectInfo, QuestionKind
from driveqa.tags import Camera, KeyObjectTag


def make_frame(objects) -> Frame:
    return Frame(
        scene_id="sc1",
        frame_id="fr1",
        image_paths={c: f"samples/{c.value}/fr1.jpg" for c in Camera},
        key_objects=objects,
        qas=(),
    )


def obj(object_id, camera, x, y, desc, status):
    tag = KeyObjectTag(object_id, camera, x, y)
    return KeyObjectInfo(
        tag=tag,
        category="Vehicle",
        status=status,
        visual_description=desc,
        bbox=(x - 10, y - 10, x + 10, y + 10),
    )


TRUCK_TAG = KeyObjectTag("c4", Camera.CAM_FRONT, 920.8, 383.3)


def test_answer_matches_frozen_example():
    answer = describe_object_answer(
        TRUCK_TAG, "A white truck to the front of the ego vehicle.", "Moving."
    )
    assert answer == (
        "<c4,CAM_FRONT,920.8,383.3> is a white truck to the front of the "
        "ego vehicle. It is moving."
    )


def test_question_embeds_tag_camera_and_center():
    question = describe_object_question(TRUCK_TAG)
    assert question == (
        "The width and height of the image are 1600 and 900 respectively. "
        "<c4,CAM_FRONT,920.8,383.3> represents the key object that the center "
        "coordinates of the bounding box in the CAM_FRONT image are "
        "(920.8,383.3). What is the object <c4,CAM_FRONT,920.8,383.3>? "
        "What is the state of it?"
    )


def test_description_cleanup_rules():
    # trailing period dropped once, leading article lowercased, rest kept
    assert describe_object_answer(TRUCK_TAG, "The Red bus.", "Stopped.").endswith(
        "is the Red bus. It is stopped."
    )
    assert describe_object_answer(TRUCK_TAG, "white van", "MOVING").endswith(
        "is white van. It is moving."
    )


def test_augment_frame_orders_and_kinds():
    frame = make_frame(
        {
            "c2": obj("c2", Camera.CAM_BACK, 100.0, 100.0, "A bike.", "Parked."),
            "c1": obj("c1", Camera.CAM_FRONT, 50.0, 60.0, "A car.", "Moving."),
        }
    )
    items = augment_frame(frame)
    assert [item.source_object_id for item in items] == ["c1", "c2"]
    qa = items[0].qa
    assert qa.question_id == "sc1/fr1/keyobj/c1"
    assert qa.kind is QuestionKind.OPEN
    assert qa.answer == "<c1,CAM_FRONT,50.0,60.0> is a car. It is moving."


def test_augment_skips_blank_metadata(caplog):
    frame = make_frame(
        {
            "c1": obj("c1", Camera.CAM_FRONT, 50.0, 60.0, "", "Moving."),
            "c2": obj("c2", Camera.CAM_FRONT, 70.0, 60.0, "A van.", "  "),
            "c3": obj("c3", Camera.CAM_FRONT, 90.0, 60.0, "A car.", "Moving."),
        }
    )
    with caplog.at_level(logging.WARNING):
        items = augment_frame(frame)
    assert [item.source_object_id for item in items] == ["c3"]
    assert sum("skipped" in r.message for r in caplog.records) == 2
