import json

import numpy as np
import pytest

from relrank.detection import (
    SCORE_FLOOR,
    DetectionSet,
    PairScores,
    Region,
    load_detections,
    save_detections,
    synthesize_detections,
)
from relrank.errors import InputValidationError

from conftest import make_box, make_tuple


def two_region_detection(image_id="img0", n_ent=3, n_rel=2, allow_self_pairs=False):
    regions = (
        Region(box=make_box(0, 0, 10, 10), entity_scores=np.array([0.9, 0.1, 0.2])[:n_ent]),
        Region(box=make_box(5, 5, 20, 20), entity_scores=np.array([0.1, 0.8, 0.3])[:n_ent]),
    )
    pair_indices = [(s, o) for s in range(2) for o in range(2) if s != o or allow_self_pairs]
    pairs = tuple(
        PairScores(s, o, np.linspace(0.2, 0.7, n_rel) + 0.01 * (2 * s + o))
        for s, o in pair_indices
    )
    return DetectionSet(
        image_id=image_id, regions=regions, pairs=pairs, allow_self_pairs=allow_self_pairs
    )


class TestValidation:
    def test_complete_two_region_set_passes(self, tiny_vocab):
        two_region_detection().validate(tiny_vocab)

    def test_missing_pair_named(self, tiny_vocab):
        det = two_region_detection()
        incomplete = DetectionSet(det.image_id, det.regions, det.pairs[:1])
        with pytest.raises(InputValidationError, match=r"missing \[\(1, 0\)\]"):
            incomplete.validate(tiny_vocab)

    def test_duplicate_pair_named(self, tiny_vocab):
        det = two_region_detection()
        doubled = DetectionSet(det.image_id, det.regions, det.pairs + det.pairs[:1])
        with pytest.raises(InputValidationError, match=r"duplicate pair \(0, 1\)"):
            doubled.validate(tiny_vocab)

    def test_self_pair_rejected_by_default(self, tiny_vocab):
        det = two_region_detection()
        selfed = DetectionSet(
            det.image_id,
            det.regions,
            det.pairs + (PairScores(0, 0, np.array([0.5, 0.5])),),
        )
        with pytest.raises(InputValidationError, match=r"\(0, 0\)"):
            selfed.validate(tiny_vocab)

    def test_self_pairs_allowed_when_flagged(self, tiny_vocab):
        two_region_detection(allow_self_pairs=True).validate(tiny_vocab)

    def test_negative_score_rejected(self, tiny_vocab):
        region = Region(box=make_box(), entity_scores=np.array([0.5, -0.1, 0.2]))
        with pytest.raises(InputValidationError, match=">= 0"):
            region.validate(3)

    def test_wrong_score_length_rejected(self):
        region = Region(box=make_box(), entity_scores=np.array([0.5, 0.5]))
        with pytest.raises(InputValidationError, match="shape"):
            region.validate(3)

    def test_pair_referencing_missing_region_rejected(self):
        pair = PairScores(0, 2, np.array([0.5, 0.5]))
        with pytest.raises(InputValidationError, match="missing region"):
            pair.validate(2, 2, False)


class TestIO:
    def test_round_trip_is_bit_exact(self, tiny_vocab, tmp_path):
        rng = np.random.default_rng(7)
        dets = [
            DetectionSet(
                image_id=f"img{i}",
                regions=(
                    Region(make_box(0, 0, 10, 10), rng.uniform(0.001, 1, 3)),
                    Region(make_box(4, 4, 22, 18), rng.uniform(0.001, 1, 3)),
                ),
                pairs=(
                    PairScores(0, 1, rng.uniform(0.001, 1, 2)),
                    PairScores(1, 0, rng.uniform(0.001, 1, 2)),
                ),
            )
            for i in range(4)
        ]
        path = tmp_path / "dets.jsonl"
        save_detections(path, dets, tiny_vocab)
        loaded = load_detections(path, tiny_vocab)
        assert len(loaded) == len(dets)
        for a, b in zip(dets, loaded):
            assert a.image_id == b.image_id
            for ra, rb in zip(a.regions, b.regions):
                assert ra.box == rb.box
                assert np.array_equal(ra.entity_scores, rb.entity_scores)
            for pa, pb in zip(a.pairs, b.pairs):
                assert (pa.subject_region_index, pa.object_region_index) == (
                    pb.subject_region_index,
                    pb.object_region_index,
                )
                assert np.array_equal(pa.predicate_scores, pb.predicate_scores)

    def test_save_twice_is_byte_identical(self, tiny_vocab, tmp_path):
        dets = [two_region_detection()]
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_detections(p1, dets, tiny_vocab)
        save_detections(p2, dets, tiny_vocab)
        assert p1.read_bytes() == p2.read_bytes()

    def test_omitted_labels_get_floor(self, tiny_vocab, tmp_path):
        rec = {
            "image_id": "img0",
            "regions": [
                {"box": [0, 0, 10, 10], "entity_scores": {"person": 0.9}},
                {"box": [5, 5, 20, 20], "entity_scores": {"dog": 0.8, "horse": 0.0}},
            ],
            "pairs": [
                {"s": 0, "o": 1, "predicate_scores": {"rides": 0.7}},
                {"s": 1, "o": 0, "predicate_scores": {"next_to": 0.6}},
            ],
        }
        path = tmp_path / "dets.jsonl"
        path.write_text(json.dumps(rec) + "\n")
        (det,) = load_detections(path, tiny_vocab)
        assert det.regions[0].entity_scores[1] == SCORE_FLOOR  # dog omitted
        assert det.regions[1].entity_scores[2] == SCORE_FLOOR  # horse explicit zero
        assert det.pairs[0].predicate_scores[1] == SCORE_FLOOR

    def test_errors_carry_line_numbers(self, tiny_vocab, tmp_path):
        good = {
            "image_id": "img0",
            "regions": [{"box": [0, 0, 10, 10], "entity_scores": {"person": 1.0}}],
            "pairs": [],
        }
        bad = dict(good, image_id="img1", pairs=[{"s": 0, "o": 0, "predicate_scores": {}}])
        path = tmp_path / "dets.jsonl"
        path.write_text(json.dumps(good) + "\n" + json.dumps(bad) + "\n")
        with pytest.raises(InputValidationError, match=":2"):
            load_detections(path, tiny_vocab)

    def test_unknown_label_rejected(self, tiny_vocab, tmp_path):
        rec = {
            "image_id": "img0",
            "regions": [{"box": [0, 0, 10, 10], "entity_scores": {"cat": 1.0}}],
            "pairs": [],
        }
        path = tmp_path / "dets.jsonl"
        path.write_text(json.dumps(rec) + "\n")
        with pytest.raises(InputValidationError, match="cat"):
            load_detections(path, tiny_vocab)

    def test_negative_score_in_file_rejected(self, tiny_vocab, tmp_path):
        rec = {
            "image_id": "img0",
            "regions": [{"box": [0, 0, 10, 10], "entity_scores": {"person": -0.5}}],
            "pairs": [],
        }
        path = tmp_path / "dets.jsonl"
        path.write_text(json.dumps(rec) + "\n")
        with pytest.raises(InputValidationError, match="nonnegative"):
            load_detections(path, tiny_vocab)


class TestSynthesize:
    def test_one_tuple_yields_two_regions_two_pairs(self, tiny_vocab):
        (det,) = synthesize_detections([make_tuple()], tiny_vocab, noise=0.5, seed=0)
        assert len(det.regions) == 2
        assert len(det.pairs) == 2
        det.validate(tiny_vocab)

    def test_noise_zero_argmax_is_true_label(self, tiny_vocab):
        t = make_tuple(s=2, p=1, o=0)
        (det,) = synthesize_detections([t], tiny_vocab, noise=0.0, seed=0)
        assert int(np.argmax(det.regions[0].entity_scores)) == 2
        assert int(np.argmax(det.regions[1].entity_scores)) == 0
        forward = next(p for p in det.pairs if p.subject_region_index == 0)
        assert int(np.argmax(forward.predicate_scores)) == 1
        assert forward.predicate_scores[1] == 1.0
        # the non-annotated direction is all floor
        backward = next(p for p in det.pairs if p.subject_region_index == 1)
        assert np.all(backward.predicate_scores == SCORE_FLOOR)

    def test_shared_box_merges_regions(self, tiny_vocab):
        shared = make_box(0, 0, 10, 10)
        tuples = [
            make_tuple(s=0, p=0, o=1, sbox=shared, obox=make_box(20, 20, 30, 30)),
            make_tuple(s=0, p=1, o=2, sbox=shared, obox=make_box(40, 40, 50, 50)),
        ]
        (det,) = synthesize_detections(tuples, tiny_vocab, noise=0.3, seed=1)
        assert len(det.regions) == 3
        assert len(det.pairs) == 6

    def test_true_labels_all_score_one(self, tiny_vocab):
        shared = make_box(0, 0, 10, 10)
        tuples = [
            make_tuple(s=0, p=0, o=1, sbox=shared),
            make_tuple(s=2, p=0, o=1, sbox=shared),  # same box, second true label
        ]
        (det,) = synthesize_detections(tuples, tiny_vocab, noise=0.3, seed=2)
        assert det.regions[0].entity_scores[0] == 1.0
        assert det.regions[0].entity_scores[2] == 1.0

    def test_deterministic_given_seed(self, tiny_vocab):
        tuples = [make_tuple(image_id=f"img{i % 2}", s=i % 3) for i in range(4)]
        a = synthesize_detections(tuples, tiny_vocab, noise=0.4, seed=9)
        b = synthesize_detections(tuples, tiny_vocab, noise=0.4, seed=9)
        c = synthesize_detections(tuples, tiny_vocab, noise=0.4, seed=10)
        for da, db in zip(a, b):
            for ra, rb in zip(da.regions, db.regions):
                assert np.array_equal(ra.entity_scores, rb.entity_scores)
            for pa, pb in zip(da.pairs, db.pairs):
                assert np.array_equal(pa.predicate_scores, pb.predicate_scores)
        assert not np.array_equal(a[0].regions[0].entity_scores, c[0].regions[0].entity_scores)

    def test_scores_never_below_floor(self, tiny_vocab):
        tuples = [make_tuple(image_id=f"img{i}") for i in range(3)]
        for det in synthesize_detections(tuples, tiny_vocab, noise=0.0, seed=0):
            for region in det.regions:
                assert np.all(region.entity_scores >= SCORE_FLOOR)
            for pair in det.pairs:
                assert np.all(pair.predicate_scores >= SCORE_FLOOR)

    def test_predicate_noise_controls_pair_side(self, tiny_vocab):
        t = make_tuple()
        (det,) = synthesize_detections(
            [t], tiny_vocab, noise=0.0, seed=3, predicate_noise=2.0
        )
        backward = next(p for p in det.pairs if p.subject_region_index == 1)
        assert backward.predicate_scores.max() > 1.0
        for region in det.regions:
            assert sorted(region.entity_scores)[:-1] == [SCORE_FLOOR, SCORE_FLOOR]

    def test_negative_noise_rejected(self, tiny_vocab):
        with pytest.raises(ValueError):
            synthesize_detections([make_tuple()], tiny_vocab, noise=-0.1)
