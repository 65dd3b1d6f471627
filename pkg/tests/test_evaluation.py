import numpy as np
import pytest
import torch.nn as nn

from dataset.storage import StoredSequence, read_groundtruth, write_sequence
from meme.errors import ShapeError
from meme.evaluation import (
    evaluate_model,
    prediction_path,
    score_prediction_files,
    track_sequences,
    write_prediction_files,
)
from meme.network import build_tracker


def store(root, sequences):
    for seq in sequences:
        write_sequence(root / seq.entry.path, seq.rgb / 255.0, seq.x / 255.0, seq.boxes, seq.visible)


def prompted_tracker(cfg, backbone):
    model = build_tracker(cfg, backbone, seed=0).eval()
    for layer in model.layers:
        nn.init.normal_(layer.prompt.w8.weight, std=0.5)
    return model


def test_prediction_files_hold_one_line_per_frame(cfg, backbone, sequences, tmp_path):
    store(tmp_path / "data", sequences)
    outputs = track_sequences(backbone, sequences, cfg.template_size)
    paths = write_prediction_files(tmp_path / "predictions", sequences, outputs)

    for seq, path in zip(sequences, paths):
        gt_boxes, _ = read_groundtruth(tmp_path / "data" / seq.entry.path / "groundtruth.txt")
        lines = path.read_text().splitlines()
        assert len(lines) == len(gt_boxes) == seq.length
        assert np.allclose([float(v) for v in lines[0].split(",")], seq.boxes[0])


def test_scoring_files_matches_scoring_in_memory(cfg, backbone, sequences, tmp_path):
    store(tmp_path / "data", sequences)
    outputs = track_sequences(backbone, sequences, cfg.template_size)
    write_prediction_files(tmp_path / "predictions", sequences, outputs)

    entries = [seq.entry for seq in sequences]
    from_files, groups, results = score_prediction_files(tmp_path / "data", entries, tmp_path / "predictions")
    in_memory, _, _ = evaluate_model(backbone, sequences, cfg.template_size)

    assert [len(r) for r in results] == [seq.length - 1 for seq in sequences]
    assert all(r.confidences is not None for r in results)
    assert from_files.sequences == len(sequences)
    assert from_files.mean_iou == pytest.approx(in_memory.mean_iou, abs=1e-3)
    assert set(groups) == {seq.entry.degradation for seq in sequences}


def test_short_prediction_file_is_rejected(cfg, sequences, tmp_path):
    seq = sequences[0]
    store(tmp_path / "data", [seq])
    path = prediction_path(tmp_path / "predictions", seq.entry)
    path.parent.mkdir(parents=True)
    np.savetxt(path, seq.boxes[1:], delimiter=",")
    with pytest.raises(ShapeError, match="groundtruth frames"):
        score_prediction_files(tmp_path / "data", [seq.entry], tmp_path / "predictions")


def test_modality_labels_do_not_change_predictions(cfg, backbone, sequences):
    model = prompted_tracker(cfg, backbone)
    labels = [seq.entry.modality for seq in sequences]
    shuffled = labels[2:] + labels[:2]
    assert shuffled != labels
    relabelled = [
        StoredSequence(entry=seq.entry.model_copy(update={"modality": label}),
                       rgb=seq.rgb, x=seq.x, boxes=seq.boxes, visible=seq.visible)
        for seq, label in zip(sequences, shuffled)
    ]

    original = track_sequences(model, sequences, cfg.template_size)
    again = track_sequences(model, relabelled, cfg.template_size)
    for (boxes_a, conf_a), (boxes_b, conf_b) in zip(original, again):
        assert np.array_equal(boxes_a, boxes_b)
        assert np.array_equal(conf_a, conf_b)
