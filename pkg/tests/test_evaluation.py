import numpy as np
import pytest
import torch

from freqdoor.errors import ParameterError
from freqdoor.evaluation import (
    ClassificationRefs,
    attack_success_rate,
    benign_accuracy,
    classify_restoration,
    frequency_report,
    read_rows_csv,
    stealth_report,
    write_rows_csv,
)
from freqdoor.imaging import degradation_target
from freqdoor.perceptual import perceptual_distance
from freqdoor.sfinet import TriggerInjector, inject
from freqdoor.victim import make_restorer, restore


def rand_img(h, w, c, seed):
    return np.random.default_rng(seed).random((h, w, c))


def refs_for(model, lq):
    return ClassificationRefs(hq=restore(model, lq), degraded=degradation_target(lq, 0.1))


def test_classify_references_themselves():
    model = make_restorer(3, 8, seed=0)
    lq = rand_img(16, 16, 3, 1)
    refs = refs_for(model, lq)
    assert classify_restoration(refs.hq, refs) == 1
    assert classify_restoration(refs.degraded, refs) == 0


def test_classify_midpoint_matches_direct_distances():
    model = make_restorer(3, 8, seed=2)
    lq = rand_img(16, 16, 3, 3)
    refs = refs_for(model, lq)
    mid = 0.5 * (refs.hq + refs.degraded)
    expected = 1 if perceptual_distance(mid, refs.hq) < perceptual_distance(mid, refs.degraded) else 0
    assert classify_restoration(mid, refs) == expected


def test_classify_shape_mismatch():
    refs = ClassificationRefs(hq=rand_img(16, 16, 3, 0), degraded=rand_img(16, 16, 3, 1))
    with pytest.raises(ParameterError):
        classify_restoration(rand_img(8, 8, 3, 2), refs)


def test_clean_baseline_scores_perfect_benign_accuracy():
    model = make_restorer(3, 8, seed=4)
    testset = [rand_img(16, 16, 3, 10 + i) for i in range(6)]
    refs = [refs_for(model, lq) for lq in testset]
    assert benign_accuracy(model, testset, refs) == 100.0


def test_zero_residual_attack_has_zero_success_on_clean_model():
    model = make_restorer(3, 8, seed=5)
    torch.manual_seed(0)
    injector = TriggerInjector(channels=3, base_width=8)
    with torch.no_grad():
        injector.head.weight.zero_()
        injector.head.bias.zero_()
    trigger = rand_img(16, 16, 3, 50)
    testset = [rand_img(16, 16, 3, 20 + i) for i in range(6)]
    refs = [refs_for(model, lq) for lq in testset]
    asr = attack_success_rate(model, lambda img: inject(img, trigger, injector), testset, refs)
    assert asr == 0.0


def test_asr_complements_positive_rate():
    # a poorly matched model: labels may be mixed, but ASR + share-of-ones == 100
    model = make_restorer(3, 8, seed=6)
    ref_model = make_restorer(3, 8, seed=7)
    testset = [rand_img(16, 16, 3, 30 + i) for i in range(8)]
    refs = [refs_for(ref_model, lq) for lq in testset]
    poison = lambda img: np.clip(img + 0.01, 0.0, 1.0)
    asr = attack_success_rate(model, poison, testset, refs)
    from freqdoor.victim import restore_batch
    from freqdoor.evaluation import classify_restoration as classify

    outs = restore_batch(model, [poison(x) for x in testset])
    ones = 100.0 * sum(classify(o, r) for o, r in zip(outs, refs)) / len(testset)
    assert asr + ones == 100.0


def test_labels_invariant_to_test_order():
    model = make_restorer(3, 8, seed=8)
    ref_model = make_restorer(3, 8, seed=9)
    testset = [rand_img(16, 16, 3, 40 + i) for i in range(6)]
    refs = [refs_for(ref_model, lq) for lq in testset]
    from freqdoor.victim import restore_batch

    outs = restore_batch(model, testset)
    labels = [classify_restoration(o, r) for o, r in zip(outs, refs)]
    order = [3, 1, 5, 0, 4, 2]
    outs_p = restore_batch(model, [testset[i] for i in order])
    labels_p = [classify_restoration(o, refs[i]) for o, i in zip(outs_p, order)]
    assert labels_p == [labels[i] for i in order]


def test_empty_sets_rejected():
    model = make_restorer(3, 8, seed=0)
    with pytest.raises(ParameterError):
        benign_accuracy(model, [], [])
    with pytest.raises(ParameterError):
        attack_success_rate(model, lambda x: x, [], [])


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def test_stealth_report_identity_rows():
    lq = [rand_img(16, 16, 3, i) for i in range(3)]
    gt = [rand_img(16, 16, 3, 100 + i) for i in range(3)]
    report = stealth_report(lq, [x.copy() for x in lq], gt)
    for row in report["rows"]:
        assert row["psnr_benign_gt"] == row["psnr_poisoned_gt"]
        assert row["ssim_benign_gt"] == row["ssim_poisoned_gt"]
        assert row["psnr_poisoned_benign"] == 100.0


def test_stealth_report_means_match_rows():
    lq = [rand_img(16, 16, 3, i) for i in range(4)]
    poi = [np.clip(x + 0.01, 0, 1) for x in lq]
    gt = [rand_img(16, 16, 3, 200 + i) for i in range(4)]
    report = stealth_report(lq, poi, gt)
    for key, value in report["means"].items():
        assert abs(value - np.mean([r[key] for r in report["rows"]])) < 1e-9


def test_stealth_report_alignment_error():
    with pytest.raises(ParameterError):
        stealth_report([rand_img(16, 16, 3, 0)], [], [rand_img(16, 16, 3, 1)])


def test_frequency_report_identity_and_means():
    imgs = [rand_img(16, 16, 3, i) for i in range(5)]
    report = frequency_report(imgs, [x.copy() for x in imgs])
    assert all(r["low_mse"] == 0.0 and r["high_mse"] == 0.0 for r in report["rows"])
    poi = [np.clip(x + 0.05 * rand_img(16, 16, 3, 50 + i), 0, 1) for i, x in enumerate(imgs)]
    report = frequency_report(imgs, poi)
    assert abs(report["means"]["low_mse"] - np.mean([r["low_mse"] for r in report["rows"]])) < 1e-9
    assert abs(report["means"]["high_mse"] - np.mean([r["high_mse"] for r in report["rows"]])) < 1e-9


def test_csv_roundtrip_with_provenance(tmp_path):
    rows = [{"index": 0, "value": 1.25}, {"index": 1, "value": -3.5}]
    path = tmp_path / "rows.csv"
    write_rows_csv(path, rows, {"config_hash": "abc123", "seed": 7})
    text = path.read_text()
    assert text.startswith("# config_hash=abc123\n# seed=7\n")
    back = read_rows_csv(path)
    assert len(back) == 2
    assert float(back[1]["value"]) == -3.5
