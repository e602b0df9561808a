"""Model selection and the reliability Monte Carlo."""

import numpy as np
import pytest

from halp.selector import (
    CatalogEntry,
    ChannelState,
    Mode,
    TaskInstance,
    load_catalog,
    offload_time_ms,
    predict_latency,
    reliability_csv,
    run_reliability,
    select_model,
)

CATALOG = load_catalog()


def entry(name, t, th, acc, alpha=1.0, rho=224):
    return CatalogEntry(name, alpha, rho, t, th, acc)


def task(deadline, image_kb=300.0, rate=50.0):
    return TaskInstance(image_bytes=image_kb * 1024, deadline_ms=deadline, rate_mbps=rate)


def test_catalog_shape():
    assert len(CATALOG) == 13
    names = {e.name for e in CATALOG}
    assert "vgg16" in names and "MobileNet_v1_0.25_160" in names
    for e in CATALOG:
        assert e.t_halp_ms <= e.t_standalone_ms
        assert 0.0 < e.top1_accuracy < 1.0


def test_catalog_invariant_enforced():
    with pytest.raises(ValueError):
        entry("bad", 100.0, 200.0, 0.5)
    with pytest.raises(ValueError):
        entry("bad", 100.0, 90.0, 1.5)


def test_predict_latency_standalone_ignores_channel():
    e = entry("m", 1000.0, 600.0, 0.7)
    for rate in (25.0, 50.0, 100.0):
        assert predict_latency(e, task(500, rate=rate), Mode.STANDALONE) == 1000.0


def test_predict_latency_halp_adds_offload():
    e = entry("m", 1000.0, 350.0, 0.46, alpha=0.25, rho=160)
    t = task(500, image_kb=300.0, rate=50.0)
    want = offload_time_ms(300 * 1024, 50.0) + 350.0
    assert predict_latency(e, t, Mode.HALP) == pytest.approx(want)
    assert predict_latency(e, t, Mode.HALP) == pytest.approx(380.72, abs=0.05)


def test_predict_latency_zero_image():
    e = entry("m", 1000.0, 350.0, 0.46)
    tiny = TaskInstance(image_bytes=1e-9, deadline_ms=500, rate_mbps=50.0)
    assert predict_latency(e, tiny, Mode.HALP) == pytest.approx(350.0)


def test_select_standalone_below_555_returns_none():
    for deadline in (375, 450, 500, 554):
        assert select_model(CATALOG, task(deadline), Mode.STANDALONE) is None
    assert select_model(CATALOG, task(555), Mode.STANDALONE) is not None


def test_select_relaxed_deadline_gives_top_accuracy():
    got = select_model(CATALOG, task(4905), Mode.STANDALONE)
    assert got.name == "vgg16"
    got = select_model(CATALOG, task(5000, rate=75.0), Mode.HALP)
    assert got.name == "vgg16"


def test_select_impossible_deadline():
    assert select_model(CATALOG, task(10.0), Mode.HALP) is None


def test_select_tie_breaks_to_lower_latency_then_name():
    cat = [
        entry("b", 400.0, 300.0, 0.5),
        entry("a", 500.0, 400.0, 0.5),
        entry("c", 400.0, 300.0, 0.5),
    ]
    got = select_model(cat, task(1000), Mode.STANDALONE)
    assert got.name == "b"  # same accuracy: faster wins, then name


def test_select_model_empty_catalog():
    with pytest.raises(ValueError):
        select_model([], task(100), Mode.HALP)


@pytest.mark.parametrize("case", range(200))
def test_select_model_brute_force(case):
    """The selection is always the maximum-accuracy qualifying entry."""
    rng = np.random.default_rng(5000 + case)
    n = int(rng.integers(1, 12))
    cat = []
    for i in range(n):
        t = float(rng.uniform(100, 3000))
        th = float(rng.uniform(50, t))
        cat.append(entry(f"m{i}", t, th, float(rng.uniform(0.1, 0.9))))
    tk = task(float(rng.uniform(50, 3500)), image_kb=float(rng.uniform(100, 500)),
              rate=float(rng.uniform(25, 100)))
    mode = Mode.HALP if rng.integers(0, 2) else Mode.STANDALONE
    got = select_model(cat, tk, mode)
    qualifying = [e for e in cat if predict_latency(e, tk, mode) <= tk.deadline_ms]
    if not qualifying:
        assert got is None
    else:
        assert got is not None
        best = max(q.top1_accuracy for q in qualifying)
        assert got.top1_accuracy == best
        assert predict_latency(got, tk, mode) <= tk.deadline_ms


def test_reliability_standalone_cliff():
    pts = run_reliability(CATALOG, [375, 554, 555, 700], ChannelState.MEDIUM,
                          5000, 1, Mode.STANDALONE)
    assert pts[0].failure_prob == 1.0
    assert pts[1].failure_prob == 1.0
    assert pts[2].failure_prob == 0.0
    assert pts[3].failure_prob == 0.0
    assert pts[2].service_reliability == pytest.approx(0.455)


def test_reliability_halp_425_all_channels_zero():
    for ch in ChannelState:
        pts = run_reliability(CATALOG, [425], ch, 10000, 42, Mode.HALP)
        assert pts[0].failure_prob <= 0.02, ch


def test_reliability_halp_375_by_channel():
    poor = run_reliability(CATALOG, [375], ChannelState.POOR, 10000, 42, Mode.HALP)
    med = run_reliability(CATALOG, [375], ChannelState.MEDIUM, 10000, 42, Mode.HALP)
    good = run_reliability(CATALOG, [375], ChannelState.GOOD, 10000, 42, Mode.HALP)
    assert poor[0].failure_prob > 0.9
    assert 0.4 <= med[0].failure_prob <= 0.6
    assert good[0].failure_prob < 0.05


def test_failure_prob_monotone_in_deadline():
    deadlines = [375, 400, 425, 450, 500, 600, 800, 1200, 1800]
    for mode in Mode:
        for ch in ChannelState:
            pts = run_reliability(CATALOG, deadlines, ch, 4000, 3, mode)
            fails = [p.failure_prob for p in pts]
            assert all(a >= b - 0.02 for a, b in zip(fails, fails[1:])), (mode, ch)


def test_reliability_bounds_and_dominance():
    deadlines = list(range(375, 1801, 75))
    max_acc = max(e.top1_accuracy for e in CATALOG)
    for ch in ChannelState:
        halp = run_reliability(CATALOG, deadlines, ch, 10000, 42, Mode.HALP)
        alone = run_reliability(CATALOG, deadlines, ch, 10000, 42, Mode.STANDALONE)
        for h, s in zip(halp, alone):
            assert 0.0 <= h.service_reliability <= max_acc + 1e-9
            assert h.service_reliability >= s.service_reliability - 1e-9


def test_reliability_saturates_at_model_accuracy():
    """Beyond some throughput the reliability equals the best accuracy the
    deadline admits; more bandwidth adds nothing."""
    wide = run_reliability(CATALOG, [600], ChannelState.GOOD, 5000, 9, Mode.HALP)
    # deadline 600 at good channel: offload ~20-30 ms, so 0.50_160 (462ms) fits
    fit = [e for e in CATALOG if e.t_halp_ms <= 560]
    best = max(e.top1_accuracy for e in fit)
    assert wide[0].failure_prob == 0.0
    assert wide[0].service_reliability == pytest.approx(best)


def test_reliability_deterministic_given_seed():
    a = run_reliability(CATALOG, [400, 500], ChannelState.POOR, 3000, 17, Mode.HALP)
    b = run_reliability(CATALOG, [400, 500], ChannelState.POOR, 3000, 17, Mode.HALP)
    assert a == b
    c = run_reliability(CATALOG, [400, 500], ChannelState.POOR, 3000, 18, Mode.HALP)
    assert any(x != y for x, y in zip(a, c))


def test_reliability_csv_format():
    pts = run_reliability(CATALOG, [400], ChannelState.POOR, 100, 1, Mode.HALP)
    text = reliability_csv({("halp", "poor"): pts})
    lines = text.splitlines()
    assert lines[0] == "deadline_ms,mode,channel,failure_prob,reliability"
    assert lines[1].startswith("400,halp,poor,")


def test_task_instance_rejects_nonpositive_image():
    with pytest.raises(ValueError):
        TaskInstance(image_bytes=0, deadline_ms=100, rate_mbps=50)


def test_image_draws_truncated_positive():
    from halp.selector import draw_tasks

    rng = np.random.default_rng(0)
    image, rate = draw_tasks(rng, 100000, ChannelState.POOR, 400)
    assert image.min() >= 1024
    assert 25.0 <= rate.min() and rate.max() <= 50.0
    assert abs(image.mean() / 1024 - 300.0) < 1.0
