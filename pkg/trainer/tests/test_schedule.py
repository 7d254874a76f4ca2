import pytest

from negatune_trainer.schedule import lr_at, warmup_steps


def test_warmup_step_count():
    assert warmup_steps(100, 0.03) == 3
    assert warmup_steps(1000, 0.03) == 30
    assert warmup_steps(20, 0.03) == 1   # never zero
    assert warmup_steps(10, 0.25) == 2


def test_peak_attained_exactly_at_warmup_step():
    for total in (20, 100, 1000):
        warmup = warmup_steps(total, 0.03)
        assert abs(lr_at(warmup, total, 5e-5) - 5e-5) <= 1e-9


def test_linear_ramp_before_peak():
    assert lr_at(1, 100, 5e-5) == pytest.approx(5e-5 / 3)
    assert lr_at(2, 100, 5e-5) == pytest.approx(2 * 5e-5 / 3)


def test_cosine_monotone_decay_after_warmup():
    total = 100
    values = [lr_at(step, total, 5e-5) for step in range(3, total + 1)]
    for earlier, later in zip(values, values[1:]):
        assert later < earlier
    assert values[-1] == pytest.approx(0.0, abs=1e-12)


def test_cosine_midpoint_half_peak():
    # halfway through the decay the cosine sits at exactly peak/2
    total, warmup = 103, 3
    midpoint = warmup + (total - warmup) // 2
    assert lr_at(midpoint, total, 5e-5) == pytest.approx(2.5e-5)


def test_step_bounds_enforced():
    with pytest.raises(ValueError):
        lr_at(0, 10, 5e-5)
    with pytest.raises(ValueError):
        lr_at(11, 10, 5e-5)
