import pytest

from gridmor.utils.timer import StageTimer, TimerError


def test_stage_laps_accumulate():
    timer = StageTimer(decimal_places=6)
    with timer.stage("fom"):
        pass
    first = timer.laps["fom"]
    timer.start("fom")
    seconds = timer.stop()
    assert seconds >= 0
    assert timer.laps["fom"] >= first
    assert timer.seconds("fom") == round(timer.laps["fom"], 6)
    assert not timer.running


def test_stage_is_stopped_when_the_body_raises():
    timer = StageTimer()
    with pytest.raises(ZeroDivisionError):
        with timer.stage("rom"):
            1 / 0
    assert not timer.running
    assert "rom" in timer.laps


def test_misuse_is_reported():
    timer = StageTimer()
    with pytest.raises(TimerError):
        timer.stop()
    timer.start("reduce")
    with pytest.raises(TimerError):
        timer.start("gramians")
