"""Wall-clock timing of pipeline stages (initialize, fom, gramians, reduce, rom)."""
import logging
import time
from contextlib import contextmanager

logger = logging.getLogger(__name__)


class TimerError(Exception):
    """A stage was stopped without being started, or started twice"""


class StageTimer:
    """Accumulates seconds per stage; repeated runs of one stage add up."""

    def __init__(self, decimal_places=3):
        self.decimal_places = decimal_places
        self.laps = {}
        self._stage = None
        self._started = None

    @property
    def running(self):
        return self._stage is not None

    def start(self, stage):
        if self.running:
            raise TimerError(f"stage {self._stage!r} is still running, stop it before {stage!r}")
        self._stage = stage
        self._started = time.perf_counter()

    def stop(self):
        """Seconds since the matching start, rounded; also added to the stage lap."""
        if not self.running:
            raise TimerError("no stage is running")
        seconds = time.perf_counter() - self._started
        stage, self._stage, self._started = self._stage, None, None
        self.laps[stage] = self.laps.get(stage, 0.0) + seconds
        logger.debug(f"{stage} took {seconds:.{self.decimal_places}f} s")
        return round(seconds, self.decimal_places)

    @contextmanager
    def stage(self, name):
        self.start(name)
        try:
            yield self
        finally:
            self.stop()

    def seconds(self, stage):
        return round(self.laps[stage], self.decimal_places)
