import logging
import time
from contextlib import contextmanager

try:
    import psutil
except ImportError:
    psutil = None


log = logging.getLogger('smallpia')


class Timer:

    """Measure nested blocks of code using arbitrary clocks.

    Each clock is a callable returning (clock_name, reading) pairs;
    a block's duration is the difference of the readings at exit and entry.

    >>> timer = Timer([get_time_timings])
    >>> with timer('pia') as timings:
    ...     with timer('evaluate'):
    ...         time.sleep(.1)
    ...     with timer('improve'):
    ...         time.sleep(.2)
    ...
    >>> for name, duration in timings:
    ...     print(name, round(duration, 1))
    ...
    pia.evaluate.time 0.1
    pia.improve.time 0.2
    pia.time 0.3

    The list is shared by all the blocks nested in the outermost one,
    and is only filled in as blocks exit.

    """

    def __init__(self, clocks=(), prefix=None):
        self.clocks = list(clocks)
        self.prefixes = [prefix] if prefix else []
        self.separator = '.'
        self._timings = None

    @contextmanager
    def __call__(self, name):
        first = self._timings is None
        if first:
            self._timings = []
        timings = self._timings

        self.prefixes.append(name)
        full_name = self.separator.join(self.prefixes)

        log.debug("timing start: %s", full_name)
        starts = dict(pair for clock in self.clocks for pair in clock())
        try:
            yield timings
        finally:
            ends = [pair for clock in reversed(self.clocks) for pair in clock()]
            durations = {cname: end - starts[cname] for cname, end in ends}

            log.debug(
                "timing end: %s: %s",
                full_name,
                ' '.join('%s %.4f' % t for t in durations.items()),
            )
            for cname, duration in durations.items():
                timings.append((f'{full_name}{self.separator}{cname}', duration))

            self.prefixes.pop()
            if first:
                self._timings = None

    def add_default_clocks(self):
        if psutil and get_psutil_timings not in self.clocks:
            self.clocks.append(get_psutil_timings)
        if get_time_timings not in self.clocks:
            self.clocks.append(get_time_timings)
        return self


def get_psutil_timings():
    cpu_times = psutil.Process().cpu_times()
    for name in ['user', 'system']:
        yield name, getattr(cpu_times, name)


def get_time_timings():
    return [('time', time.perf_counter())]
