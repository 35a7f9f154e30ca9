import unittest

from muonbench.benchmarker import Timings

from tests import MuonbenchTestCase


class FakeClock(object):

    def __init__(self):
        self.now = 10.0

    def __call__(self):
        return self.now


class TimingsTestCase(MuonbenchTestCase):

    def test_accumulates(self):
        clock = FakeClock()
        timings = Timings(clock=clock)
        for _ in range(4):
            timings.time_gradients += 0.5
            timings.time_optimizer += 0.25
            timings.count_step()
        timings.time_evaluating += 1.0
        clock.now = 12.5
        self.assertEqual(timings.steps, 4)
        self.assertEqual(timings.elapsed_ms(), 2500.0)
        self.assertEqual(timings.times, {'gradients': 2.0, 'optimizer': 1.0,
                                         'evaluating': 1.0, 'step_ms': 750.0})

    def test_no_steps(self):
        timings = Timings(clock=FakeClock())
        self.assertEqual(timings.times['step_ms'], 0.0)
        self.assertEqual(timings.elapsed_ms(), 0.0)
        self.assertEqual(timings.now(), 10.0)


if __name__ == '__main__':
    unittest.main()
