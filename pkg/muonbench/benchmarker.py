import time

__all__ = ['Timings']


class Timings(object):
    '''
    Wall-clock seconds spent in the phases of a training run. Only filled in
    when a run is configured with ``benchmark=True``.

    :param clock: A function returning seconds, ``time.perf_counter`` by
        default.
    '''

    def __init__(self, clock=time.perf_counter):
        self.__time_gradients = 0.0
        self.__time_optimizer = 0.0
        self.__time_evaluating = 0.0
        self.__steps = 0
        self.__clock = clock
        self.__start = clock()

    @property
    def time_gradients(self):
        return self.__time_gradients

    @time_gradients.setter
    def time_gradients(self, val):
        self.__time_gradients = val

    @property
    def time_optimizer(self):
        return self.__time_optimizer

    @time_optimizer.setter
    def time_optimizer(self, val):
        self.__time_optimizer = val

    @property
    def time_evaluating(self):
        return self.__time_evaluating

    @time_evaluating.setter
    def time_evaluating(self, val):
        self.__time_evaluating = val

    @property
    def steps(self):
        return self.__steps

    def now(self):
        return self.__clock()

    def count_step(self):
        self.__steps += 1

    def elapsed_ms(self):
        """
        Milliseconds since this object was created.
        """
        return 1000.0 * (self.__clock() - self.__start)

    @property
    def times(self):
        """
        Seconds per phase, plus the mean milliseconds of one optimizer
        step (gradients and update) over the steps counted so far.
        """
        per_step = 0.0
        if self.__steps:
            per_step = (1000.0 * (self.__time_gradients + self.__time_optimizer)
                        / self.__steps)
        return {'gradients': self.__time_gradients,
                'optimizer': self.__time_optimizer,
                'evaluating': self.__time_evaluating,
                'step_ms': per_step}
