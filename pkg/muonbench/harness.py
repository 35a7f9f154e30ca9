"""
The training loop and what is measured on a single run: evaluation rows,
tokens-to-target, loss spikes, and the empirical convergence-rate check.
"""
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .benchmarker import Timings
from .errors import ConfigError, NumericError, RangeError
from .linalg import Rng, derive_seed, dtype_for
from .optim import (
    ADAMW,
    MUON,
    AdamWHyper,
    MuonHyper,
    Optimizer,
    Schedule,
    clip_global_norm,
    global_norm,
    schedule_eta,
)
from .tasks import MlpSpec, QuadraticSpec

logger = logging.getLogger(__name__)

__all__ = [
    'EvalRow',
    'RateCheckResult',
    'RateCheckSpec',
    'RunRecord',
    'RunSummary',
    'ScheduleSpec',
    'TrainConfig',
    'loss_spike_count',
    'rate_check',
    'run_rate_check',
    'smoothed_losses',
    'tokens_to_target',
    'train',
]

TASKS = ('quadratic', 'mlp')
STOP_RULES = ('fixed_steps', 'tokens_to_target')

# independent random streams of a run, derived from its seed
TASK_STREAM = 0
INIT_STREAM = 1
BATCH_STREAM = 2
NOISE_STREAM = 3


@dataclass
class ScheduleSpec:
    """
    The schedule of a run, independent of its length and peak rate.
    ``eta_min_fraction`` is ``eta_min / eta0`` (at most 0.01).
    """
    kind: str = 'cosine'
    warmup_fraction: float = 0.01
    eta_min_fraction: float = 0.0

    def validate(self):
        if not 0.0 <= self.eta_min_fraction <= 0.01:
            raise ConfigError("must lie in [0, 0.01]", 'schedule.eta_min_fraction')
        return self

    def build(self, total_steps, eta0):
        return Schedule(total_steps=total_steps, eta0=eta0,
                        warmup_fraction=self.warmup_fraction,
                        eta_min=self.eta_min_fraction * eta0,
                        kind=self.kind).validate()


@dataclass
class TrainConfig:
    """
    Everything that determines a training run. Two runs with equal configs
    produce identical records.

    The dataset is drawn from ``data_seed`` when it is set and from ``seed``
    otherwise; initialization, batches and gradient noise always come from
    ``seed``.
    """
    task: str = 'quadratic'
    quadratic: QuadraticSpec = field(default_factory=QuadraticSpec)
    mlp: MlpSpec = field(default_factory=MlpSpec)
    optimizer: str = MUON
    muon: MuonHyper = field(default_factory=MuonHyper)
    adamw: AdamWHyper = field(default_factory=AdamWHyper)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    batch_size: int = 32
    total_steps: int = 200
    seed: int = 0
    data_seed: Optional[int] = None
    precision: str = 'f64'
    target_loss: Optional[float] = None
    eval_every: int = 10
    stop_rule: str = 'fixed_steps'
    clip_norm: float = 1.0
    smoothing_window: int = 5
    spike_ratio: float = 1.25
    divergence_factor: float = 10.0
    benchmark: bool = False
    run_id: Optional[str] = None

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError("must be one of {}, got {!r}".format(TASKS, self.task),
                              'task')
        if self.optimizer not in (MUON, ADAMW):
            raise ConfigError("must be 'muon' or 'adamw', got {!r}".format(
                              self.optimizer), 'optimizer')
        if self.batch_size < 1:
            raise ConfigError("must be at least 1", 'batch_size')
        if self.total_steps < 1:
            raise ConfigError("must be at least 1", 'total_steps')
        if self.eval_every < 1:
            raise ConfigError("must be at least 1", 'eval_every')
        if self.stop_rule not in STOP_RULES:
            raise ConfigError("must be one of {}".format(STOP_RULES), 'stop_rule')
        if self.stop_rule == 'tokens_to_target' and self.target_loss is None:
            raise ConfigError("required when stop_rule is 'tokens_to_target'",
                              'target_loss')
        if not self.clip_norm > 0:
            raise ConfigError("must be positive", 'clip_norm')
        if self.smoothing_window < 1:
            raise ConfigError("must be at least 1", 'smoothing_window')
        if not self.spike_ratio >= 1.0:
            raise ConfigError("must be at least 1", 'spike_ratio')
        if not self.divergence_factor > 1.0:
            raise ConfigError("must exceed 1", 'divergence_factor')
        try:
            dtype_for(self.precision)
        except RangeError as e:
            raise ConfigError(str(e), 'precision')
        self.muon.validate()
        self.adamw.validate()
        self.schedule.validate()
        self.task_spec().validate()
        self.build_schedule()
        return self

    @property
    def eta0(self):
        return self.muon.eta0 if self.optimizer == MUON else self.adamw.eta0

    def with_eta0(self, eta0):
        if self.optimizer == MUON:
            return replace(self, muon=replace(self.muon, eta0=eta0))
        return replace(self, adamw=replace(self.adamw, eta0=eta0))

    def with_weight_decay(self, weight_decay):
        if self.optimizer == MUON:
            return replace(self, muon=replace(self.muon, weight_decay=weight_decay))
        return replace(self, adamw=replace(self.adamw, weight_decay=weight_decay))

    def task_spec(self):
        return self.quadratic if self.task == 'quadratic' else self.mlp

    def build_task(self):
        seed = self.seed if self.data_seed is None else self.data_seed
        rng = Rng(derive_seed(seed, TASK_STREAM))
        return self.task_spec().build(rng, dtype_for(self.precision))

    def build_schedule(self):
        return self.schedule.build(self.total_steps, self.eta0)

    @property
    def label(self):
        if self.run_id:
            return self.run_id
        return "{}-B{}".format(self.optimizer, self.batch_size)


@dataclass
class EvalRow:
    step: int
    tokens_seen: int
    train_loss: float
    val_loss: float
    grad_global_norm: float
    update_rms: float
    eta_t: float
    wall_ms: float = 0.0


@dataclass
class RunSummary:
    """
    ``terminated`` means the run reached its target loss; ``diverged`` means
    it was stopped for a non-finite or exploding validation loss.
    """
    tokens_to_target: Optional[int] = None
    steps_to_target: Optional[int] = None
    terminated: bool = False
    diverged: bool = False
    loss_spike_count: int = 0
    initial_val_loss: float = float('nan')
    final_train_loss: float = float('nan')
    final_val_loss: float = float('nan')
    state_scalar_count: int = 0
    timings: Optional[dict] = None


@dataclass
class RunRecord:
    run_id: str
    optimizer: str
    batch_size: int
    rows: List[EvalRow] = field(default_factory=list)
    summary: RunSummary = field(default_factory=RunSummary)
    config: Optional[TrainConfig] = None


def smoothed_losses(rows, window):
    """
    Trailing mean of ``val_loss`` over up to ``window`` rows ending at each
    row.
    """
    losses = [r.val_loss for r in rows]
    out = []
    for i in range(len(losses)):
        chunk = losses[max(0, i - window + 1):i + 1]
        out.append(sum(chunk) / len(chunk))
    return out


def tokens_to_target(rows, target_loss, window=5):
    """
    The eval row at which the trailing mean of the validation loss first
    drops to ``target_loss`` or below, or None.

    :return tuple: ``(tokens_seen, step)`` or ``(None, None)``.
    """
    for row, smooth in zip(rows, smoothed_losses(rows, window)):
        if smooth <= target_loss:
            return row.tokens_seen, row.step
    return None, None


def loss_spike_count(record, spike_ratio=1.25):
    """
    Number of eval rows whose validation loss exceeds ``spike_ratio`` times
    the smallest validation loss of the rows before it.

    :param record: A :class:`RunRecord` or a list of :class:`EvalRow`.
    :raises RangeError: With fewer than two rows.
    """
    rows = record.rows if isinstance(record, RunRecord) else record
    if len(rows) < 2:
        raise RangeError("need at least 2 eval rows, got {}".format(len(rows)))
    count = 0
    best = rows[0].val_loss
    for row in rows[1:]:
        if row.val_loss > spike_ratio * best:
            count += 1
        best = min(best, row.val_loss)
    return count


def _update_rms(old, new):
    total = 0.0
    size = 0
    for name, w in old.items():
        delta = new[name] - w
        total += float(np.sum(np.square(delta, dtype=np.float64)))
        size += delta.size
    return math.sqrt(total / size)


def _diverged(val_loss, initial, factor):
    return not math.isfinite(val_loss) or val_loss > factor * initial


def train(config):
    """
    Run one training job.

    Each step draws a batch (with replacement), computes minibatch
    gradients, clips them jointly to ``clip_norm``, and applies the
    optimizer at ``schedule_eta(t)``. Every ``eval_every`` steps a row is
    recorded. A run whose validation loss goes non-finite or above
    ``divergence_factor`` times its initial value, or whose gradients stop
    being finite, ends early with ``summary.diverged`` set.

    :param TrainConfig config: The run.
    :return RunRecord: Rows and summary.
    """
    config.validate()
    dtype = dtype_for(config.precision)
    task = config.build_task()
    params = task.init_params(Rng(derive_seed(config.seed, INIT_STREAM)), dtype)
    batch_rng = Rng(derive_seed(config.seed, BATCH_STREAM))
    noise_rng = Rng(derive_seed(config.seed, NOISE_STREAM))
    opt = Optimizer(config.optimizer, params, config.muon, config.adamw)
    sched = config.build_schedule()
    timings = Timings() if config.benchmark else None

    record = RunRecord(run_id=config.label, optimizer=config.optimizer,
                       batch_size=config.batch_size, config=config)
    summary = record.summary
    summary.state_scalar_count = opt.state_scalar_count(params)
    summary.initial_val_loss = task.val_loss(params)
    names = list(params)

    with np.errstate(over='ignore', invalid='ignore'):
        for step in range(1, config.total_steps + 1):
            try:
                if timings is not None:
                    start = timings.now()
                batch = batch_rng.integers(0, task.num_train, config.batch_size)
                _, grads = task.loss_grad(params, batch, noise_rng)
                clipped = clip_global_norm([grads[n] for n in names], config.clip_norm)
                if timings is not None:
                    mid = timings.now()
                    timings.time_gradients += mid - start
                eta_t = schedule_eta(sched, step)
                new_params = opt.step(params, OrderedDict(zip(names, clipped)), eta_t)
                update_rms = _update_rms(params, new_params)
                params = new_params
                if timings is not None:
                    timings.time_optimizer += timings.now() - mid
                    timings.count_step()
            except NumericError as e:
                logger.warning("%s diverged at step %d: %s", record.run_id, step, e)
                summary.diverged = True
                break

            if step % config.eval_every:
                continue
            if timings is not None:
                start = timings.now()
            train_loss, full_grads = task.objective(params)
            val_loss = task.val_loss(params)
            row = EvalRow(step=step,
                          tokens_seen=step * config.batch_size,
                          train_loss=train_loss,
                          val_loss=val_loss,
                          grad_global_norm=global_norm(list(full_grads.values())),
                          update_rms=update_rms,
                          eta_t=eta_t)
            if timings is not None:
                timings.time_evaluating += timings.now() - start
                row.wall_ms = timings.elapsed_ms()
            record.rows.append(row)
            logger.debug("%s %s", record.run_id, row)
            if _diverged(val_loss, summary.initial_val_loss, config.divergence_factor):
                logger.warning("%s diverged at step %d: val_loss %r",
                               record.run_id, step, val_loss)
                summary.diverged = True
                break
            if config.stop_rule == 'tokens_to_target':
                tokens, _ = tokens_to_target(record.rows, config.target_loss,
                                             config.smoothing_window)
                if tokens is not None:
                    break

    _summarize(record, config)
    if timings is not None:
        summary.timings = timings.times
    logger.info("%s finished: %d rows, final val_loss %r, tokens_to_target %s",
                record.run_id, len(record.rows), summary.final_val_loss,
                summary.tokens_to_target)
    return record


def _summarize(record, config):
    summary = record.summary
    rows = record.rows
    if rows:
        summary.final_train_loss = rows[-1].train_loss
        summary.final_val_loss = rows[-1].val_loss
    if len(rows) >= 2:
        summary.loss_spike_count = loss_spike_count(rows, config.spike_ratio)
    if config.target_loss is not None:
        tokens, step = tokens_to_target(rows, config.target_loss,
                                        config.smoothing_window)
        summary.tokens_to_target = tokens
        summary.steps_to_target = step
        summary.terminated = tokens is not None


def rate_check(record, burn_in=0):
    """
    Least-squares slope of ``log((1/T) sum_{t<=T} ||grad||^2)`` against
    ``log T`` over the eval rows (after dropping ``burn_in`` of them).

    A rate of ``1/sqrt(T)`` shows up as a slope of -0.5; faster convergence
    gives steeper slopes.

    :raises RangeError: With fewer than 20 rows left.
    """
    rows = record.rows if isinstance(record, RunRecord) else record
    rows = rows[burn_in:]
    if len(rows) < 20:
        raise RangeError("need at least 20 eval rows, got {}".format(len(rows)))
    steps = np.array([r.step for r in rows], dtype=np.float64)
    sq = np.array([r.grad_global_norm for r in rows], dtype=np.float64) ** 2
    running = np.cumsum(sq) / np.arange(1, len(sq) + 1)
    tiny = np.finfo(np.float64).tiny
    slope, _ = np.polyfit(np.log(steps), np.log(np.maximum(running, tiny)), 1)
    return float(slope)


@dataclass
class RateCheckSpec:
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    burn_in: int = 0
    threshold: float = -0.4

    def validate(self):
        self.seeds = list(self.seeds)
        if not self.seeds:
            raise ConfigError("must be nonempty", 'rate_check.seeds')
        if self.burn_in < 0:
            raise ConfigError("must be nonnegative", 'rate_check.burn_in')
        return self


@dataclass
class RateCheckResult:
    slopes: List[float]
    threshold: float
    records: List[RunRecord] = field(default_factory=list)

    @property
    def mean_slope(self):
        return float(np.mean(self.slopes))

    @property
    def passed(self):
        return self.mean_slope <= self.threshold


def rate_check_config(config, seed):
    """
    ``config`` adjusted for the rate check: ``eta0 / sqrt(t)`` schedule, one
    eval row per step, fixed length, no decoupled weight decay.
    """
    config = config.with_weight_decay(0.0)
    return replace(config, schedule=replace(config.schedule, kind='inverse_sqrt'),
                   eval_every=1, stop_rule='fixed_steps', seed=seed,
                   run_id="{}-rate-s{}".format(config.optimizer, seed))


def run_rate_check(config, spec=None):
    """
    Train ``config`` once per seed under :func:`rate_check_config` and
    average the fitted slopes.

    :return RateCheckResult: The slopes and whether their mean is at most
        ``spec.threshold``.
    """
    spec = (spec or RateCheckSpec()).validate()
    result = RateCheckResult(slopes=[], threshold=spec.threshold)
    for seed in spec.seeds:
        record = train(rate_check_config(config, seed))
        if record.summary.diverged:
            raise NumericError("rate check run {} diverged".format(record.run_id))
        result.records.append(record)
        result.slopes.append(rate_check(record, spec.burn_in))
    logger.info("rate check: slopes %s, mean %.3f (threshold %.3f)",
                ["%.3f" % s for s in result.slopes], result.mean_slope,
                spec.threshold)
    return result
