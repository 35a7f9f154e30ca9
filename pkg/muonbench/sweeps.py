"""
Experiments made of many training runs: the batch-size sweep behind the
token ratio ``R_L(B) = T_adamw(B) / T_muon(B)``, the component ablation,
and the telescoping width sweep.

Cells of an experiment are independent and may run on a thread pool (see
:func:`resolve_workers`); results are collected in submission order, so the
outcome does not depend on the number of workers.
"""
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ConfigError, RangeError
from .harness import RunRecord, TrainConfig, train
from .linalg import derive_seed
from .msign import TAYLOR
from .optim import ADAMW, MUON

logger = logging.getLogger(__name__)

__all__ = [
    'ABLATION_AXES',
    'AblationCell',
    'AblationSpec',
    'AblationTable',
    'MonotonicityReport',
    'SweepResult',
    'SweepSpec',
    'TelescopeResult',
    'TelescopeSpec',
    'TelescopeStage',
    'ablate',
    'batch_sweep',
    'ratio_monotonicity',
    'resolve_workers',
    'telescope_sweep',
    'token_ratio',
]

WORKERS_ENV = 'MUONBENCH_WORKERS'

# the eleven default cells, in table order
ABLATION_AXES = (
    'momentum_only',
    'k3',
    'k5',
    'k10',
    'taylor',
    'no_decay',
    'no_rms',
    'batch_quarter',
    'batch_base',
    'batch_quadruple',
    'adamw',
)
EXTRA_AXES = ('dynamic_rms',)


def resolve_workers(workers=None):
    """
    Worker threads for cell-level parallelism: ``workers`` if given, else
    the ``MUONBENCH_WORKERS`` environment variable, else 1.
    """
    if workers is None:
        value = os.environ.get(WORKERS_ENV, '').strip()
        if not value:
            return 1
        try:
            workers = int(value)
        except ValueError:
            raise ConfigError("must be an integer, got {!r}".format(value),
                              WORKERS_ENV)
    if workers < 1:
        raise ConfigError("must be at least 1, got {}".format(workers), WORKERS_ENV)
    return workers


def run_cells(configs, workers=None):
    """
    Train every config and return the records in the same order.
    """
    workers = resolve_workers(workers)
    if workers == 1 or len(configs) < 2:
        return [train(c) for c in configs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(train, configs))


def token_ratio(t_adamw, t_muon):
    """
    ``t_adamw / t_muon``, or None unless both token counts are present.
    """
    if t_adamw is None or t_muon is None:
        return None
    if t_muon <= 0 or t_adamw <= 0:
        raise RangeError("token counts must be positive, got {} and {}".format(
                         t_adamw, t_muon))
    return t_adamw / t_muon


@dataclass
class MonotonicityReport:
    """
    Whether the present ratios are nondecreasing in batch size.
    ``decreases`` lists consecutive ``(B_i, B_j)`` pairs with
    ``R(B_j) < R(B_i)``.
    """
    nondecreasing: bool
    considered: List[int]
    decreases: List[Tuple[int, int]] = field(default_factory=list)


def ratio_monotonicity(ratios):
    """
    :param ratios: ``(batch_size, ratio)`` pairs; pairs whose ratio is None
        are skipped.
    :return MonotonicityReport:
    """
    present = sorted((b, r) for b, r in ratios if r is not None)
    report = MonotonicityReport(nondecreasing=True, considered=[b for b, _ in present])
    for (b0, r0), (b1, r1) in zip(present, present[1:]):
        if r1 < r0:
            report.decreases.append((b0, b1))
    report.nondecreasing = not report.decreases
    return report


@dataclass
class SweepSpec:
    batch_grid: List[int] = field(default_factory=lambda: [32, 128, 512, 2048])
    optimizers: List[str] = field(default_factory=lambda: [ADAMW, MUON])
    lr_multipliers: List[float] = field(
        default_factory=lambda: [0.25, 0.5, 1.0, 2.0, 4.0])

    def validate(self):
        self.batch_grid = [int(b) for b in self.batch_grid]
        if not self.batch_grid:
            raise ConfigError("must be nonempty", 'sweep.batch_grid')
        for i, b in enumerate(self.batch_grid):
            if b < 1:
                raise ConfigError("must be at least 1", 'sweep.batch_grid[{}]'.format(i))
        if len(set(self.batch_grid)) != len(self.batch_grid):
            raise ConfigError("has duplicate batch sizes", 'sweep.batch_grid')
        self.optimizers = list(self.optimizers)
        for i, o in enumerate(self.optimizers):
            if o not in (MUON, ADAMW):
                raise ConfigError("must be 'muon' or 'adamw', got {!r}".format(o),
                                  'sweep.optimizers[{}]'.format(i))
        if not self.lr_multipliers:
            raise ConfigError("must be nonempty", 'sweep.lr_multipliers')
        for i, m in enumerate(self.lr_multipliers):
            if not m > 0:
                raise ConfigError("must be positive",
                                  'sweep.lr_multipliers[{}]'.format(i))
        return self


@dataclass
class SweepResult:
    """
    Best run per ``(optimizer, batch_size)`` after learning-rate re-tuning,
    and the token ratio per batch size (None unless both optimizers reached
    the target).
    """
    batch_grid: List[int]
    optimizers: List[str]
    target_loss: Optional[float]
    records: Dict[Tuple[str, int], RunRecord] = field(default_factory=dict)
    ratios: Dict[int, Optional[float]] = field(default_factory=dict)
    monotonicity: Optional[MonotonicityReport] = None
    provenance: List[dict] = field(default_factory=list)

    def tokens(self, optimizer, batch_size):
        record = self.records.get((optimizer, batch_size))
        return None if record is None else record.summary.tokens_to_target


def _final_loss_key(record):
    loss = record.summary.final_val_loss
    if record.summary.diverged or not math.isfinite(loss):
        return math.inf
    return loss


def batch_sweep(base, spec=None, workers=None):
    """
    Run every ``(batch size, optimizer, learning-rate multiplier)`` cell,
    keep the best learning rate per ``(batch size, optimizer)`` by final
    validation loss, and compute ``R_L(B)``.

    Cells at batch-size index ``i`` share the seed ``derive_seed(seed, i)``,
    and all cells share the dataset of the base seed. Cells run for the full
    ``total_steps`` so that final losses are comparable.

    :param TrainConfig base: Shared configuration; ``target_loss`` required.
    :param SweepSpec spec: Grids.
    :return SweepResult:
    """
    spec = (spec or SweepSpec()).validate()
    if base.target_loss is None:
        raise ConfigError("required for a batch sweep", 'target_loss')
    base.validate()

    cells = []
    for i, batch_size in enumerate(spec.batch_grid):
        seed = derive_seed(base.seed, i)
        for optimizer in spec.optimizers:
            config = replace(base, optimizer=optimizer)
            for j, mult in enumerate(spec.lr_multipliers):
                cell = config.with_eta0(config.eta0 * mult)
                cell = replace(cell, batch_size=batch_size, seed=seed,
                               data_seed=base.seed, stop_rule='fixed_steps',
                               run_id="{}-B{}-lr{}".format(optimizer, batch_size, j))
                cells.append(((optimizer, batch_size), cell))

    records = run_cells([c for _, c in cells], workers)

    result = SweepResult(batch_grid=list(spec.batch_grid),
                         optimizers=list(spec.optimizers),
                         target_loss=base.target_loss)
    for (key, cell), record in zip(cells, records):
        result.provenance.append({'run_id': record.run_id,
                                  'optimizer': cell.optimizer,
                                  'batch_size': cell.batch_size,
                                  'eta0': cell.eta0,
                                  'seed': cell.seed})
        best = result.records.get(key)
        if best is None or _final_loss_key(record) < _final_loss_key(best):
            result.records[key] = record
    for (optimizer, batch_size), record in sorted(result.records.items()):
        record.run_id = "{}-B{}".format(optimizer, batch_size)
        if not record.summary.terminated:
            logger.warning("%s did not reach target loss %r", record.run_id,
                           base.target_loss)

    for batch_size in spec.batch_grid:
        result.ratios[batch_size] = token_ratio(result.tokens(ADAMW, batch_size),
                                                result.tokens(MUON, batch_size))
    result.monotonicity = ratio_monotonicity(sorted(result.ratios.items()))
    logger.info("token ratios %s; nondecreasing in B: %s", result.ratios,
                result.monotonicity.nondecreasing)
    return result


@dataclass
class AblationSpec:
    axes: List[str] = field(default_factory=lambda: list(ABLATION_AXES))

    def validate(self):
        self.axes = list(self.axes)
        if not self.axes:
            raise ConfigError("must be nonempty", 'ablation.axes')
        for i, axis in enumerate(self.axes):
            if axis not in ABLATION_AXES + EXTRA_AXES:
                raise ConfigError("unknown ablation axis {!r}".format(axis),
                                  'ablation.axes[{}]'.format(i))
        return self


@dataclass
class AblationCell:
    name: str
    config: TrainConfig
    record: Optional[RunRecord] = None


@dataclass
class AblationTable:
    cells: List[AblationCell] = field(default_factory=list)

    def cell(self, name):
        for c in self.cells:
            if c.name == name:
                return c
        raise KeyError(name)


def ablation_config(base, axis):
    """
    The configuration of one ablation cell, relative to a full-Muon base.
    """
    muon = base.muon
    config = replace(base, optimizer=MUON)
    if axis == 'momentum_only':
        config = replace(config, muon=replace(muon, orthogonalizer='none'))
    elif axis in ('k3', 'k5', 'k10'):
        config = replace(config, muon=replace(muon, k_iters=int(axis[1:])))
    elif axis == 'taylor':
        config = replace(config, muon=replace(muon, coeffs=TAYLOR))
    elif axis == 'no_decay':
        config = replace(config, muon=replace(muon, weight_decay=0.0))
    elif axis == 'no_rms':
        config = replace(config, muon=replace(muon, rms_matching=False))
    elif axis == 'dynamic_rms':
        config = replace(config, muon=replace(muon, rms_mode='dynamic'))
    elif axis == 'batch_quarter':
        config = replace(config, batch_size=max(1, base.batch_size // 4))
    elif axis == 'batch_quadruple':
        config = replace(config, batch_size=4 * base.batch_size)
    elif axis == 'adamw':
        config = replace(base, optimizer=ADAMW)
    elif axis not in ('batch_base',):
        raise ConfigError("unknown ablation axis {!r}".format(axis), 'ablation.axes')
    return replace(config, run_id=axis)


def ablate(base, spec=None, workers=None):
    """
    One run per ablation axis, all on the base seed. Diverging cells are
    recorded as such. Axes that give the same configuration (``k5`` and
    ``batch_base`` on a K = 5 base) share one run.

    Steps-to-target is only filled in when ``base.target_loss`` is set.

    :return AblationTable:
    """
    spec = (spec or AblationSpec()).validate()
    base.validate()
    if base.target_loss is None:
        logger.warning("ablation without target_loss: no steps-to-target")
    cells = [AblationCell(axis, ablation_config(base, axis)) for axis in spec.axes]
    distinct = []
    owners = []
    for cell in cells:
        key = replace(cell.config, run_id=None)
        if key not in distinct:
            distinct.append(key)
            owners.append(cell)
    records = run_cells([c.config for c in owners], workers)
    for cell in cells:
        i = distinct.index(replace(cell.config, run_id=None))
        record = records[i]
        if owners[i] is not cell:
            record = replace(record, run_id=cell.name, config=cell.config)
        cell.record = record
        if record.summary.diverged:
            logger.warning("ablation cell %s diverged", cell.name)
    logger.info("ablation finished: %d cells", len(cells))
    return AblationTable(cells)


@dataclass
class TelescopeSpec:
    """
    ``eta_grid`` is searched in log space and ``lambda_grid`` in linear
    space; at each width doubling both are recentred on the previous best
    and their extent shrinks by ``4 ** (-1 / 2)``.
    """
    start_width: int = 64
    end_width: int = 256
    eta_grid: List[float] = field(
        default_factory=lambda: [0.005, 0.01, 0.02, 0.04, 0.08])
    lambda_grid: List[float] = field(
        default_factory=lambda: [0.0, 0.05, 0.1, 0.15, 0.2])

    def validate(self):
        if self.start_width < 1:
            raise ConfigError("must be at least 1", 'telescope.start_width')
        ratio = self.end_width / self.start_width
        doublings = int(round(math.log2(ratio))) if ratio > 0 else 0
        if doublings < 1 or self.start_width * 2 ** doublings != self.end_width:
            raise ConfigError("must be start_width * 2^j with j >= 1, got {}".format(
                              self.end_width), 'telescope.end_width')
        if not self.eta_grid:
            raise ConfigError("must be nonempty", 'telescope.eta_grid')
        if min(self.eta_grid) <= 0:
            raise ConfigError("must be positive", 'telescope.eta_grid')
        if not self.lambda_grid:
            raise ConfigError("must be nonempty", 'telescope.lambda_grid')
        if min(self.lambda_grid) < 0:
            raise ConfigError("must be nonnegative", 'telescope.lambda_grid')
        return self

    @property
    def widths(self):
        widths = [self.start_width]
        while widths[-1] < self.end_width:
            widths.append(2 * widths[-1])
        return widths


@dataclass
class TelescopeStage:
    width: int
    eta_grid: List[float]
    lambda_grid: List[float]
    eta_extent: float
    lambda_extent: float
    best_eta: float = float('nan')
    best_lambda: float = float('nan')
    best_loss: float = float('nan')
    cells: int = 0
    transferred: Optional[bool] = None
    best_record: Optional[RunRecord] = None

    @property
    def eta_spacing(self):
        """
        Distance between neighbouring learning rates, in log2 units.
        """
        if len(self.eta_grid) < 2:
            return 0.0
        return self.eta_extent / (len(self.eta_grid) - 1)


@dataclass
class TelescopeResult:
    stages: List[TelescopeStage] = field(default_factory=list)

    @property
    def path(self):
        return [(s.width, s.best_eta, s.best_lambda) for s in self.stages]


def _shrunk(center, extent, count, log_space):
    """
    ``count`` points spaced ``extent / (count - 1)`` apart, one of them
    exactly ``center``. Log-space grids are spaced in log2 units. Linear
    grids are shifted up where they would go below zero.
    """
    if count == 1 or extent == 0.0:
        return [center]
    spacing = extent / (count - 1)
    first = -((count - 1) // 2)
    if log_space:
        return [float(center * 2.0 ** (k * spacing))
                for k in range(first, first + count)]
    first = max(first, -int(math.floor(center / spacing + 1e-9)))
    return [max(0.0, float(center + k * spacing)) for k in range(first, first + count)]


def telescope_sweep(base, spec=None, workers=None):
    """
    Grid-search ``(eta0, weight_decay)`` on the MLP task at ``start_width``,
    then repeatedly double the hidden width and search a grid recentred on
    the previous best with half the extent, until ``end_width``.

    Each stage also records whether its best learning rate lies within one
    grid cell of the previous stage's best.

    :raises ConfigError: On bad widths, an empty grid, a non-MLP base, or
        a stage in which every cell diverged.
    :return TelescopeResult:
    """
    spec = (spec or TelescopeSpec()).validate()
    if base.task != 'mlp':
        raise ConfigError("the telescoping sweep scales the MLP width", 'task')
    base.validate()

    eta_grid = sorted(set(float(e) for e in spec.eta_grid))
    lambda_grid = sorted(set(float(l) for l in spec.lambda_grid))
    eta_extent = math.log2(eta_grid[-1] / eta_grid[0])
    lambda_extent = lambda_grid[-1] - lambda_grid[0]
    result = TelescopeResult()
    previous = None
    for width in spec.widths:
        if previous is not None:
            eta_extent *= 0.5
            lambda_extent *= 0.5
            eta_grid = _shrunk(previous.best_eta, eta_extent, len(eta_grid), True)
            lambda_grid = _shrunk(previous.best_lambda, lambda_extent,
                                  len(lambda_grid), False)
        stage = TelescopeStage(width, list(eta_grid), list(lambda_grid),
                               eta_extent, lambda_extent)
        sized = replace(base, mlp=base.mlp.with_width(width))
        configs = []
        for i, eta in enumerate(stage.eta_grid):
            for j, lam in enumerate(stage.lambda_grid):
                cell = sized.with_eta0(eta).with_weight_decay(lam)
                configs.append(replace(cell, run_id="w{}-eta{}-lam{}".format(
                                       width, i, j)))
        records = run_cells(configs, workers)
        stage.cells = len(records)
        best_key = math.inf
        for config, record in zip(configs, records):
            key = _final_loss_key(record)
            if key < best_key:
                best_key = key
                stage.best_loss = record.summary.final_val_loss
                stage.best_eta = config.eta0
                stage.best_lambda = (config.muon.weight_decay
                                     if config.optimizer == MUON
                                     else config.adamw.weight_decay)
                stage.best_record = record
        if stage.best_record is None:
            raise ConfigError("every cell diverged at width {}".format(width),
                              'telescope')
        if previous is not None:
            shift = abs(math.log2(stage.best_eta / previous.best_eta))
            stage.transferred = shift <= stage.eta_spacing + 1e-9
        logger.info("telescope width %d: best eta %r, lambda %r, loss %r",
                    width, stage.best_eta, stage.best_lambda, stage.best_loss)
        result.stages.append(stage)
        previous = stage
    return result
