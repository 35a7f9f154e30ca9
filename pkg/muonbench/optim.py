"""
Muon and AdamW as per-parameter state machines, plus the pieces a training
loop needs around them: the learning-rate schedule, global-norm clipping,
routing of parameters between the two optimizers, and a Shampoo oracle.

Parameters follow the ``W: fan_in x fan_out`` convention, so the second
dimension of a weight is its fan-out.
"""
import math
from collections import OrderedDict
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DegenerateInputError, RangeError, ShapeError
from .linalg import (
    as_matrix,
    check_finite,
    frobenius_norm,
    inverse_root,
    svd,
)
from .msign import OPTIMIZED, NsCoefficients, coefficients, msign_exact, newton_schulz

__all__ = [
    'MUON',
    'ADAMW',
    'AdamWHyper',
    'AdamWState',
    'MuonHyper',
    'MuonState',
    'Optimizer',
    'Schedule',
    'adamw_step',
    'clip_global_norm',
    'global_norm',
    'muon_direction',
    'muon_step',
    'orthogonalize',
    'rms_scale',
    'route_parameter',
    'schedule_eta',
    'shampoo_direction',
    'shampoo_step_oracle',
    'state_scalar_count',
    'with_overrides',
]

MUON = 'muon'
ADAMW = 'adamw'

ORTHOGONALIZERS = ('newton_schulz', 'exact', 'none')
RMS_MODES = ('fan_out', 'max_dim', 'dynamic')

# below this Frobenius norm the momentum gives a zero update direction
ZERO_MOMENTUM = 1e-12


@dataclass
class MuonHyper:
    """
    Muon hyperparameters.

    ``rms_mode`` picks the ``n`` in ``s = rms_factor * sqrt(n)``: the
    parameter's fan-out, its larger dimension, or ``'dynamic'``, which
    rescales every step so the update RMS is exactly ``rms_factor``.
    ``orthogonalizer`` is ``'newton_schulz'``, ``'exact'`` (SVD) or
    ``'none'`` (Frobenius-normalized momentum).
    """
    eta0: float = 0.02
    weight_decay: float = 0.1
    beta: float = 0.9
    k_iters: int = 5
    coeffs: NsCoefficients = OPTIMIZED
    rms_factor: float = 0.2
    rms_matching: bool = True
    rms_mode: str = 'fan_out'
    orthogonalizer: str = 'newton_schulz'

    def validate(self):
        if not self.eta0 > 0:
            raise ConfigError("must be positive", 'muon.eta0')
        if self.weight_decay < 0:
            raise ConfigError("must be nonnegative", 'muon.weight_decay')
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError("must lie in [0, 1)", 'muon.beta')
        if self.k_iters < 1:
            raise ConfigError("must be at least 1", 'muon.k_iters')
        if self.rms_factor < 0:
            raise ConfigError("must be nonnegative", 'muon.rms_factor')
        if self.rms_mode not in RMS_MODES:
            raise ConfigError("must be one of {}".format(RMS_MODES), 'muon.rms_mode')
        if self.orthogonalizer not in ORTHOGONALIZERS:
            raise ConfigError("must be one of {}".format(ORTHOGONALIZERS),
                              'muon.orthogonalizer')
        self.coeffs = coefficients(self.coeffs)
        return self


@dataclass
class AdamWHyper:
    eta0: float = 0.002
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self):
        if not self.eta0 > 0:
            raise ConfigError("must be positive", 'adamw.eta0')
        if self.weight_decay < 0:
            raise ConfigError("must be nonnegative", 'adamw.weight_decay')
        for name in ('beta1', 'beta2'):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError("must lie in [0, 1)", 'adamw.' + name)
        if not self.eps > 0:
            raise ConfigError("must be positive", 'adamw.eps')
        return self


class MuonState(object):
    '''
    Muon keeps exactly one auxiliary matrix per parameter: its momentum.
    '''

    def __init__(self, momentum):
        self.momentum = momentum

    @classmethod
    def zeros_like(cls, w):
        return cls(np.zeros_like(w))

    @property
    def num_scalars(self):
        return self.momentum.size


class AdamWState(object):
    '''
    AdamW keeps two auxiliary matrices per parameter, the first and second
    moment estimates, plus a step counter.
    '''

    def __init__(self, m, v, step_count=0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = m
        self.v = v
        self.step_count = step_count
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    @classmethod
    def zeros_like(cls, w, hyper=None):
        hyper = hyper or AdamWHyper()
        return cls(np.zeros_like(w), np.zeros_like(w), 0,
                   hyper.beta1, hyper.beta2, hyper.eps)

    @property
    def num_scalars(self):
        return self.m.size + self.v.size


def _check_step_inputs(w, g, aux, name):
    w = np.asarray(w)
    g = np.asarray(g)
    if w.shape != g.shape or w.shape != aux.shape:
        raise ShapeError("{}: parameter {}, gradient {} and state {} "
                         "shapes differ".format(name, w.shape, g.shape, aux.shape))
    check_finite(g, "gradient of " + name)
    return w, g


def orthogonalize(momentum, hyper):
    """
    The unscaled Muon direction ``U`` for a momentum matrix: zero below
    ``||M||_F < 1e-12``, otherwise msign (Newton-Schulz or exact) or, with
    ``orthogonalizer='none'``, ``sqrt(min(m, n)) * M / ||M||_F``.
    """
    norm = frobenius_norm(momentum)
    if norm < ZERO_MOMENTUM:
        return np.zeros_like(momentum)
    if hyper.orthogonalizer == 'newton_schulz':
        return newton_schulz(momentum, hyper.coeffs, hyper.k_iters)
    if hyper.orthogonalizer == 'exact':
        return msign_exact(momentum)
    return momentum * (math.sqrt(min(momentum.shape)) / norm)


def rms_scale(u, hyper):
    """
    The RMS-matching factor ``s`` for a direction ``u``.
    """
    if not hyper.rms_matching:
        return 1.0
    rows, cols = u.shape
    if hyper.rms_mode == 'fan_out':
        return hyper.rms_factor * math.sqrt(cols)
    if hyper.rms_mode == 'max_dim':
        return hyper.rms_factor * math.sqrt(max(rows, cols))
    norm = frobenius_norm(u)
    if norm == 0.0:
        return 0.0
    return hyper.rms_factor * math.sqrt(rows * cols) / norm


def muon_direction(momentum, hyper):
    """
    The scaled direction ``s * U`` applied (times ``eta_t``) by a Muon step.
    """
    u = orthogonalize(momentum, hyper)
    return rms_scale(u, hyper) * u


def muon_step(w, g, state, hyper, eta_t, name='parameter'):
    """
    One Muon step for one matrix parameter.

    ``M' = beta M + (1 - beta) G``; ``U = msign(M')``;
    ``W' = W - eta_t (s U + lambda W)``.

    :param w: The parameter.
    :param g: Its gradient, same shape and finite.
    :param MuonState state: Its momentum; not modified.
    :param MuonHyper hyper: Hyperparameters.
    :param float eta_t: The learning rate for this step.
    :param str name: Parameter name for error messages.
    :return tuple: ``(w_new, new_state)``.
    """
    w, g = _check_step_inputs(w, g, state.momentum, name)
    beta = hyper.beta
    momentum = beta * state.momentum + (1.0 - beta) * g
    u = orthogonalize(momentum, hyper)
    s = rms_scale(u, hyper)
    eta_t = float(eta_t)
    w_new = (1.0 - eta_t * hyper.weight_decay) * w - (eta_t * s) * u
    return w_new.astype(w.dtype, copy=False), MuonState(momentum)


def adamw_step(w, g, state, eta_t, weight_decay):
    """
    One bias-corrected AdamW step with decoupled weight decay:
    ``W' = (1 - eta_t lambda) W - eta_t m_hat / (sqrt(v_hat) + eps)``.

    Works for vectors as well as matrices.

    :return tuple: ``(w_new, new_state)``.
    """
    w, g = _check_step_inputs(w, g, state.m, 'parameter')
    b1, b2 = state.beta1, state.beta2
    step = state.step_count + 1
    m = b1 * state.m + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * (g * g)
    m_hat = m / (1.0 - b1 ** step)
    v_hat = v / (1.0 - b2 ** step)
    eta_t = float(eta_t)
    w_new = (1.0 - eta_t * weight_decay) * w - eta_t * (m_hat / (np.sqrt(v_hat) + state.eps))
    new_state = AdamWState(m, v, step, b1, b2, state.eps)
    return w_new.astype(w.dtype, copy=False), new_state


def shampoo_direction(g):
    """
    ``(G G^T)^{-1/4} G (G^T G)^{-1/4}``, with both roots taken on the range
    of the Gram matrices so full-rank rectangular gradients are allowed.

    :raises DegenerateInputError: If ``g`` is not full rank.
    """
    g = as_matrix(g, dtype=np.float64)
    rank = svd(g).rank
    if rank < min(g.shape):
        raise DegenerateInputError("gradient has rank {} < {}".format(
                                   rank, min(g.shape)))
    # rounding leaves the null eigenvalues of the larger Gram near
    # eps * sigma_max^2, so they are cut at sqrt(eps) instead
    gram_tol = math.sqrt(np.finfo(np.float64).eps)
    left = inverse_root(g @ g.T, 4, pseudo=True, rank_tol=gram_tol)
    right = inverse_root(g.T @ g, 4, pseudo=True, rank_tol=gram_tol)
    return left @ g @ right


def shampoo_step_oracle(w, g, eta_t):
    """
    ``W - eta_t (G G^T)^{-1/4} G (G^T G)^{-1/4}``; for testing only.
    """
    w = as_matrix(w)
    return w - float(eta_t) * shampoo_direction(g)


@dataclass
class Schedule:
    """
    Learning-rate schedule. ``kind`` is ``'cosine'`` (linear warmup to
    ``eta0`` then cosine decay to ``eta_min``) or ``'inverse_sqrt'``
    (``eta0 / sqrt(t)``).
    """
    total_steps: int
    eta0: float
    warmup_fraction: float = 0.01
    eta_min: float = 0.0
    kind: str = 'cosine'

    def validate(self):
        if self.total_steps < 1:
            raise ConfigError("must be at least 1", 'total_steps')
        if not self.eta0 > 0:
            raise ConfigError("must be positive", 'eta0')
        if self.kind not in ('cosine', 'inverse_sqrt'):
            raise ConfigError("must be 'cosine' or 'inverse_sqrt'", 'schedule.kind')
        if self.kind == 'cosine':
            if not 0.005 <= self.warmup_fraction <= 0.02:
                raise ConfigError("must lie in [0.005, 0.02]",
                                  'schedule.warmup_fraction')
            if not 0.0 <= self.eta_min <= 0.01 * self.eta0:
                raise ConfigError("must lie in [0, 0.01 * eta0]", 'schedule.eta_min')
        return self

    @property
    def warmup_steps(self):
        if self.kind != 'cosine':
            return 0
        return max(1, int(round(self.warmup_fraction * self.total_steps)))


def schedule_eta(sched, step):
    """
    Learning rate at ``step`` (``0 <= step <= total_steps``).
    """
    if not 0 <= step <= sched.total_steps:
        raise RangeError("step {} outside [0, {}]".format(step, sched.total_steps))
    if sched.kind == 'inverse_sqrt':
        return sched.eta0 / math.sqrt(max(step, 1))
    warmup = sched.warmup_steps
    if step <= warmup:
        return sched.eta0 * step / warmup
    span = sched.total_steps - warmup
    progress = (step - warmup) / span
    return sched.eta_min + 0.5 * (sched.eta0 - sched.eta_min) * (1.0 + math.cos(math.pi * progress))


def global_norm(grads):
    """
    L2 norm over all gradients jointly, accumulated in list order.
    """
    total = 0.0
    for g in grads:
        total += float(np.sum(np.square(g, dtype=np.float64)))
    return math.sqrt(total)


def clip_global_norm(grads, max_norm):
    """
    Rescale all gradients by ``max_norm / global_norm`` if their global norm
    exceeds ``max_norm``; otherwise return them unchanged.
    """
    if not max_norm > 0:
        raise RangeError("max_norm must be positive, got {}".format(max_norm))
    for g in grads:
        check_finite(g, "gradient")
    norm = global_norm(grads)
    if norm <= max_norm:
        return list(grads)
    scale = max_norm / norm
    return [(g * scale).astype(g.dtype, copy=False) for g in grads]


def route_parameter(shape):
    """
    ``'muon'`` for matrices with both dimensions at least 2, ``'adamw'`` for
    vectors and single-row or single-column matrices.

    :param shape: A shape tuple or a vector length.
    """
    if isinstance(shape, int):
        return ADAMW
    shape = tuple(shape)
    if len(shape) == 2 and min(shape) >= 2:
        return MUON
    return ADAMW


def state_scalar_count(shapes, optimizer):
    """
    Auxiliary scalars an optimizer holds for the matrix-routed parameters
    among ``shapes``: one per entry for Muon, two for AdamW.
    """
    per_entry = {MUON: 1, ADAMW: 2}[optimizer]
    total = 0
    for shape in shapes:
        if route_parameter(shape) == MUON:
            total += per_entry * int(np.prod(shape))
    return total


class Optimizer(object):
    '''
    Owns the per-parameter states for one training run.

    With ``kind='muon'``, matrix parameters (see :func:`route_parameter`)
    are stepped by Muon and all others by AdamW, both at the scheduled
    learning rate; with ``kind='adamw'`` everything is stepped by AdamW.

    To use it, construct with the initial parameters and call :meth:`step`
    with the (clipped) gradients once per training step.
    '''

    def __init__(self, kind, params, muon=None, adamw=None):
        """
        :param str kind: ``'muon'`` or ``'adamw'``.
        :param OrderedDict params: Name to array, the initial parameters.
        :param MuonHyper muon: Muon hyperparameters.
        :param AdamWHyper adamw: AdamW hyperparameters.
        """
        if kind not in (MUON, ADAMW):
            raise ConfigError("must be 'muon' or 'adamw', got {!r}".format(kind),
                              'optimizer')
        self.kind = kind
        self.muon = (muon or MuonHyper()).validate()
        self.adamw = (adamw or AdamWHyper()).validate()
        self.routes = OrderedDict()
        self.states = OrderedDict()
        for name, w in params.items():
            route = route_parameter(w.shape) if kind == MUON else ADAMW
            self.routes[name] = route
            if route == MUON:
                self.states[name] = MuonState.zeros_like(w)
            else:
                self.states[name] = AdamWState.zeros_like(w, self.adamw)

    @property
    def eta0(self):
        return self.muon.eta0 if self.kind == MUON else self.adamw.eta0

    def state_scalar_count(self, params):
        return state_scalar_count([w.shape for w in params.values()], self.kind)

    def auxiliary_scalars(self):
        """
        Auxiliary scalars actually held, over all parameters.
        """
        return sum(s.num_scalars for s in self.states.values())

    def step(self, params, grads, eta_t):
        """
        Apply one step to every parameter, in parameter order.

        :param OrderedDict params: Current parameters.
        :param OrderedDict grads: Gradients with the same keys.
        :param float eta_t: Scheduled learning rate.
        :return OrderedDict: The new parameters.
        """
        new_params = OrderedDict()
        for name, w in params.items():
            g = grads[name]
            state = self.states[name]
            if self.routes[name] == MUON:
                w_new, state = muon_step(w, g, state, self.muon, eta_t, name=name)
            else:
                w_new, state = adamw_step(w, g, state, eta_t, self.adamw.weight_decay)
            self.states[name] = state
            new_params[name] = w_new
        return new_params


def with_overrides(hyper, **changes):
    """
    A validated copy of a hyperparameter dataclass with ``changes`` applied.
    """
    return replace(hyper, **changes).validate()
