"""
Small differentiable tasks with analytic gradients: a regularized linear
least-squares problem with a closed-form optimum, and a multilayer
perceptron classifying a Gaussian mixture.

At this scale a "token" is one sample: ``tokens_seen = step * batch_size``.

Both tasks expose the same interface to the training loop:

    - ``num_train``: number of training samples (batch indices are drawn
      from ``range(num_train)``, with replacement)
    - ``init_params(rng, dtype)``: an ``OrderedDict`` name -> array
    - ``loss_grad(params, batch, noise_rng=None)``: minibatch loss and
      gradients
    - ``objective(params)``: loss and gradients of the full training objective
    - ``val_loss(params)``: the validation loss
"""
from collections import OrderedDict
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import ConfigError, RangeError, ShapeError
from .linalg import Rng, as_matrix, svd

__all__ = [
    'GradCheckReport',
    'MlpSpec',
    'MlpTask',
    'QuadraticSpec',
    'QuadraticTask',
    'grad_check',
    'mlp_loss_grad',
    'quadratic_loss_grad',
]

GRADIENT_MODES = ('minibatch', 'exact')
ACTIVATIONS = ('tanh', 'relu')


@dataclass
class QuadraticSpec:
    """
    Parameters of a random least-squares instance
    ``L(W) = 1/2 ||A W - B||_F^2 + lambda_reg/2 ||W||_F^2``.

    ``A`` is ``rows x fan_in`` with entries ``N(0, 1/rows)``, and
    ``B = A W_true + label_noise * N(0, 1/rows)`` with ``W_true`` entries
    ``N(0, 1/fan_in)``. ``gradient_mode='minibatch'`` estimates the gradient
    from the sampled rows; ``'exact'`` ignores the batch. ``gradient_noise``
    adds ``N(0, gradient_noise^2)`` to every gradient entry during training.
    """
    rows: int = 64
    fan_in: int = 16
    fan_out: int = 8
    lambda_reg: float = 0.01
    label_noise: float = 0.1
    gradient_mode: str = 'minibatch'
    gradient_noise: float = 0.0

    def validate(self):
        for name in ('rows', 'fan_in', 'fan_out'):
            if getattr(self, name) < 1:
                raise ConfigError("must be at least 1", 'quadratic.' + name)
        for name in ('lambda_reg', 'label_noise', 'gradient_noise'):
            if getattr(self, name) < 0:
                raise ConfigError("must be nonnegative", 'quadratic.' + name)
        if self.gradient_mode not in GRADIENT_MODES:
            raise ConfigError("must be one of {}".format(GRADIENT_MODES),
                              'quadratic.gradient_mode')
        return self

    def build(self, rng, dtype=np.float64):
        self.validate()
        a = rng.normal((self.rows, self.fan_in), scale=1.0 / np.sqrt(self.rows))
        w_true = rng.normal((self.fan_in, self.fan_out),
                            scale=1.0 / np.sqrt(self.fan_in))
        noise = rng.normal((self.rows, self.fan_out), scale=1.0 / np.sqrt(self.rows))
        b = a @ w_true + self.label_noise * noise
        return QuadraticTask(a.astype(dtype), b.astype(dtype), self.lambda_reg,
                             gradient_mode=self.gradient_mode,
                             gradient_noise=self.gradient_noise)


class QuadraticTask(object):
    '''
    The regularized least-squares task. Its single parameter ``'w'`` is
    ``fan_in x fan_out`` and starts at zero.
    '''
    kind = 'quadratic'

    def __init__(self, a, b, lambda_reg=0.0, gradient_mode='minibatch',
                 gradient_noise=0.0):
        self.a = as_matrix(a, what="design matrix")
        self.b = as_matrix(b, what="targets")
        if self.a.shape[0] != self.b.shape[0]:
            raise ShapeError("design has {} rows but targets have {}".format(
                             self.a.shape[0], self.b.shape[0]))
        self.lambda_reg = float(lambda_reg)
        self.gradient_mode = gradient_mode
        self.gradient_noise = float(gradient_noise)
        self._minimizer = None

    @property
    def num_train(self):
        return self.a.shape[0]

    @property
    def param_shape(self):
        return (self.a.shape[1], self.b.shape[1])

    def init_params(self, rng=None, dtype=np.float64):
        return OrderedDict(w=np.zeros(self.param_shape, dtype=dtype))

    def minimizer(self):
        """
        ``(A^T A + lambda_reg I)^{-1} A^T B`` through the SVD of ``A``
        (the minimum-norm solution when ``lambda_reg = 0`` and ``A`` is
        rank deficient).
        """
        if self._minimizer is None:
            dec = svd(self.a)
            s = dec.singular_values
            gain = s / (s * s + self.lambda_reg)
            w = (dec.v * gain) @ (dec.u.T @ self.b.astype(np.float64))
            self._minimizer = w
        return self._minimizer

    def optimum_loss(self):
        loss, _ = quadratic_loss_grad(self, self.minimizer())
        return loss

    def loss_grad(self, params, batch, noise_rng=None):
        """
        Minibatch loss and gradient, scaled by ``rows / len(batch)`` so both
        are unbiased estimates of the full objective.
        """
        if len(batch) == 0:
            raise RangeError("empty batch")
        w = params['w']
        if self.gradient_mode == 'exact':
            loss, g = quadratic_loss_grad(self, w)
        else:
            a = self.a[batch]
            resid = a @ w - self.b[batch]
            scale = self.num_train / len(batch)
            loss = (0.5 * scale * float(np.sum(resid * resid))
                    + 0.5 * self.lambda_reg * float(np.sum(w * w)))
            g = scale * (a.T @ resid) + self.lambda_reg * w
        if noise_rng is not None and self.gradient_noise > 0:
            g = g + noise_rng.normal(g.shape, scale=self.gradient_noise, dtype=g.dtype)
        return loss, OrderedDict(w=g)

    def objective(self, params):
        loss, g = quadratic_loss_grad(self, params['w'])
        return loss, OrderedDict(w=g)

    def val_loss(self, params):
        return quadratic_loss_grad(self, params['w'])[0]


def quadratic_loss_grad(task, w):
    """
    ``L(W)`` and ``A^T (A W - B) + lambda_reg W`` over all rows.

    :raises ShapeError: If ``w`` is not ``fan_in x fan_out``.
    """
    w = np.asarray(w)
    if w.shape != task.param_shape:
        raise ShapeError("parameter has shape {}, task expects {}".format(
                         w.shape, task.param_shape))
    a = task.a.astype(w.dtype, copy=False)
    resid = a @ w - task.b.astype(w.dtype, copy=False)
    loss = (0.5 * float(np.sum(resid * resid))
            + 0.5 * task.lambda_reg * float(np.sum(w * w)))
    grad = a.T @ resid + task.lambda_reg * w
    return loss, grad


@dataclass
class MlpSpec:
    """
    A tanh (or relu) perceptron classifying a mixture of ``classes``
    Gaussians in ``input_dim`` dimensions. Class means have entries
    ``N(0, class_spread^2)``; samples add unit noise. A fixed
    ``val_fraction`` of the samples is held out for validation.
    """
    input_dim: int = 64
    hidden: Tuple[int, ...] = (128, 128)
    classes: int = 8
    activation: str = 'tanh'
    samples: int = 2048
    class_spread: float = 0.5
    val_fraction: float = 0.1

    def validate(self):
        self.hidden = tuple(self.hidden)
        if self.input_dim < 1:
            raise ConfigError("must be at least 1", 'mlp.input_dim')
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigError("must be a nonempty list of positive widths",
                              'mlp.hidden')
        if self.classes < 2:
            raise ConfigError("must be at least 2", 'mlp.classes')
        if self.activation not in ACTIVATIONS:
            raise ConfigError("must be one of {}".format(ACTIVATIONS),
                              'mlp.activation')
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("must lie in (0, 1)", 'mlp.val_fraction')
        if self.samples < 2:
            raise ConfigError("must be at least 2", 'mlp.samples')
        if self.class_spread < 0:
            raise ConfigError("must be nonnegative", 'mlp.class_spread')
        return self

    def with_width(self, width):
        """
        The same task with every hidden layer ``width`` wide.
        """
        hidden = tuple(width for _ in self.hidden)
        return MlpSpec(self.input_dim, hidden, self.classes, self.activation,
                       self.samples, self.class_spread, self.val_fraction)

    def build(self, rng, dtype=np.float64):
        self.validate()
        means = rng.normal((self.classes, self.input_dim), scale=self.class_spread)
        labels = rng.integers(0, self.classes, self.samples)
        x = means[labels] + rng.normal((self.samples, self.input_dim))
        order = rng.permutation(self.samples)
        n_val = max(1, int(round(self.val_fraction * self.samples)))
        val, train = order[:n_val], order[n_val:]
        return MlpTask(x[train].astype(dtype), labels[train],
                       x[val].astype(dtype), labels[val],
                       hidden=self.hidden, classes=self.classes,
                       activation=self.activation)


class MlpTask(object):
    '''
    Mean cross-entropy of a fully connected network. Layer ``i`` has weight
    ``w{i}`` (``fan_in x fan_out``) and bias ``b{i}``, so matrices go to Muon
    and biases to AdamW.
    '''
    kind = 'mlp'

    def __init__(self, x_train, y_train, x_val, y_val, hidden, classes,
                 activation='tanh'):
        if activation not in ACTIVATIONS:
            raise ConfigError("must be one of {}".format(ACTIVATIONS),
                              'mlp.activation')
        self.x_train = as_matrix(x_train, what="training inputs")
        self.y_train = np.asarray(y_train)
        self.x_val = as_matrix(x_val, what="validation inputs")
        self.y_val = np.asarray(y_val)
        self.widths = [self.x_train.shape[1]] + list(hidden) + [classes]
        self.classes = classes
        self.activation = activation

    @property
    def num_train(self):
        return self.x_train.shape[0]

    @property
    def num_layers(self):
        return len(self.widths) - 1

    def param_shapes(self):
        shapes = OrderedDict()
        for i in range(self.num_layers):
            fan_in, fan_out = self.widths[i], self.widths[i + 1]
            shapes['w{}'.format(i + 1)] = (fan_in, fan_out)
            shapes['b{}'.format(i + 1)] = (fan_out,)
        return shapes

    def init_params(self, rng, dtype=np.float64):
        """
        Weights ``N(0, 1/fan_in)``, biases zero.
        """
        params = OrderedDict()
        for name, shape in self.param_shapes().items():
            if len(shape) == 2:
                params[name] = rng.normal(shape, scale=1.0 / np.sqrt(shape[0]),
                                          dtype=dtype)
            else:
                params[name] = np.zeros(shape, dtype=dtype)
        return params

    def _act(self, z):
        if self.activation == 'tanh':
            return np.tanh(z)
        return np.maximum(z, 0)

    def _act_grad(self, z, h):
        if self.activation == 'tanh':
            return 1 - h * h
        return (z > 0).astype(z.dtype)

    def forward_backward(self, params, x, y, need_grad=True):
        """
        Mean cross-entropy of the network on ``(x, y)`` and, if
        ``need_grad``, its gradients by backpropagation.
        """
        zs = []
        hs = [x]
        h = x
        for i in range(self.num_layers):
            z = h @ params['w{}'.format(i + 1)] + params['b{}'.format(i + 1)]
            if i < self.num_layers - 1:
                zs.append(z)
                h = self._act(z)
                hs.append(h)
            else:
                logits = z
        shifted = logits - np.max(logits, axis=1, keepdims=True)
        lse = np.log(np.sum(np.exp(shifted), axis=1))
        n = x.shape[0]
        rows = np.arange(n)
        loss = float(np.mean(lse - shifted[rows, y]))
        if not need_grad:
            return loss, None
        probs = np.exp(shifted - lse[:, None])
        probs[rows, y] -= 1
        delta = probs / n
        grads = OrderedDict()
        for i in reversed(range(self.num_layers)):
            grads['w{}'.format(i + 1)] = hs[i].T @ delta
            grads['b{}'.format(i + 1)] = np.sum(delta, axis=0)
            if i > 0:
                dh = delta @ params['w{}'.format(i + 1)].T
                delta = dh * self._act_grad(zs[i - 1], hs[i])
        return loss, OrderedDict((name, grads[name]) for name in params)

    def loss_grad(self, params, batch, noise_rng=None):
        return mlp_loss_grad(self, params, batch)

    def objective(self, params):
        return self.forward_backward(params, self.x_train, self.y_train)

    def val_loss(self, params):
        return self.forward_backward(params, self.x_val, self.y_val,
                                     need_grad=False)[0]


def mlp_loss_grad(task, params, batch):
    """
    Mean cross-entropy over the training samples indexed by ``batch``
    (duplicates count once per occurrence) and its exact gradients.

    :raises RangeError: If ``batch`` is empty.
    """
    batch = np.asarray(batch, dtype=np.int64)
    if batch.size == 0:
        raise RangeError("empty batch")
    return task.forward_backward(params, task.x_train[batch], task.y_train[batch])


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    probes: int

    def passed(self, tol=1e-4):
        return self.max_rel_error <= tol


def _relative_error(analytic, numeric, floor):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(task, params, probes=10, h=1e-5, rng=None, batch=None, floor=1e-4):
    """
    Compare analytic gradients against central differences
    ``(L(w + h e) - L(w - h e)) / 2h`` at ``probes`` random coordinates of
    every parameter.

    :param task: A task object.
    :param OrderedDict params: Point at which to check, ideally float64.
    :param int probes: Coordinates probed per parameter.
    :param float h: Difference step.
    :param Rng rng: Chooses the coordinates; ``Rng(0)`` if omitted.
    :param batch: If given, check the minibatch loss on these samples;
        otherwise the full training objective.
    :param float floor: Lower bound on the relative-error denominator, so
        near-zero gradient entries are compared absolutely.
    :return list: One :class:`GradCheckReport` per parameter.
    """
    if probes < 1:
        raise RangeError("probes must be at least 1, got {}".format(probes))
    if not h > 0:
        raise RangeError("h must be positive, got {}".format(h))
    if rng is None:
        rng = Rng(0)

    def evaluate(p):
        if batch is None:
            return task.objective(p)
        return task.loss_grad(p, batch)

    _, analytic = evaluate(params)
    reports = []
    for name, value in params.items():
        worst = 0.0
        for _ in range(probes):
            flat = int(rng.integers(0, value.size))
            index = np.unravel_index(flat, value.shape)
            shifted = OrderedDict(params)
            plus = value.copy()
            plus[index] += h
            shifted[name] = plus
            loss_plus = evaluate(shifted)[0]
            minus = value.copy()
            minus[index] -= h
            shifted[name] = minus
            loss_minus = evaluate(shifted)[0]
            numeric = (loss_plus - loss_minus) / (2 * h)
            worst = max(worst, _relative_error(float(analytic[name][index]),
                                               numeric, floor))
        reports.append(GradCheckReport(name, worst, probes))
    return reports
