"""
Mixture density core

Parameter constraints, isotropic Gaussian mixture densities, the
Bernoulli-gated multi-target negative log-likelihood and its gradient
with respect to the raw head outputs.

Coordinates are normalized patch coordinates (x, y): x runs along the
columns, y along the rows, and one unit is the patch side length.
The raw head vector is laid out as
    [K alpha-logits | K*2 mean values | K scale-logits | 1 gate-logit]
with the mean values interleaved per component (x0, y0, x1, y1, ...).
"""


import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_softmax, logsumexp, softmax

from .mderror import ConfigurationError, DomainError, NumericError


# importorator
__all__ = ['C', 'SIGMA_FLOOR', 'MixtureParams', 'TargetSet', 'head_width',
           'split_raw', 'constrain', 'kernel_density', 'mixture_density',
           'log_likelihood', 'nll_loss', 'responsibilities',
           'loss_and_grad_raw', 'loss_grad_raw', 'batch_loss_and_grad',
           'sample']

logger = logging.getLogger(__name__)

# target dimension, fixed to image plane coordinates
C = 2

# smallest sigma in normalized units (0.05 px on a 50 px patch)
SIGMA_FLOOR = 1e-3

# gate_e is kept strictly inside (0, 1)
GATE_EPS = 1e-12

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class MixtureParams:
    """
    Constrained per-patch prediction

    gate_logit is the unclipped logit behind gate_e when the parameters come
    from constrain; the loss uses it so that the gate term keeps its slope
    for logits far beyond the GATE_EPS clip.
    """
    alphas: np.ndarray
    mus: np.ndarray
    sigmas: np.ndarray
    gate_e: float
    gate_logit: float = None

    @property
    def K(self):
        return len(self.alphas)


@dataclass(frozen=True)
class TargetSet:
    """Target points of one patch, in normalized patch coordinates."""
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, C)))

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, C)
        if points.size and (points.min() < 0.0 or points.max() > 1.0):
            raise ConfigurationError('TargetSet', 'points must lie in [0, 1]^2')
        object.__setattr__(self, 'points', points)

    @property
    def has_object(self):
        return len(self.points) > 0

    def __len__(self):
        return len(self.points)


def head_width(K):
    """Length of the raw head vector for K components."""
    return (C + 2) * K + 1


def split_raw(raw, K):
    """
    Splits a raw head vector into its four blocks

    :param raw: raw head output of length (c+2)*K + 1
    :param K: number of mixture components
    :returns: (alpha_logits, means (K, 2), scale_logits, gate_logit)
    :raises ConfigurationError: if the length does not match K
    :raises NumericError: if any entry is not finite
    """
    raw = np.asarray(raw, dtype=np.float64)
    if K < 1 or raw.ndim != 1 or len(raw) != head_width(K):
        raise ConfigurationError(
            'raw', f'expected length {head_width(K) if K >= 1 else "?"} '
                   f'for K={K}, got shape {raw.shape}')
    if not np.all(np.isfinite(raw)):
        raise NumericError('raw', 'head output contains non-finite values')

    alpha_logits = raw[:K]
    mus = raw[K:3 * K].reshape(K, C)
    scale_logits = raw[3 * K:4 * K]
    gate_logit = raw[4 * K]
    return alpha_logits, mus, scale_logits, gate_logit


def constrain(raw, K):
    """
    Maps a raw head vector to valid mixture parameters

    alphas are a softmax of the logits, sigmas are SIGMA_FLOOR + exp(logit),
    means pass through unchanged and the gate is the logistic of its logit.

    :param raw: raw head output
    :param K: number of mixture components
    :returns: MixtureParams
    """
    alpha_logits, mus, scale_logits, gate_logit = split_raw(raw, K)

    with np.errstate(over='ignore'):
        sigmas = SIGMA_FLOOR + np.exp(scale_logits)
    if not np.all(np.isfinite(sigmas)):
        raise NumericError('constrain', 'scale logit overflowed')

    gate_e = float(np.clip(expit(gate_logit), GATE_EPS, 1.0 - GATE_EPS))
    return MixtureParams(alphas=softmax(alpha_logits), mus=mus.copy(),
                         sigmas=sigmas, gate_e=gate_e, gate_logit=float(gate_logit))


def kernel_density(mu, sigma, t):
    """
    Isotropic Gaussian density in the plane

    :param mu: component mean (x, y)
    :param sigma: standard deviation, > 0
    :param t: evaluation point (x, y)
    :raises DomainError: if sigma <= 0
    """
    if not sigma > 0:
        raise DomainError('sigma', f'must be positive, got {sigma}')
    d2 = float(np.sum((np.asarray(t, dtype=np.float64) - np.asarray(mu, dtype=np.float64)) ** 2))
    return float(np.exp(-d2 / (2.0 * sigma ** 2)) / ((2.0 * np.pi) ** (C / 2) * sigma ** C))


def _log_kernels(mus, sigmas, points):
    # (N, K) log phi_k(t_n) and the squared distances behind it
    diff = mus[np.newaxis, :, :] - points[:, np.newaxis, :]
    d2 = np.sum(diff ** 2, axis=-1)
    log_phi = -0.5 * C * LOG_2PI - C * np.log(sigmas) - d2 / (2.0 * sigmas ** 2)
    return log_phi, diff, d2


def log_likelihood(params, points):
    """Per-point ln p(t) under the mixture, computed with log-sum-exp."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, C)
    log_phi, _, _ = _log_kernels(params.mus, params.sigmas, points)
    with np.errstate(divide='ignore'):
        log_alpha = np.log(params.alphas)
    return logsumexp(log_alpha + log_phi, axis=1)


def mixture_density(params, t):
    """
    Mixture density sum_k alpha_k phi_k(t)

    :param params: MixtureParams
    :param t: a single point (x, y) or an (N, 2) array of points
    :returns: float for a single point, (N,) array otherwise
    """
    t = np.asarray(t, dtype=np.float64)
    values = np.exp(log_likelihood(params, t))
    if t.ndim == 1:
        return float(values[0])
    return values


def _gate_nll(params, has_object):
    # -ln e = ln(1 + exp(-logit)), -ln(1 - e) = ln(1 + exp(logit))
    if params.gate_logit is not None:
        sign = -1.0 if has_object else 1.0
        return np.logaddexp(0.0, sign * params.gate_logit)
    if has_object:
        return -np.log(params.gate_e)
    return -np.log1p(-params.gate_e)


def nll_loss(params_batch, targets_batch):
    """
    Bernoulli-gated multi-target negative log-likelihood, summed over patches

    E = sum_i [ -sum_n ln p(t_ni | x_i) - ln(e_i if x_i has targets else 1 - e_i) ]

    :param params_batch: list of MixtureParams, one per patch
    :param targets_batch: list of TargetSet aligned with params_batch
    :raises ConfigurationError: if the batches are not aligned
    """
    if len(params_batch) != len(targets_batch):
        raise ConfigurationError(
            'nll_loss', f'{len(params_batch)} predictions for {len(targets_batch)} target sets')

    total = 0.0
    for params, targets in zip(params_batch, targets_batch):
        if targets.has_object:
            total -= float(np.sum(log_likelihood(params, targets.points)))
        total += float(_gate_nll(params, targets.has_object))

    if not np.isfinite(total):
        raise NumericError('nll_loss', 'loss is not finite')
    return total


def responsibilities(params, t):
    """
    Posterior component weights pi_k = alpha_k phi_k(t) / sum_j alpha_j phi_j(t)

    :returns: (K,) for a single point, (N, K) for an array of points
    """
    t = np.asarray(t, dtype=np.float64)
    points = t.reshape(-1, C)
    log_phi, _, _ = _log_kernels(params.mus, params.sigmas, points)
    with np.errstate(divide='ignore'):
        joint = np.log(params.alphas) + log_phi
    pi = softmax(joint, axis=1)
    if t.ndim == 1:
        return pi[0]
    return pi


def loss_and_grad_raw(raw, targets, K):
    """
    Loss of one patch and its gradient with respect to the raw head vector

    :param raw: raw head output
    :param targets: TargetSet of the patch
    :param K: number of mixture components
    :returns: (loss, gradient with the layout of raw)
    """
    alpha_logits, mus, scale_logits, gate_logit = split_raw(raw, K)
    log_alpha = log_softmax(alpha_logits)
    exp_scale = np.exp(scale_logits)
    sigmas = SIGMA_FLOOR + exp_scale

    grad = np.zeros(head_width(K))
    loss = 0.0

    if targets.has_object:
        points = targets.points
        log_phi, diff, d2 = _log_kernels(mus, sigmas, points)
        joint = log_alpha + log_phi
        log_p = logsumexp(joint, axis=1)
        loss -= float(np.sum(log_p))
        pi = np.exp(joint - log_p[:, np.newaxis])

        grad[:K] = len(points) * np.exp(log_alpha) - pi.sum(axis=0)
        grad[K:3 * K] = (np.einsum('nk,nkc->kc', pi, diff) / sigmas[:, np.newaxis] ** 2).ravel()
        grad[3 * K:4 * K] = np.sum(pi * (C - d2 / sigmas ** 2), axis=0) * exp_scale / sigmas

    e = expit(gate_logit)
    if targets.has_object:
        loss += float(np.logaddexp(0.0, -gate_logit))
        grad[4 * K] = e - 1.0
    else:
        loss += float(np.logaddexp(0.0, gate_logit))
        grad[4 * K] = e

    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise NumericError('loss', 'loss or gradient is not finite')
    return loss, grad


def loss_grad_raw(raw, targets, K):
    """Gradient of the patch loss with respect to the raw head vector."""
    return loss_and_grad_raw(raw, targets, K)[1]


def batch_loss_and_grad(raws, targets_batch, K):
    """
    Summed loss and per-row gradients for a (B, width) block of head outputs
    """
    if len(raws) != len(targets_batch):
        raise ConfigurationError(
            'batch', f'{len(raws)} head outputs for {len(targets_batch)} target sets')

    grads = np.zeros_like(raws, dtype=np.float64)
    total = 0.0
    for i, targets in enumerate(targets_batch):
        loss, grads[i] = loss_and_grad_raw(raws[i], targets, K)
        total += loss
    return total, grads


def sample(params, n, rng):
    """Draws n points: a component by alpha, then its isotropic Gaussian."""
    rng = np.random.default_rng(rng)
    comps = rng.choice(params.K, size=n, p=params.alphas)
    noise = rng.normal(size=(n, C))
    return params.mus[comps] + noise * params.sigmas[comps, np.newaxis]
