"""
Mixture density network

A small convolutional backbone (conv + elu blocks, average pooling)
followed by the MDN head: a 256-wide elu layer and a linear layer emitting
(c+2)*K + 1 raw values per patch.

Every conv block sees two extra input channels holding the normalized
column and row of each pixel, and the last feature map is average pooled
onto a pool_grid x pool_grid grid instead of a single cell. pool_grid=1
without coordinate channels is plain global average pooling, which throws
away where in the patch a feature fired.

Everything is plain numpy. Weights are trained in float64 and stored in the
checkpoint as float32; forward evaluation from a checkpoint widens the
stored float32 weights back to float64.
"""


import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from tqdm import tqdm

from . import mixture
from .mderror import ConfigurationError, NumericError


# importorator
__all__ = ['NetworkConfig', 'Checkpoint', 'TrainingBatch', 'TrainingState',
           'MDNetwork', 'layer_shapes', 'feature_size', 'learning_rate_at', 'forward',
           'network_loss_and_grads', 'train_step', 'train', 'write_loss_curve']

logger = logging.getLogger(__name__)

DEFAULT_BLOCKS = ((16, 3, 1), (32, 3, 2), (64, 3, 2), (64, 3, 2))
LR_SCHEDULES = ('constant', 'cosine')


@dataclass
class NetworkConfig:
    K: int = 100
    patch_size: int = 50
    channels: int = 1
    conv_blocks: tuple = DEFAULT_BLOCKS
    coord_channels: bool = True
    pool_grid: int = 4
    fc_hidden: int = 256
    activation: str = 'elu'
    seed: int = 0

    # adam
    learning_rate: float = 2e-3
    lr_schedule: str = 'cosine'
    lr_floor: float = 0.02
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 30

    def __post_init__(self):
        self.conv_blocks = tuple(tuple(int(v) for v in block) for block in self.conv_blocks)

    @property
    def head_width(self):
        return mixture.head_width(self.K)

    def validate(self):
        if self.K < 1:
            raise ConfigurationError('K', f'must be >= 1, got {self.K}')
        if self.patch_size < 1:
            raise ConfigurationError('patch_size', f'must be > 0, got {self.patch_size}')
        if self.channels not in (1, 3):
            raise ConfigurationError('channels', f'must be 1 or 3, got {self.channels}')
        if self.activation != 'elu':
            raise ConfigurationError('activation', 'only elu is supported')
        if not self.conv_blocks:
            raise ConfigurationError('conv_blocks', 'at least one block is required')
        for channels, kernel, stride in self.conv_blocks:
            if channels < 1 or kernel < 1 or kernel % 2 == 0 or stride < 1:
                raise ConfigurationError(
                    'conv_blocks', f'bad block ({channels}, {kernel}, {stride})')
        if self.fc_hidden < 1:
            raise ConfigurationError('fc_hidden', f'must be >= 1, got {self.fc_hidden}')
        side = feature_size(self)
        if not 1 <= self.pool_grid <= side:
            raise ConfigurationError(
                'pool_grid', f'must lie in [1, {side}] for the final {side}x{side} '
                             f'feature map, got {self.pool_grid}')
        if self.learning_rate < 0:
            raise ConfigurationError('learning_rate', 'must be >= 0')
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigurationError('lr_schedule', f'must be one of {LR_SCHEDULES}')
        if not 0.0 <= self.lr_floor <= 1.0:
            raise ConfigurationError('lr_floor', f'must lie in [0, 1], got {self.lr_floor}')
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError('batch_size', 'batch_size >= 1 and epochs >= 0 required')
        return self

    def to_dict(self):
        values = asdict(self)
        values['conv_blocks'] = [list(block) for block in self.conv_blocks]
        return values

    @classmethod
    def from_dict(cls, values):
        return cls(**values)


@dataclass
class Checkpoint:
    """Network weights (float32, in layer order) plus config and training metadata."""
    config: NetworkConfig
    weights: dict
    format_version: int = 1
    metadata: dict = field(default_factory=dict)


@dataclass
class TrainingBatch:
    patches: np.ndarray
    targets: list

    def __post_init__(self):
        self.patches = np.asarray(self.patches, dtype=np.float64)
        if len(self.patches) < 1:
            raise ConfigurationError('batch', 'a batch needs at least one patch')
        if len(self.patches) != len(self.targets):
            raise ConfigurationError(
                'batch', f'{len(self.patches)} patches for {len(self.targets)} target sets')
        if self.patches.min() < 0.0 or self.patches.max() > 1.0:
            raise ConfigurationError('batch', 'pixel values must be normalized to [0, 1]')


def feature_size(config):
    """Side length of the last conv block's feature map."""
    size = config.patch_size
    for _, kernel, stride in config.conv_blocks:
        size = _out_size(size, kernel, stride)
    return size


def layer_shapes(config):
    """Ordered (name, shape) list of every trainable array."""
    shapes = []
    extra = 2 if config.coord_channels else 0
    in_channels = config.channels
    for i, (channels, kernel, _) in enumerate(config.conv_blocks):
        shapes.append((f'conv{i}.weight', (channels, in_channels + extra, kernel, kernel)))
        shapes.append((f'conv{i}.bias', (channels,)))
        in_channels = channels
    shapes.append(('fc.weight', (in_channels * config.pool_grid ** 2, config.fc_hidden)))
    shapes.append(('fc.bias', (config.fc_hidden,)))
    shapes.append(('head.weight', (config.fc_hidden, config.head_width)))
    shapes.append(('head.bias', (config.head_width,)))
    return shapes


def _elu(z):
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def _elu_grad(z):
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


def _out_size(size, kernel, stride):
    pad = kernel // 2
    return (size + 2 * pad - kernel) // stride + 1


def _conv_forward(x, weight, bias, stride):
    # x (B, C, H, W), weight (F, C, k, k) -> (B, F, Ho, Wo) and the im2col block
    k = weight.shape[-1]
    pad = k // 2
    b, c, h, w = x.shape
    ho, wo = _out_size(h, k, stride), _out_size(w, k, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))

    cols = np.empty((b, c, k, k, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]

    out = np.tensordot(cols, weight, axes=([1, 2, 3], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2) + bias[np.newaxis, :, np.newaxis, np.newaxis]
    return out, cols


def _conv_backward(dout, cols, weight, x_shape, stride, need_dx=True):
    k = weight.shape[-1]
    pad = k // 2
    dweight = np.tensordot(dout, cols, axes=([0, 2, 3], [0, 4, 5]))
    dbias = dout.sum(axis=(0, 2, 3))
    if not need_dx:
        return dweight, dbias, None

    b, c, h, w = x_shape
    ho, wo = dout.shape[2], dout.shape[3]
    dcols = np.tensordot(dout, weight, axes=([1], [0])).transpose(0, 3, 4, 5, 1, 2)
    dxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, i, j]
    return dweight, dbias, dxp[:, :, pad:pad + h, pad:pad + w]


def _add_coords(x):
    b, _, h, w = x.shape
    cols = np.broadcast_to((np.arange(w) + 0.5) / w, (b, 1, h, w))
    rows = np.broadcast_to(((np.arange(h) + 0.5) / h)[:, np.newaxis], (b, 1, h, w))
    return np.concatenate([x, cols, rows], axis=1)


def _pool_matrix(size, grid):
    # cell i averages rows floor(i*size/grid) .. ceil((i+1)*size/grid) - 1
    matrix = np.zeros((grid, size))
    for i in range(grid):
        start = (i * size) // grid
        stop = -((-(i + 1) * size) // grid)
        matrix[i, start:stop] = 1.0 / (stop - start)
    return matrix

class MDNetwork:
    """Backbone + MDN head over a dict of float64 weights."""

    def __init__(self, config, weights):
        self.config = config.validate()
        self.weights = {}
        for name, shape in layer_shapes(config):
            if name not in weights:
                raise ConfigurationError(name, 'missing weight array')
            array = np.asarray(weights[name], dtype=np.float64)
            if array.shape != tuple(shape):
                raise ConfigurationError(name, f'expected shape {shape}, got {array.shape}')
            self.weights[name] = array.copy()

    @classmethod
    def initialize(cls, config, rng):
        """
        Fan-in scaled uniform weights from a seeded generator

        Head biases start the components on a regular grid over the patch
        with sigma about a tenth of the patch side and a neutral gate.
        """
        config.validate()
        rng = np.random.default_rng(rng)
        weights = {}
        for name, shape in layer_shapes(config):
            if name.endswith('.bias'):
                weights[name] = np.zeros(shape)
                continue
            fan_in = int(np.prod(shape[1:])) if name.startswith('conv') else shape[0]
            bound = np.sqrt(6.0 / fan_in)
            if name == 'head.weight':
                bound = 0.1 * np.sqrt(3.0 / fan_in)
            weights[name] = rng.uniform(-bound, bound, size=shape)

        K = config.K
        side = int(np.ceil(np.sqrt(K)))
        head_bias = weights['head.bias']
        head_bias[K:3 * K:2] = ((np.arange(K) % side) + 0.5) / side
        head_bias[K + 1:3 * K:2] = ((np.arange(K) // side) + 0.5) / side
        head_bias[3 * K:4 * K] = np.log(0.1)
        return cls(config, weights)

    @classmethod
    def from_checkpoint(cls, checkpoint):
        return cls(checkpoint.config, checkpoint.weights)

    def to_checkpoint(self, metadata=None):
        weights = {name: self.weights[name].astype(np.float32)
                   for name, _ in layer_shapes(self.config)}
        return Checkpoint(config=self.config, weights=weights, metadata=dict(metadata or {}))

    def as_batch(self, patches):
        """Brings patches to (B, channels, size, size) float64."""
        x = np.asarray(patches, dtype=np.float64)
        if x.ndim == 2:
            x = x[np.newaxis, np.newaxis]
        elif x.ndim == 3:
            x = x[:, np.newaxis] if self.config.channels == 1 else x[np.newaxis]
        size = self.config.patch_size
        if x.ndim != 4 or x.shape[1:] != (self.config.channels, size, size):
            raise ConfigurationError(
                'patch', f'expected {self.config.channels}x{size}x{size} patches, '
                         f'got shape {np.shape(patches)}')
        return x

    def forward(self, patches, keep_cache=False):
        """
        Raw head outputs for a batch of patches

        :param patches: (B, size, size) grayscale or (B, C, size, size)
        :param keep_cache: also return the activations needed by backward
        :returns: (B, head_width) array, or (array, cache)
        """
        w = self.weights
        h = self.as_batch(patches)
        cache = {'blocks': []}

        for i, (_, _, stride) in enumerate(self.config.conv_blocks):
            if self.config.coord_channels:
                h = _add_coords(h)
            z, cols = _conv_forward(h, w[f'conv{i}.weight'], w[f'conv{i}.bias'], stride)
            if keep_cache:
                cache['blocks'].append((h.shape, cols, z))
            h = _elu(z)

        grid = self.config.pool_grid
        pool_rows, pool_cols = _pool_matrix(h.shape[2], grid), _pool_matrix(h.shape[3], grid)
        pooled = np.einsum('bchw,ih,jw->bcij', h, pool_rows, pool_cols).reshape(len(h), -1)
        z_fc = pooled @ w['fc.weight'] + w['fc.bias']
        a_fc = _elu(z_fc)
        raw = a_fc @ w['head.weight'] + w['head.bias']

        if not keep_cache:
            return raw
        cache.update(pooled=pooled, z_fc=z_fc, a_fc=a_fc, pool=(pool_rows, pool_cols))
        return raw, cache

    def backward(self, cache, grad_raw):
        """Gradients of every weight given dLoss/draw of shape (B, head_width)."""
        w = self.weights
        grads = {}

        grads['head.weight'] = cache['a_fc'].T @ grad_raw
        grads['head.bias'] = grad_raw.sum(axis=0)
        dz_fc = (grad_raw @ w['head.weight'].T) * _elu_grad(cache['z_fc'])
        grads['fc.weight'] = cache['pooled'].T @ dz_fc
        grads['fc.bias'] = dz_fc.sum(axis=0)
        dpooled = dz_fc @ w['fc.weight'].T

        pool_rows, pool_cols = cache['pool']
        grid = self.config.pool_grid
        dpooled = dpooled.reshape(len(dpooled), -1, grid, grid)
        dh = np.einsum('bcij,ih,jw->bchw', dpooled, pool_rows, pool_cols)

        for i in reversed(range(len(self.config.conv_blocks))):
            x_shape, cols, z = cache['blocks'][i]
            stride = self.config.conv_blocks[i][2]
            dz = dh * _elu_grad(z)
            grads[f'conv{i}.weight'], grads[f'conv{i}.bias'], dh = _conv_backward(
                dz, cols, w[f'conv{i}.weight'], x_shape, stride, need_dx=i > 0)
            if dh is not None and self.config.coord_channels:
                dh = dh[:, :-2]
        return grads


def forward(checkpoint, patch):
    """
    Raw head output for a single patch

    :param checkpoint: Checkpoint to evaluate
    :param patch: (size, size) grayscale array, or (C, size, size)
    :returns: 1-D array of length (c+2)*K + 1
    :raises ConfigurationError: if the patch shape does not match the config
    """
    network = MDNetwork.from_checkpoint(checkpoint)
    patch = np.asarray(patch)
    expected = 2 if checkpoint.config.channels == 1 else 3
    if patch.ndim != expected:
        raise ConfigurationError('patch', f'expected a single patch, got shape {patch.shape}')
    return network.forward(patch)[0]


class TrainingState:
    """Mutable float64 weights plus adam moments. Not shared across threads."""

    def __init__(self, network):
        self.network = network
        self.config = network.config
        self.learning_rate = network.config.learning_rate
        self.step = 0
        self.m = {name: np.zeros_like(v) for name, v in network.weights.items()}
        self.v = {name: np.zeros_like(v) for name, v in network.weights.items()}

    @classmethod
    def initialize(cls, config, rng=None):
        return cls(MDNetwork.initialize(config, config.seed if rng is None else rng))


def network_loss_and_grads(network, batch):
    """Summed batch loss and its gradient for every weight."""
    raws, cache = network.forward(batch.patches, keep_cache=True)
    loss, grad_raw = mixture.batch_loss_and_grad(raws, batch.targets, network.config.K)
    return loss, network.backward(cache, grad_raw)


def train_step(state, batch):
    """
    One adam update on a batch

    :param state: TrainingState, updated in place
    :param batch: TrainingBatch
    :returns: the batch loss before the update
    :raises NumericError: if the loss is not finite
    """
    cfg = state.config
    try:
        loss, grads = network_loss_and_grads(state.network, batch)
    except NumericError as ex:
        logger.error('non-finite loss at step %d', state.step)
        raise NumericError(
            'train_step', f'{ex.message}; try a lower learning rate '
                          f'(currently {state.learning_rate:g})') from ex

    state.step += 1
    scale = 1.0 / len(batch.patches)
    for name, weight in state.network.weights.items():
        g = grads[name] * scale
        state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        m_hat = state.m[name] / (1.0 - cfg.beta1 ** state.step)
        v_hat = state.v[name] / (1.0 - cfg.beta2 ** state.step)
        weight -= state.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return loss


def learning_rate_at(config, epoch):
    """
    Step size for a 0-based epoch

    'cosine' anneals from learning_rate at epoch 0 down towards
    lr_floor * learning_rate at the last epoch; 'constant' never changes.
    """
    if config.lr_schedule == 'constant' or config.epochs <= 1:
        return config.learning_rate
    floor = config.lr_floor
    cosine = 0.5 * (1.0 + np.cos(np.pi * epoch / (config.epochs - 1)))
    return config.learning_rate * (floor + (1.0 - floor) * cosine)


def train(dataset, config, progress=False):
    """
    Trains a network on a list of PatchRecords

    :param dataset: list of PatchRecord
    :param config: NetworkConfig; seed fixes initialization and shuffling
    :param progress: show a progress bar
    :returns: (Checkpoint, per-epoch mean loss list)
    :raises ConfigurationError: if the dataset is empty
    """
    config.validate()
    if not dataset:
        raise ConfigurationError('dataset', 'cannot train on an empty dataset')

    targets = [record.targets for record in dataset]
    n_object = sum(t.has_object for t in targets)
    if n_object in (0, len(targets)):
        logger.warning('dataset has %d object and %d empty patches; the gate sees one class only',
                       n_object, len(targets) - n_object)

    init_seed, shuffle_seed = np.random.SeedSequence(config.seed).spawn(2)
    state = TrainingState.initialize(config, np.random.default_rng(init_seed))
    shuffle_rng = np.random.default_rng(shuffle_seed)
    pixels = np.stack([record.pixels for record in dataset])

    losses = []
    for epoch in tqdm(range(config.epochs), desc='training', disable=not progress):
        state.learning_rate = learning_rate_at(config, epoch)
        order = shuffle_rng.permutation(len(dataset))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            total += train_step(state, TrainingBatch(pixels[idx], [targets[i] for i in idx]))
        losses.append(total / len(dataset))
        logger.info('epoch %d/%d mean loss %.6f (lr %.2e)',
                    epoch + 1, config.epochs, losses[-1], state.learning_rate)

    metadata = {'final_loss': losses[-1] if losses else None,
                'epochs': config.epochs,
                'seed': config.seed}
    return state.network.to_checkpoint(metadata), losses


def write_loss_curve(losses, path):
    """Writes 'epoch,mean_loss' with one row per epoch."""
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['epoch', 'mean_loss'])
        for epoch, loss in enumerate(losses, 1):
            writer.writerow([epoch, repr(float(loss))])
