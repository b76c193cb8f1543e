"""
WavResNet - the coefficient-domain regression network f: X' -> Y'

Topology (defaults): conv(15->128)+BN+ReLU, six residual modules of three
conv+BN+ReLU units with an add-then-ReLU bypass, channel concatenation of
the initial feature map and the six module outputs (7 x 128 = 896),
four conv+BN+ReLU units (896->128, then 128->128), final conv(128->15).
"""

import io
import logging
from abc import ABC, abstractmethod
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional

import numpy as np
from dotenv import dotenv_values

from .errors import ConfigError, DimensionError, ParameterError, StateError
from .layers import (
    BatchNormLayer,
    ConvLayer,
    batchnorm_backward,
    batchnorm_forward,
    concat_backward,
    concat_forward,
    conv2d_backward,
    conv2d_forward,
    relu_backward,
    relu_forward,
)

logger = logging.getLogger(__name__)

BYPASS_MODES = ("add_relu", "add")
FINAL_INITS = ("he", "zero")


@dataclass(frozen=True)
class TopologyConfig:
    in_channels: int = 15
    channels: int = 128
    modules: int = 6
    convs_per_module: int = 3
    post_convs: int = 4
    out_channels: int = 15
    bypass: str = "add_relu"
    bn_eps: float = 1e-5
    bn_momentum: float = 0.9
    final_init: str = "he"
    init_seed: int = 0

    def validate(self) -> "TopologyConfig":
        for name in ("in_channels", "channels", "out_channels", "convs_per_module", "post_convs"):
            if getattr(self, name) < 1:
                raise ParameterError(f"net.{name} must be >= 1, got {getattr(self, name)}")
        if self.modules < 0:
            raise ParameterError(f"net.modules must be >= 0, got {self.modules}")
        if self.bypass not in BYPASS_MODES:
            raise ParameterError(f"net.bypass must be one of {BYPASS_MODES}, got '{self.bypass}'")
        if self.final_init not in FINAL_INITS:
            raise ParameterError(f"net.final_init must be one of {FINAL_INITS}, got '{self.final_init}'")
        if self.bn_eps <= 0 or not 0 <= self.bn_momentum < 1:
            raise ParameterError("net.bn_eps must be > 0 and net.bn_momentum in [0, 1)")
        return self

    @property
    def conv_count(self) -> int:
        return 1 + self.modules * self.convs_per_module + self.post_convs + 1

    def to_text(self) -> str:
        return "".join(f"net.{key}={value!r}\n" if isinstance(value, float) else f"net.{key}={value}\n"
                       for key, value in asdict(self).items())

    @classmethod
    def from_mapping(cls, mapping: Dict[str, str]) -> "TopologyConfig":
        kwargs = {}
        for f in fields(cls):
            key = f"net.{f.name}"
            if key not in mapping:
                continue
            kind = f.type
            try:
                kwargs[f.name] = kind(mapping[key])
            except ValueError as e:
                raise ConfigError(f"bad topology value {key}={mapping[key]!r}") from e
        return cls(**kwargs).validate()

    @classmethod
    def from_text(cls, text: str) -> "TopologyConfig":
        values = dotenv_values(stream=io.StringIO(text), interpolate=False)
        return cls.from_mapping({k: v for k, v in values.items() if v is not None})


class Unit(ABC):
    """A trainable block that caches what its backward pass needs"""

    def __init__(self, name: str):
        self.name = name
        self.grads: Dict[str, np.ndarray] = {}
        self._ready = False

    @abstractmethod
    def get_unit_name(self) -> str:
        """Return the kind of this unit"""
        pass

    @abstractmethod
    def forward(self, x: np.ndarray, mode: str, update_stats: bool = True) -> np.ndarray:
        pass

    @abstractmethod
    def backward(self, grad: np.ndarray) -> np.ndarray:
        """Fill self.grads and return the gradient with respect to the input"""
        pass

    @abstractmethod
    def parameters(self) -> "OrderedDict[str, np.ndarray]":
        """All arrays in declaration order, learnable first per layer"""
        pass

    def learnable(self) -> List[str]:
        return [name for name in self.parameters() if not name.endswith(("running_mean", "running_var"))]

    def _require_train_cache(self) -> None:
        if not self._ready:
            raise StateError(f"{self.name}: backward called without a train-mode forward")


class ConvBnRelu(Unit):
    def __init__(self, name: str, conv: ConvLayer, bn: BatchNormLayer):
        super().__init__(name)
        self.conv = conv
        self.bn = bn

    def get_unit_name(self) -> str:
        return "conv_bn_relu"

    def forward(self, x, mode, update_stats=True):
        self._x = x
        y, self._cache = batchnorm_forward(conv2d_forward(x, self.conv), self.bn, mode, update_stats)
        self._ready = mode == "train"
        return relu_forward(y)

    def backward(self, grad):
        self._require_train_cache()
        cache = self._cache
        pre_activation = cache.scale[np.newaxis, :, np.newaxis, np.newaxis] * cache.x_hat \
            + cache.shift[np.newaxis, :, np.newaxis, np.newaxis]
        grad = relu_backward(pre_activation, grad)
        grad, grad_scale, grad_shift = batchnorm_backward(cache, grad)
        grad_x, grad_kernels, grad_bias = conv2d_backward(self._x, self.conv, grad)
        self.grads = OrderedDict([
            (f"{self.name}.conv.kernels", grad_kernels),
            (f"{self.name}.conv.bias", grad_bias),
            (f"{self.name}.bn.scale", grad_scale),
            (f"{self.name}.bn.shift", grad_shift),
        ])
        return grad_x

    def parameters(self):
        return OrderedDict([
            (f"{self.name}.conv.kernels", self.conv.kernels),
            (f"{self.name}.conv.bias", self.conv.bias),
            (f"{self.name}.bn.scale", self.bn.scale),
            (f"{self.name}.bn.shift", self.bn.shift),
            (f"{self.name}.bn.running_mean", self.bn.running_mean),
            (f"{self.name}.bn.running_var", self.bn.running_var),
        ])


class OutputConv(Unit):
    """Last layer: convolution only, no BN or ReLU"""

    def __init__(self, name: str, conv: ConvLayer):
        super().__init__(name)
        self.conv = conv

    def get_unit_name(self) -> str:
        return "conv"

    def forward(self, x, mode, update_stats=True):
        self._x = x
        self._ready = mode == "train"
        return conv2d_forward(x, self.conv)

    def backward(self, grad):
        self._require_train_cache()
        grad_x, grad_kernels, grad_bias = conv2d_backward(self._x, self.conv, grad)
        self.grads = OrderedDict([
            (f"{self.name}.conv.kernels", grad_kernels),
            (f"{self.name}.conv.bias", grad_bias),
        ])
        return grad_x

    def parameters(self):
        return OrderedDict([
            (f"{self.name}.conv.kernels", self.conv.kernels),
            (f"{self.name}.conv.bias", self.conv.bias),
        ])


class ResidualModule(Unit):
    def __init__(self, name: str, units: List[ConvBnRelu], bypass: str = "add_relu"):
        super().__init__(name)
        self.units = units
        self.bypass = bypass

    def get_unit_name(self) -> str:
        return "residual_module"

    def forward(self, x, mode, update_stats=True):
        h = x
        for unit in self.units:
            h = unit.forward(h, mode, update_stats)
        self._sum = h + x
        self._ready = mode == "train"
        return relu_forward(self._sum) if self.bypass == "add_relu" else self._sum

    def backward(self, grad):
        self._require_train_cache()
        if self.bypass == "add_relu":
            grad = relu_backward(self._sum, grad)
        through = grad
        for unit in reversed(self.units):
            through = unit.backward(through)
        self.grads = OrderedDict()
        for unit in self.units:
            self.grads.update(unit.grads)
        return grad + through

    def parameters(self):
        params = OrderedDict()
        for unit in self.units:
            params.update(unit.parameters())
        return params


class WavResNet:
    """Parameters and forward/backward of the full topology"""

    def __init__(self, topology: Optional[TopologyConfig] = None,
                 logger: Optional[logging.Logger] = None, initialize: bool = True):
        self.topology = (topology or TopologyConfig()).validate()
        self.logger = logger or logging.getLogger(self.__class__.__name__)
        self._build(initialize)

    def _build(self, initialize: bool) -> None:
        t = self.topology
        rng = np.random.default_rng(t.init_seed)

        def conv(n_in, n_out, zero=False):
            if zero or not initialize:
                return ConvLayer.zeros(n_in, n_out)
            return ConvLayer.he_init(n_in, n_out, rng)

        def bn():
            return BatchNormLayer.identity(t.channels, t.bn_eps, t.bn_momentum)

        self.head = ConvBnRelu("init", conv(t.in_channels, t.channels), bn())
        self.modules = [
            ResidualModule(
                f"module{m}",
                [ConvBnRelu(f"module{m}.unit{u}", conv(t.channels, t.channels), bn())
                 for u in range(1, t.convs_per_module + 1)],
                t.bypass,
            )
            for m in range(1, t.modules + 1)
        ]
        concat_channels = (t.modules + 1) * t.channels
        self.post = [
            ConvBnRelu(f"post{p}", conv(concat_channels if p == 1 else t.channels, t.channels), bn())
            for p in range(1, t.post_convs + 1)
        ]
        self.tail = OutputConv("final", conv(t.channels, t.out_channels, zero=t.final_init == "zero"))

    @classmethod
    def zeros(cls, topology: Optional[TopologyConfig] = None) -> "WavResNet":
        """All kernels and biases zero (f == 0); BN layers keep scale 1, shift 0"""
        return cls(topology, initialize=False)

    def units(self) -> List[Unit]:
        return [self.head, *self.modules, *self.post, self.tail]

    def parameters(self) -> "OrderedDict[str, np.ndarray]":
        params = OrderedDict()
        for unit in self.units():
            params.update(unit.parameters())
        return params

    def learnable_parameters(self) -> "OrderedDict[str, np.ndarray]":
        names = [name for unit in self.units() for name in unit.learnable()]
        params = self.parameters()
        return OrderedDict((name, params[name]) for name in names)

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.learnable_parameters().values()))

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        """Copy values into the existing parameter arrays"""
        params = self.parameters()
        if list(arrays) != list(params):
            raise DimensionError("parameter names or order do not match the topology")
        for name, target in params.items():
            source = np.asarray(arrays[name], dtype=np.float64)
            if source.size != target.size:
                raise DimensionError(f"{name}: {source.size} values for a {target.shape} array")
            target[...] = source.reshape(target.shape)

    def forward(self, x: np.ndarray, mode: str = "train", update_stats: bool = True) -> np.ndarray:
        t = self.topology
        if x.ndim != 4 or x.shape[1] != t.in_channels:
            raise DimensionError(f"network expects (N, {t.in_channels}, H, W), got {x.shape}")
        if x.shape[2] < 3 or x.shape[3] < 3:
            raise DimensionError(f"spatial size must be at least 3x3, got {x.shape[2:]}")

        feature = self.head.forward(x, mode, update_stats)
        outputs = [feature]
        for module in self.modules:
            feature = module.forward(feature, mode, update_stats)
            outputs.append(feature)
        h = concat_forward(outputs)
        for unit in self.post:
            h = unit.forward(h, mode, update_stats)
        return self.tail.forward(h, mode, update_stats)

    def backward(self, grad_out: np.ndarray) -> "OrderedDict[str, np.ndarray]":
        """Gradients of every learnable parameter for the last train-mode forward"""
        grad = self.tail.backward(grad_out)
        for unit in reversed(self.post):
            grad = unit.backward(grad)
        parts = concat_backward(grad, [self.topology.channels] * (len(self.modules) + 1))
        carry = parts[-1]
        for index in range(len(self.modules) - 1, -1, -1):
            carry = parts[index] + self.modules[index].backward(carry)
        self.input_grad = self.head.backward(carry)

        grads = OrderedDict()
        for unit in self.units():
            grads.update(unit.grads)
        return grads


def wavresnet_forward(network: WavResNet, x: np.ndarray, mode: str = "infer") -> np.ndarray:
    return network.forward(x, mode)


def wavresnet_backward(network: WavResNet, x: np.ndarray, grad_out: np.ndarray) -> "OrderedDict[str, np.ndarray]":
    """Reverse-mode gradients at x; the forward runs in train mode without touching running stats"""
    network.forward(x, "train", update_stats=False)
    return network.backward(grad_out)
