"""Layer kernels, network specs and network assembly."""
from .layers import (avgpool_backward, avgpool_forward, conv2d_backward, conv2d_forward,
                     fc_backward, fc_forward, maxpool_backward, maxpool_forward, pool_backward,
                     relu_backward, relu_forward, softmax_cross_entropy, tree_matmul)
from .network import (Network, bias_view, build_network, forward, param_count, param_shapes,
                      weight_view)
from .specs import (BUILTINS, ARCH_COLUMNS, LayerSpec, NetworkSpec, expand_network,
                    get_network_spec, parse_network_config, parse_network_text)

__all__ = [
    "avgpool_backward", "avgpool_forward", "conv2d_backward", "conv2d_forward", "fc_backward",
    "fc_forward", "maxpool_backward", "maxpool_forward", "pool_backward", "relu_backward",
    "relu_forward", "softmax_cross_entropy", "tree_matmul", "Network", "bias_view",
    "build_network", "forward", "param_count", "param_shapes", "weight_view", "BUILTINS",
    "ARCH_COLUMNS", "LayerSpec", "NetworkSpec", "expand_network", "get_network_spec",
    "parse_network_config", "parse_network_text",
]
