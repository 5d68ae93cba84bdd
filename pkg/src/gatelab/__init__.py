"""Graph attention networks that can switch off neighborhood aggregation, with exact
balance-law diagnostics, synthetic benchmarks and a sweep runner."""

from .graph import Graph, add_self_loops, erdos_renyi, neighborhood, read_edge_list, write_edge_list
from .initialization import InitPolicy, init_network
from .layers import LayerSpec, NetworkSpec, network_forward
from .synth import Dataset, NeighborDependentRecipe, gen_neighbor_dependent, gen_self_sufficient
from .training import TrainConfig, train

__all__ = [
    "Dataset", "Graph", "InitPolicy", "LayerSpec", "NeighborDependentRecipe", "NetworkSpec",
    "TrainConfig", "add_self_loops", "erdos_renyi", "gen_neighbor_dependent", "gen_self_sufficient",
    "init_network", "neighborhood", "network_forward", "read_edge_list", "train", "write_edge_list",
]
