"""Multi-exposure transformer fusion network."""
from .config import NetworkConfig
from .layers import deformable_conv, expo_share, stage, sw_msa, transformer_block
from .model import build_network, forward
from .params import ParamStore
