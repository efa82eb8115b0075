from .checkpoint import load_checkpoint, save_checkpoint
from .deepsets import DeepSetsEncoder, SetBatch, StateFeatures, featurize
from .layers import MLP, Linear
from .network import ValueNetwork
from .optim import Adam
from .quantile import ImplicitQuantileHead, cosine_basis, quantile_huber_loss

__all__ = ["Adam", "DeepSetsEncoder", "ImplicitQuantileHead", "Linear", "MLP", "SetBatch",
           "StateFeatures", "ValueNetwork", "cosine_basis", "featurize", "load_checkpoint",
           "quantile_huber_loss", "save_checkpoint"]
