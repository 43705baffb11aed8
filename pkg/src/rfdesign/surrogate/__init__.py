from .checkpoint import load_surrogate, save_surrogate
from .estimator import SurrogateRegressor, SurrogateSimulator, TrainingDiverged
from .network import MiniResNet, SurrogateConfig

__all__ = ["MiniResNet", "SurrogateConfig", "SurrogateRegressor", "SurrogateSimulator",
           "TrainingDiverged", "load_surrogate", "save_surrogate"]
