"""Deep Gaussian Markov random fields on lattices."""
from .grid import Dataset, as_grid, crop_frame, devectorize, pad_frame, vectorize
from .model import DgmrfModel, Layer, forward_g, init_model, log_prior_density, matern_layers, model_logdet
from .posterior import InferConfig, PosteriorOperator, PosteriorSummary, summarize
from .vi import TrainConfig, VariationalParams, train

__version__ = "0.1.0"
