from .losses import GradPair, logistic_grad_hess, logloss, sigmoid
from .model import GbdtModel, Tree, predict, predict_series
from .train import (CVResult, Hyperparams, cross_validate_rounds, first_argmax,
                    sample_admissions, train)

__all__ = ["GradPair", "logistic_grad_hess", "logloss", "sigmoid", "GbdtModel", "Tree",
           "predict", "predict_series", "CVResult", "Hyperparams", "cross_validate_rounds",
           "first_argmax", "sample_admissions", "train"]
