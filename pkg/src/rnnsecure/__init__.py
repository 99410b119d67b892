"""Recurrent-network classifiers for malware, incident and fraud detection, built on numpy."""

from .data import Dataset, DatasetSchema, HcrudSpec, hcrud_generate, load_csv, save_csv, split, synth_apk_features
from .evaluation import confusion, cross_validate, metrics, stratified_kfold
from .model import TopologyConfig, TrainConfig, build_model, gradient_check, predict, train
from .svm import SvmConfig, svm_predict, svm_train
from .tensor import Rng

__version__ = "0.1.0"
