from .cli import lnl as lnl
from .cli import main as main
from .transition import TransitionMatrix, make_matrix, rre
from .datagen import LabeledDataset, BlobSpec, generate_blobs, inject_noise
from .harness import ExperimentConfig, run_experiment, aggregate
