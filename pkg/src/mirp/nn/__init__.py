from .checkpoint import CheckpointError
from .gradcheck import GradCheckReport, check_function, grad_check
from .layers import (Conv1d, CwFrontEnd, DecimatingFrontEnd, Dense, Flatten, MaxPool1d,
                     PhysicalLayer, ReLU, dense, relu, softmax, softmax_xent)
from .model import MODES, Model, ModelSpec
from .optim import AdamState, TrainingError, adam_step
