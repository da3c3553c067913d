"""From-scratch numpy LSTM and logistic regression."""
from .data import FeatureStats, denormalize, fit_stats, normalize, split_counts, split_dataset
from .logreg import (LogRegConfig, LogRegParams, balanced_weights, logreg_forward, logreg_loss_grad,
                     train_logreg)
from .lstm import (LstmLayer, LstmParams, LstmState, SequenceSet, TrainConfig, bptt_gradients,
                   lstm_cell_forward, lstm_forward, lstm_step, sigmoid, train_lstm)
