
# probabilities entering a log are clamped to this floor
log_floor = 1e-12

# row-stochastic tolerance for transition matrices
row_sum_tolerance = 1e-6
anchor_row_tolerance = 1e-9

# Adam defaults
adam_beta1 = 0.9
adam_beta2 = 0.999
adam_epsilon = 1e-8

# learning rates and batch sizes of the reported experiments
base_learning_rate = 0.0005
base_batch_size = 32
revision_learning_rate = 5e-7
revision_batch_size = 256

# 5e-7 barely moves a small MLP, so desk-scale runs revise faster
desk_revision_learning_rate = 1e-4

default_patience = 10
default_alpha = 0.01
default_percentile = 97.0
default_train_fraction = 0.8
