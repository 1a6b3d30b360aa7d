"""Training, synthesis, evaluation and benchmarking around the model."""
