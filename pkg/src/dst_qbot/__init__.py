"""Dialogue-state-tracking questioner for the GuessWhich image-guessing game."""
import os

# Tiny matrices: BLAS threading only adds overhead and run-to-run jitter.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

__version__ = "0.1.0"
