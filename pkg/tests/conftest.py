import os

# pin BLAS pools to one thread before numpy loads so repeated runs are
# bit-identical (the reproducibility tests compare file bytes)
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
