# pin BLAS threads before numpy loads anywhere: keeps every run in the
# suite bit-reproducible and is faster at these matrix sizes
import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
