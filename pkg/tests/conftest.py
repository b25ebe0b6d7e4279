"""Pin BLAS to one thread before numpy loads: on the small matmuls this
package produces, thread fan-out costs more than it buys, and the
acceptance runtimes are stated for a one-core budget."""

import os

for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")
