"""distillforge: train a compact skin-lesion classifier by distilling a
two-stream teacher, with bit-exact image preprocessing, f16 quantization,
and a full evaluation suite."""

__version__ = "0.1.0"

from .kernels import BACKEND as KERNEL_BACKEND  # noqa: F401
