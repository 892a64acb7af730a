"""imglift: trade compute for bandwidth on image-heavy pages.

A forward proxy rewrites image URLs to fetch downscaled variants and
restores resolution locally with small super-resolution networks; an
analyzer quantifies resize-support prevalence and the data / page-load
-time savings over page corpora.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND as KERNEL_BACKEND

__all__ = ["KERNEL_BACKEND", "__version__"]
