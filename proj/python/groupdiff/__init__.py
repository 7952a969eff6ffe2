"""Group diffusion toolkit: toy data, grouped denoiser, sampler and metrics."""

from ._groupdiff import *  # noqa: F401,F403
from ._groupdiff import __version__  # noqa: F401
