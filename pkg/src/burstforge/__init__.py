"""burstforge: burst-image denoising with per-pixel predicted kernels.

Subpackages and modules:

* ``diffcore``   tensors with reverse-mode gradients, optimizer, checkpoints
* ``adaconv``    per-pixel adaptive convolution and weighted reconstruction
* ``attention``  channel and spatial feature gating
* ``network``    the burst denoising network and its ablation variants
* ``objective``  gamma-domain training loss with annealed per-frame term
* ``burstgen``   synthetic burst generation: shifts, downsampling, noise
* ``metrics``    fidelity metrics and evaluation reports
* ``trainer``    training loop, ablation runner, run manifests
* ``cli``        command-line interface
"""

__version__ = "0.1.0"
