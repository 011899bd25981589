"""
Minimal dense-tensor library with reverse-mode autodiff, transformer
blocks, Adam, and a versioned checkpoint container.
"""

from src.autodiff.tensor import ComputationTape, Tensor, backward, no_grad

__all__ = ["ComputationTape", "Tensor", "backward", "no_grad"]
