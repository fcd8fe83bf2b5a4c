"""Central difference operators, static-dynamic inputs and domain-aware NAS for face anti-spoofing."""

from .tensor import Parameter, Tensor, default_dtype, no_grad

__version__ = "0.1.0"
