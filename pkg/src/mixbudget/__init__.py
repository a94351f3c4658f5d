"""Training probabilistic classifiers from unevenly annotated corpora.

Submodules: ``corpus`` (data model, budget allocation, synthetic pools),
``model`` (MLP heads, losses, exact gradients, Adam), ``strategies``
(cross-entropy and interpolation training objectives), ``calibrate``
(temperature scaling and smoothing), ``metrics`` (distribution and
type-set evaluation), ``cli`` (config-driven experiment runner).
"""

__version__ = "0.1.0"
