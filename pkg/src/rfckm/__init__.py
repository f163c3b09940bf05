"""Location-agnostic dynamic channel knowledge maps from RF radiance fields.

Modules: ``csi`` (tensors, metrics), ``ckmd`` (dataset files), ``scene``
(multipath simulator), ``sampler``, ``renderer``, ``adm`` (query
deformation), ``rarenet`` (radiator network), ``training``, ``checkpoint``,
``beamform`` (rate evaluation), ``config`` and ``cli``.
"""

__version__ = "0.1.0"
