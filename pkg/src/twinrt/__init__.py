"""twinrt: a digital twin runtime.

Gateways front the actual systems, an engine synchronizes model properties
with gateway properties over directed mappings on a deterministic tick loop,
a data manager journals every value with qualifying metadata, model managers
own all model mutation, and services act only through engine-mediated,
permission-checked requests. A conformance checker classifies configurations
as digital model / shadow / twin and audits seven structural rules.
"""

__version__ = "0.1.0"
