"""POI-level geolocation of social posts with transformer feature fusion.

transTagger plus its hierarchical variants (hierTagger, mtlTagger), built on a
small numpy autodiff core.
"""

__version__ = "0.1.0"
