"""Hand detection refinement and grasp classification for in-vehicle frames.

Stages: illumination-conditioned pixel skin model (:mod:`illumskin`), box
proposals (:mod:`proposals`), skin-based refinement into masked hand chips
(:mod:`refine`), HOG/PCA grasp features (:mod:`graspfeat`) and a linear SVM
(:mod:`graspclf`), plus evaluation (:mod:`evalkit`) and a CLI (:mod:`cli`).
"""
from .imagecore import ScoredBox

__version__ = "0.1.0"

__all__ = ["ScoredBox", "__version__"]
