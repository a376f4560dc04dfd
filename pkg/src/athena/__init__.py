"""athena: an ensemble-of-weak-defenses robustness workbench.

Build transformation-trained weak defenses over a shared dataset, combine
them with voting or averaging strategies, attack the result under
zero-knowledge, black-box, gray-box, and white-box threat models, and
reproduce the evaluation protocols at desk scale.
"""

__version__ = "0.1.0"

from . import attacks, core, datasets, ensemble, evaluation, models, transforms
from .core import Dataset, Image, Label, Perturbation

__all__ = [
    "Dataset", "Image", "Label", "Perturbation", "attacks", "core",
    "datasets", "ensemble", "evaluation", "models", "transforms",
    "__version__",
]
