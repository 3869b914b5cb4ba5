"""Three falling balls on a floor: dynamics, tangent cocycle, cone field and wedge geometry."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("wedgefall")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"
