"""Named dislocation measures used by the acceptance suite and configs."""

from .measure import DislocationMeasure

BINARY = DislocationMeasure.from_atoms([(1.0, [0.5, 0.5])])
DISSIPATIVE = DislocationMeasure.from_atoms([(1.0, [0.5, 0.25])])
# non-lattice conservative mixture
MIXTURE = DislocationMeasure.from_atoms([(0.5, [0.5, 0.5]), (0.5, [2.0 / 3.0, 1.0 / 3.0])])

CORPUS = {"binary": BINARY, "dissipative": DISSIPATIVE, "mixture": MIXTURE}
