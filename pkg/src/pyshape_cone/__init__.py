# pylint: disable=useless-import-alias
from .cones import ConcaveMultivariate as ConcaveMultivariate
from .cones import Concave1D as Concave1D
from .cones import ConeSpec as ConeSpec
from .cones import Convex1D as Convex1D
from .cones import ConvexMultivariate as ConvexMultivariate
from .cones import Direction as Direction
from .cones import Intersection as Intersection
from .cones import Monotone as Monotone
from .cones import Nonnegative as Nonnegative
from .cones import PointwiseNonnegative as PointwiseNonnegative
from .cones import Slutsky as Slutsky
from .cones import Supermodular as Supermodular
from .cones import intersect as intersect
from .cones import project as project
from .grid import FunctionGrid as FunctionGrid
from .grid import Grid as Grid
from .grid import l2_norm as l2_norm
from .grid import make_grid as make_grid
from .sieve import BasisSpec as BasisSpec
from .sieve import Dataset as Dataset
from .sieve import SieveBasis as SieveBasis
from .testing import TestConfig as TestConfig
from .testing import TestReport as TestReport
