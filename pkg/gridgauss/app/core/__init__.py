from .conditioning import Conditioning, PixelMask, conditional_mean, conditional_sample
from .distribution import StructuredGaussian, covariance_row, log_density, sample
from .fitting import fit, nll, nll_gradients
from .grid import CholeskyMaps, GridShape, SampleBundle, SparsityPattern, canonical_pattern
from .linops import Direction, LinearOperatorView, apply, jacobi_solve, jacobi_solve_Lt, solve_triangular
