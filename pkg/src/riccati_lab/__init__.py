"""Numerical lab for geodesic flows: Jacobi and Riccati propagation, Green bundles,
Lyapunov exponents, Ricci averages, rigidity tests and homothetic rescaling."""
from .errors import *  # noqa: F401,F403
from .models import (CATALOG, ConstantCurvatureSpace, FlatTorus, HyperbolicPlane, RoundSphere,  # noqa: F401
                     SurfaceOfRevolution, SyntheticProfile, TangentVector, build_model, random_profile)

__version__ = "0.1.0"
