"""Conjugate instants of symplectic systems and their inverse construction.

Forward: a symplectic system ``X(t)`` on ``[a, b)`` gives a curve of
Lagrangian subspaces ``xi(t) = Phi_t^{-1}(L0)``; its intersections with
``L0`` are the conjugate instants, counted with multiplicity, and their
total equals the Morse index of the index form.  Backward: prescribed
conjugate data is turned into an operator curve, a Lagrangian curve, a
system and finally a conformally flat metric.
"""

__version__ = "0.1.0"

from .conjugate import (  # noqa: E402
    ConjugateReport,
    OperatorCurve,
    detect,
    isolation_check,
    morse_flow,
    truncation_study,
)
from .construct import SingularityPrescription, full_pipeline  # noqa: E402
from .errors import ConjflowError, PreconditionError, QualityError  # noqa: E402
from .linalg_core import DEFAULT_TOL, Tolerance  # noqa: E402
from .morse import discretize, index_of_form  # noqa: E402
from .system import SymplecticSystemSpec, integrate, riemannian_reduce, riemannian_system  # noqa: E402
