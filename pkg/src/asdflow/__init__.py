"""Self-dual variational toolkit: anti-selfdual Lagrangians, zero-action path
solvers for Hamiltonian boundary problems and multiparameter gradient flows."""

__version__ = "0.1.0"
