"""Discrete adjoint sensitivity analysis for explicit Runge-Kutta solvers."""
