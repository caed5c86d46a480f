"""Two-grid deflated Krylov solvers."""
