"""Neural delay-differential-equation closure models for low-fidelity dynamics.

The package augments known-but-coarse dynamical models (reduced-order
Burgers, coarse-grid Burgers, simplified ocean ecosystems) with small neural
closure terms that may depend on delayed states, and trains them with
explicitly implemented adjoint equations.
"""

__version__ = "0.1.0"
