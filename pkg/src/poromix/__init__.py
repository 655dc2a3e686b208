"""Mixed finite elements for dynamic poroelasticity with penalized stress symmetry."""

__version__ = "0.1.0"
