"""Training ReLU feedforward networks with linear and mixed integer programs.

The package bundles a dense bounded-variable simplex solver, a
branch-and-bound layer for problems with binary variables, a small symbolic
modeling front end with LP-file export, the big-M encodings that pose weight
and input updates of a ReLU network as MILPs/LPs, and a batch trainer with a
command line interface.
"""

__version__ = "0.1.0"
