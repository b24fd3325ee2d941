"""Simulation and characterization toolkit for stretchable organic FETs.

Modules:
  model     compact DC device model, capacitances, strain response
  extract   parameter extraction and model fitting from measured sweeps
  netlist   circuit description parsing, flattening and serialization
  engine    nodal analysis: operating point, DC sweep, transient
  analyses  circuit-level studies: VTC, oscillators, logic, Monte Carlo
  cli       command-line entry points
"""

__version__ = "0.1.0"
