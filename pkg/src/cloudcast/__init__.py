"""Short-term forecasting of cloud-optical-depth images.

Pipeline: estimate optical flow between consecutive COD images, assimilate
the flow snapshots into a 2D incompressible Navier-Stokes model by an
adjoint-gradient L-BFGS fit, then advect the latest image forward with a
nodal discontinuous-Galerkin transport solver.
"""

__version__ = "0.1.0"
