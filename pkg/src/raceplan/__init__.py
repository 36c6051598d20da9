"""Hierarchical overtaking planner with a closed-loop racing simulator.

The package is organized as a pipeline:

``track``
    Frenet ribbon geometry: spine arc length, curvature, lateral bounds.
``vehicle``
    Point-mass model on the ribbon and the speed-dependent acceleration
    envelope (gg-diagram).
``behavior``
    Discrete side selection: progress variants, spatio-temporal visibility
    graphs, A* search, and a dynamic feasibility check.
``envelope``
    Converts a side decision into OCP constraints: a sampled lateral
    corridor plus, when overtaking is impossible, a moving wall.
``ocp``
    Time-optimal trajectory refinement by trapezoidal collocation over
    arc length, solved with the in-house SQP method in ``sqp``.
``sim``
    Closed-loop world, planner strategies (hierarchical, pseudo-parallel,
    fixed side), and the Monte Carlo benchmark harness.
``cli``
    Command-line front end (``raceplan plan|sim|bench|plot``).
"""

__version__ = "0.1.0"
