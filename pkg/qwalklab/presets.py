"""
Presets for bundled QWalkLab scenarios and library-wide defaults.
"""

from typing import Any, Dict, Tuple

# numerical defaults shared by every module, overridable through
# scenario [tolerances] sections or keyword arguments
defaults: Dict[str, Any] = {
    # relative tail increment below which a series counts as stabilized
    "CONFIG_STABILIZE_TOL": 1e-12,
    # partial sum above which a series counts as divergent
    "CONFIG_DIVERGE_THRESHOLD": 1e8,
    # number of series terms evaluated during classification
    "CONFIG_CUTOFF": 10**6,
    # margin above 1 required from the Gauss ratio estimate to accept convergence
    "CONFIG_RATIO_MARGIN": 0.05,
    # absolute window used for m(+-1) and for eigenphase clustering
    "CONFIG_CLUSTER_WINDOW": 1e-8,
    # fraction of sites treated as the tail in mass point detection
    "CONFIG_TAIL_FRACTION": 0.25,
    # tail mass below which an eigenvector counts as localized
    "CONFIG_TAIL_TOL": 1e-6,
    # eigenvalue drift allowed across truncations for a mass point
    "CONFIG_STABILITY_TOL": 1e-6,
    # norm drift tolerated during direct evolution before a warning
    "CONFIG_DRIFT_TOL": 1e-9,
    # lifted eigenvector residual above which a lift is rejected
    "CONFIG_LIFT_RESIDUAL": 1e-6,
    # tolerances for scenario checks (names match CHECK_NAMES)
    "CONFIG_CHECK_TOLERANCES": {
        "classification": 0.0,
        "lift_residual": 1e-9,
        "signed_reflected": 1e-9,
        "dimension_counts": 0.0,
        "mass_points": 1e-6,
        "closed_form": 1e-2,
        "lower_bound": 5e-3,
        "two_method": 2e-2,
        "corollary2": 2e-3,
        "corollary3": 2e-3,
        "no_localization": 1e-9,
        "support": 1e-9,
        "eta_norm": 1e-10,
    },
}

# names of checks which scenarios may request
CHECK_NAMES: Tuple[str, ...] = tuple(defaults["CONFIG_CHECK_TOLERANCES"].keys())


def _loop_variants(
    name: str, base: Dict[str, Any], recurrent: bool
) -> Dict[str, Dict[str, Any]]:
    """
    Expand one walk preset into its three loop variants:
    no loops, a loop at 0 and loops at 0 and 3.
    """

    # state orthogonal to the incidence vector at 0 once a loop sits there
    loop_state = {
        "kind": "hs_projected",
        "vertex": 0,
        "coefficients": (("O", -1.0 + 0j), ("R", 1.0 + 0j)),
    }

    return {
        name: base,
        f"{name}_one_loop": {
            **base,
            "CONFIG_LOOPS": ((0, 0.5, "right"),),
            "CONFIG_INITIAL_STATE": loop_state,
            "CONFIG_CHECKS": (
                ("classification", "support", "no_localization")
                if recurrent
                else ("classification", "support", "eta_norm", "corollary2")
            ),
        },
        f"{name}_two_loops": {
            **base,
            "CONFIG_LOOPS": ((0, 0.5, "right"), (3, 0.4, "proportional")),
            "CONFIG_INITIAL_STATE": loop_state,
            "CONFIG_CHECKS": (
                ("classification", "signed_reflected", "dimension_counts", "support")
                + (("corollary3",) if recurrent else ())
            ),
        },
    }


config: Dict[str, Dict[str, Any]] = {
    # space homogeneous walks, one per row of the recurrence table
    **_loop_variants(
        "homogeneous_pr",
        {
            "CONFIG_WALK_FAMILY": "homogeneous",
            "CONFIG_WALK_PARAMS": (0.3, 0.7),
            "CONFIG_DECLARED_CLASS": "positive_recurrent",
            "CONFIG_LOOPS": (),
            # truncation sizes, the largest is used for direct evolution
            "CONFIG_TRUNCATION": (150, 300),
            # Cesaro horizons, the largest is used for reported measures
            "CONFIG_HORIZON": (2500, 5000, 10000),
            "CONFIG_INITIAL_STATE": {"kind": "arc", "vertex": 0, "direction": "R"},
            "CONFIG_CHECKS": (
                "classification",
                "lift_residual",
                "mass_points",
                "closed_form",
                "lower_bound",
                "two_method",
            ),
        },
        recurrent=True,
    ),
    **_loop_variants(
        "homogeneous_nr",
        {
            "CONFIG_WALK_FAMILY": "homogeneous",
            "CONFIG_WALK_PARAMS": (0.5, 0.5),
            "CONFIG_DECLARED_CLASS": "null_recurrent",
            "CONFIG_LOOPS": (),
            "CONFIG_TRUNCATION": (200, 400),
            "CONFIG_HORIZON": (2500, 5000, 10000),
            "CONFIG_INITIAL_STATE": {"kind": "arc", "vertex": 0, "direction": "R"},
            "CONFIG_CHECKS": ("classification", "lift_residual", "two_method"),
        },
        recurrent=True,
    ),
    **_loop_variants(
        "homogeneous_tr",
        {
            "CONFIG_WALK_FAMILY": "homogeneous",
            "CONFIG_WALK_PARAMS": (0.7, 0.3),
            "CONFIG_DECLARED_CLASS": "transient",
            "CONFIG_LOOPS": (),
            "CONFIG_TRUNCATION": (200, 400),
            "CONFIG_HORIZON": (2500, 5000, 10000),
            "CONFIG_INITIAL_STATE": {"kind": "arc", "vertex": 0, "direction": "R"},
            "CONFIG_CHECKS": ("classification", "lift_residual", "two_method"),
        },
        recurrent=False,
    ),
    # the three birth-death examples with distinct recurrence behaviour
    **_loop_variants(
        "example_a",
        {
            "CONFIG_WALK_FAMILY": "example_a",
            "CONFIG_WALK_PARAMS": (),
            "CONFIG_DECLARED_CLASS": "transient",
            "CONFIG_LOOPS": (),
            "CONFIG_TRUNCATION": (200, 400),
            "CONFIG_HORIZON": (2500, 5000, 10000),
            "CONFIG_INITIAL_STATE": {"kind": "arc", "vertex": 0, "direction": "R"},
            "CONFIG_CHECKS": ("classification", "lift_residual", "two_method"),
        },
        recurrent=False,
    ),
    **_loop_variants(
        "example_b",
        {
            "CONFIG_WALK_FAMILY": "example_b",
            "CONFIG_WALK_PARAMS": (),
            "CONFIG_DECLARED_CLASS": "null_recurrent",
            "CONFIG_LOOPS": (),
            "CONFIG_TRUNCATION": (200, 400),
            "CONFIG_HORIZON": (2500, 5000, 10000),
            "CONFIG_INITIAL_STATE": {"kind": "arc", "vertex": 0, "direction": "R"},
            "CONFIG_CHECKS": ("classification", "lift_residual", "two_method"),
        },
        recurrent=True,
    ),
    **_loop_variants(
        "example_c",
        {
            "CONFIG_WALK_FAMILY": "example_c",
            "CONFIG_WALK_PARAMS": (),
            "CONFIG_DECLARED_CLASS": "positive_recurrent",
            "CONFIG_LOOPS": (),
            "CONFIG_TRUNCATION": (150, 300),
            "CONFIG_HORIZON": (2500, 5000, 10000),
            "CONFIG_INITIAL_STATE": {"kind": "incidence", "vertex": 0},
            "CONFIG_CHECKS": (
                "classification",
                "lift_residual",
                "lower_bound",
                "two_method",
            ),
        },
        recurrent=True,
    ),
}
