"""Built-in problems, stored as ordinary configs."""
from __future__ import annotations

import copy
import math

TWO_PI = 2 * math.pi

_BUILTINS: dict[str, dict] = {
    "logistic": {
        "kind": "semi_explicit",
        "name": "logistic",
        "description": "x' = x - y + lam cos t, 0 = y^3 + y - x^5",
        "f": ["x1 - y1"],
        "g": ["y1^3 + y1 - x1^5"],
        "h": ["cos(t)"],
        "period": TWO_PI,
        "tau_max": 0.0,
        "box": {"lower": [-3, -3], "upper": [3, 3]},
        "solver": {"step": 0.005},
    },
    "identity2": {
        "kind": "semi_explicit",
        "name": "identity2",
        "f": ["x1"],
        "g": ["y1"],
        "h": ["0"],
        "period": TWO_PI,
        "tau_max": 0.0,
        "box": {"lower": [-1, -1], "upper": [1, 1]},
    },
    "linear_test": {
        "kind": "semi_explicit",
        "name": "linear_test",
        "description": "x' = -x + lam cos t, y = x; periodic solution (cos t + sin t) lam / 2",
        "f": ["-x1"],
        "g": ["y1 - x1"],
        "h": ["cos(t)"],
        "period": TWO_PI,
        "tau_max": 0.0,
        "box": {"lower": [-2, -2], "upper": [2, 2]},
    },
    "example52": {
        "kind": "implicit",
        "name": "example52",
        "n": 3,
        "E": [[1, 1, 1], [1, 0, 0], [0, 0, 0]],
        "F": ["x2", "-x1 + x2^2 + x3", "x3^3 + x3 + x1"],
        "C": [["cos(t) + 2", "0", "0"], ["0", "1", "0"], ["0", "0", "0"]],
        "S": ["x1[-1]", "x3[-0.5]", "0"],
        "period": TWO_PI,
        "tau_max": 1.0,
        "box": {"lower": [-2, -2, -2], "upper": [2, 2, 2],
                "transformed_box": {"lower": [-2, -2, -2], "upper": [2, 2, 2]}},
    },
    "example54": {
        "kind": "implicit",
        "name": "example54",
        "n": 4,
        "E": [[0, 2, 0, 0], [1, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 1]],
        "F": ["-x1", "-x2", "x3^3 + x3 + x1", "-x4"],
        "C": [["sin(t) + 2", "0", "0", "0"], ["0", "sin(t) + 2", "0", "0"],
              ["0", "0", "0", "0"], ["0", "0", "0", "cos(t) + 3"]],
        "S": ["x1", "x2", "x3", "x4"],
        "period": TWO_PI,
        "tau_max": 0.0,
        "alignment": {
            "P": [[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]],
            "Q": [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]],
        },
    },
    "corrigendum_counterexample": {
        "kind": "implicit",
        "name": "corrigendum_counterexample",
        "n": 2,
        "E": [[0, 1], [0, 0]],
        "F": ["-x2", "x1^3 + x1"],
        "C": [["1", "0"], ["0", "0"]],
        "S": ["x1", "0"],
        "period": TWO_PI,
        "tau_max": 0.0,
        "alignment": {"P": [[1, 0], [0, 1]], "Q": [[0, 1], [1, 0]]},
    },
}

BUILTIN_NAMES = tuple(sorted([*_BUILTINS, "example52_transformed"]))


def builtin_config(name: str) -> dict:
    if name == "example52_transformed":
        from .config import build_implicit
        from .transform import semi_explicit_from_implicit

        return copy.deepcopy(semi_explicit_from_implicit(build_implicit(_BUILTINS["example52"])).source)
    return copy.deepcopy(_BUILTINS[name])


def builtin(name: str):
    """Compiled problem object for a built-in name."""
    from .config import problem_from_config

    return problem_from_config(builtin_config(name))
