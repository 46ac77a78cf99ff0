"""Built-in desk-scale scenarios, addressable by name from the command line."""
from __future__ import annotations

from .dynamics import Scenario, scenario_from_text

_COMMON = """
[scenario]
name = {name}
dim = 1
horizon = 0.15
grid_u = -1; 0; 1
grid_v = -0.5; 0; 0.5
initial = {initial}
"""

PRESETS = {
    "split_linear": _COMMON.format(name="split_linear", initial="0.1; 0.3") + """
[dynamics]
name = split_linear
drift = 0.0

[payoff]
name = w2_to_target
target = 0.5
""",
    "pursuit_circle": _COMMON.format(name="pursuit_circle", initial="0.2; 0.6") + """
[dynamics]
name = pursuit_circle
target_gain = 1.0
mean_gain = 0.5
start = 0.5
speed = 1.0

[payoff]
name = w2_to_target
target = 0.0
""",
    "barycenter": _COMMON.format(name="barycenter", initial="0.1; 0.45") + """
[dynamics]
name = barycenter_attraction
kappa = 1.0

[payoff]
name = spread
""",
    "bilinear": _COMMON.format(name="bilinear", initial="0.2; 0.6").replace(
        "grid_u = -1; 0; 1", "grid_u = -1; 1").replace("grid_v = -0.5; 0; 0.5", "grid_v = -1; 1") + """
[dynamics]
name = bilinear

[payoff]
name = w2_to_target
target = 0.5
""",
    "still": """
[scenario]
name = still
dim = 1
horizon = 0.15
grid_u = -1; 1
grid_v = -1; 1
initial = 0.3

[dynamics]
name = zero

[payoff]
name = w2_to_target
target = 0.0
""",
}

# the three presets used for the extremal-shift and value-iteration studies
STUDY_PRESETS = ("split_linear", "pursuit_circle", "barycenter")


def preset_text(name: str) -> str:
    return PRESETS[name].lstrip()


def load_preset(name: str) -> Scenario:
    return scenario_from_text(preset_text(name), name)
