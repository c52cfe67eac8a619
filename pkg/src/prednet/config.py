"""Architecture and loss configuration.

A config pins everything needed to rebuild a model deterministically: layer
widths, filter sizes, the per-layer and per-timestep loss weights, the pixel
ceiling, and which wiring variant to build. Configs round-trip losslessly
through JSON for checkpoints and CLI configs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

VARIANTS = (
    "prednet",
    "prednet_no_E_split",
    "encdec",
    "encdec_2x_filters",
    "encdec_pass_E0",
    "encdec_pm_split",
)

#: Variants that forward split (positive/negative) error units.
SPLIT_ERROR_VARIANTS = ("prednet", "encdec_pass_E0")


class ConfigError(ValueError):
    """Raised with a path-qualified message when a config field is invalid."""


def lambda_preset(name: str, num_layers: int) -> tuple[float, ...]:
    """Layer loss-weight presets: 'L0' puts all weight on the pixel layer,
    'Lall' adds a 0.1 weight on every upper layer."""
    if name == "L0":
        return (1.0,) + (0.0,) * (num_layers - 1)
    if name == "Lall":
        return (1.0,) + (0.1,) * (num_layers - 1)
    raise ConfigError(f"lambda_preset: unknown preset {name!r} (use 'L0' or 'Lall')")


def default_time_weights(t_steps: int) -> tuple[float, ...]:
    """Per-timestep loss weights: zero on the first step, one afterwards."""
    if t_steps < 1:
        raise ConfigError(f"time weights need t_steps >= 1, got {t_steps}")
    return (0.0,) + (1.0,) * (t_steps - 1)


@dataclass(frozen=True)
class PredNetConfig:
    """Full architectural and loss specification.

    ``channels[l]`` is the width shared by the layer's target and
    representation units; ``channels[0]`` is the image channel count.
    ``lambda_time`` of None selects the default rule (0 for the first step,
    1 after); an explicit tuple must cover every timestep it is asked for.
    """

    channels: tuple[int, ...]
    filter_size_a: int = 3
    filter_size_ahat: int = 3
    filter_size_r: int = 3
    lambda_layer: tuple[float, ...] = field(default=None)  # type: ignore[assignment]
    lambda_time: tuple[float, ...] | None = None
    p_max: float = 1.0
    variant: str = "prednet"

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.lambda_layer is None:
            object.__setattr__(
                self, "lambda_layer", lambda_preset("L0", len(self.channels))
            )
        else:
            object.__setattr__(
                self, "lambda_layer", tuple(float(v) for v in self.lambda_layer)
            )
        if self.lambda_time is not None:
            object.__setattr__(
                self, "lambda_time", tuple(float(v) for v in self.lambda_time)
            )
        self.validate()

    @property
    def num_layers(self) -> int:
        return len(self.channels)

    def validate(self) -> None:
        if len(self.channels) < 1:
            raise ConfigError("channels: need at least one layer")
        for i, c in enumerate(self.channels):
            if c < 1:
                raise ConfigError(f"channels[{i}]: must be >= 1, got {c}")
        for name in ("filter_size_a", "filter_size_ahat", "filter_size_r"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"{name}: must be a positive odd integer, got {k}")
        if len(self.lambda_layer) != self.num_layers:
            raise ConfigError(
                f"lambda_layer: expected {self.num_layers} entries, "
                f"got {len(self.lambda_layer)}"
            )
        if any(v < 0 for v in self.lambda_layer):
            raise ConfigError("lambda_layer: weights must be >= 0")
        if not any(v > 0 for v in self.lambda_layer):
            raise ConfigError("lambda_layer: at least one weight must be > 0")
        if self.p_max <= 0:
            raise ConfigError(f"p_max: must be > 0, got {self.p_max}")
        if self.variant not in VARIANTS:
            raise ConfigError(
                f"variant: unknown tag {self.variant!r}; one of {', '.join(VARIANTS)}"
            )

    def time_weights(self, t_steps: int) -> tuple[float, ...]:
        if self.lambda_time is None:
            return default_time_weights(t_steps)
        if len(self.lambda_time) < t_steps:
            raise ConfigError(
                f"lambda_time: {len(self.lambda_time)} entries cannot cover "
                f"{t_steps} timesteps"
            )
        return self.lambda_time[:t_steps]

    # -- variant-dependent widths ------------------------------------------

    def a_channels(self, layer: int) -> int:
        """Channel width of the layer's target tensor."""
        if self.variant == "encdec_2x_filters" and layer > 0:
            return 2 * self.channels[layer]
        return self.channels[layer]

    def forward_channels(self, layer: int) -> int:
        """Channel width of the tensor a layer forwards (laterally into its
        recurrent unit and upward into the next layer's target)."""
        v = self.variant
        if v == "prednet":
            return 2 * self.a_channels(layer)
        if v == "prednet_no_E_split":
            return self.a_channels(layer)
        if v in ("encdec", "encdec_2x_filters"):
            return self.a_channels(layer)
        if v == "encdec_pass_E0":
            return 2 * self.a_channels(layer) if layer == 0 else self.a_channels(layer)
        if v == "encdec_pm_split":
            return 2 * self.a_channels(layer)
        raise ConfigError(f"variant: unknown tag {v!r}")

    def lstm_in_channels(self, layer: int) -> int:
        width = self.forward_channels(layer) + self.channels[layer]
        if layer < self.num_layers - 1:
            width += self.channels[layer + 1]
        return width

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "channels": list(self.channels),
            "filter_size_a": self.filter_size_a,
            "filter_size_ahat": self.filter_size_ahat,
            "filter_size_r": self.filter_size_r,
            "lambda_layer": list(self.lambda_layer),
            "lambda_time": None if self.lambda_time is None else list(self.lambda_time),
            "p_max": self.p_max,
            "variant": self.variant,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PredNetConfig":
        known = {
            "channels",
            "filter_size_a",
            "filter_size_ahat",
            "filter_size_r",
            "lambda_layer",
            "lambda_time",
            "p_max",
            "variant",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"model: unknown keys {sorted(unknown)}")
        if "channels" not in d:
            raise ConfigError("model.channels: required")
        kwargs = dict(d)
        lt = kwargs.get("lambda_time")
        if lt is not None:
            kwargs["lambda_time"] = tuple(lt)
        ll = kwargs.get("lambda_layer")
        if isinstance(ll, str):
            kwargs["lambda_layer"] = lambda_preset(ll, len(d["channels"]))
        return cls(**kwargs)
