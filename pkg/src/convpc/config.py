"""Architecture presets and the flat key-value run configuration."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ArchPreset:
    """Layer layout of the autoencoder.

    Architecture strings use the usual shorthand: ``C64`` is a 3x3x3
    convolution with 64 outputs, ``MP`` a 2x2x2 max-pool, ``U`` a trilinear
    x2 upsample, ``P`` the learned constant block. The last convolution of
    the encoder string uses a 2x2x2 kernel without padding.
    """

    name: str
    grid: int
    eta: int
    pointnet: tuple[int, ...]
    encoder: str
    decoder: str
    p_channels: int
    affine_sites: int
    generator: tuple[int, ...] = (64, 64, 32, 32, 16, 16, 8, 3)
    heads: tuple[int, ...] = (16, 8, 4, 2)
    gather_radius: float = math.sqrt(3.0) / 2.0
    cell_cap: int = 64
    dropout: float = 0.2

    @property
    def latent(self) -> int:
        return int(self.encoder.split("-")[-1][1:])

    @property
    def decoder_convs(self) -> list[int]:
        return [int(t[1:]) for t in self.decoder.split("-") if t.startswith("C")]

    @property
    def upsamples(self) -> int:
        return self.decoder.split("-").count("U")

    @property
    def output_grid(self) -> int:
        return 2 ** (self.upsamples + 1)

    @property
    def site_dims(self) -> list[int]:
        """Channel width of every normalization site: after P, then after each convolution."""
        return [self.p_channels] + self.decoder_convs

    @property
    def feature_width(self) -> int:
        return self.decoder_convs[-1]


PAPER = ArchPreset(
    name="paper",
    grid=32,
    eta=32,
    pointnet=(8, 16, 32, 32),
    encoder="C64-C64-C64-MP-C128-C128-MP-C256-C256-MP-C512-C512-MP-C512-C1024",
    decoder="P-C512-U-C512-C256-U-C256-C128-U-C128-C64-U-C64-C62",
    p_channels=512,
    affine_sites=3,
)

DESK = ArchPreset(
    name="desk",
    grid=8,
    eta=16,
    pointnet=(8, 16, 16, 16),
    encoder="C16-C16-MP-C32-C32-MP-C64-C128",
    decoder="P-C64-U-C64-C32-U-C30",
    p_channels=64,
    affine_sites=2,
)

PRESETS = {"paper": PAPER, "desk": DESK}


def get_preset(name: str) -> ArchPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass
class RunConfig:
    preset: str = "desk"
    seed: int = 0
    iterations: int = 2000
    batch_size: int = 4
    # AMSGrad
    lr: float = 0.0046
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # loss weights and switches
    lambda_chamfer: float = 1e3
    lambda_pnorm: float = 1e1
    lambda_density: float = 1e10
    lambda_occupancy: float = 1e2
    lambda_offset: float = 1.0
    p_exponent: float = 5.0
    offset_margin: float = math.sqrt(3.0)
    use_chamfer: bool = True
    use_pnorm: bool = True
    use_density: bool = True
    use_occupancy: bool = True
    use_offset: bool = True
    # architecture toggles
    adain: bool = True
    affine_sites: str = "default"
    dropout: float = 0.2
    occupancy_threshold: float = 0.5
    # sampling
    uv_mode: str = "lloyd"
    lloyd_iterations: int = 10
    lloyd_resolution: int = 128
    input_sampling: str = "fps"
    n_in: int = 500
    n_out: int = 500
    eval_points: int = 2500
    # data
    data: str = "synthetic"
    synthetic_kind: str = "mixed"
    shape_count: int = 8
    val_count: int = 2
    reference_points: int = 16000
    # bookkeeping
    val_every: int = 250
    dtype: str = "float64"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        get_preset(self.preset)
        if self.uv_mode not in ("random", "lloyd"):
            raise ConfigError(f"uv_mode must be 'random' or 'lloyd', got {self.uv_mode!r}")
        if self.input_sampling not in ("fps", "random"):
            raise ConfigError(f"input_sampling must be 'fps' or 'random', got {self.input_sampling!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.affine_sites not in ("default", "all"):
            try:
                int(self.affine_sites)
            except ValueError:
                raise ConfigError(f"affine_sites must be an integer, 'default' or 'all'") from None
        if self.batch_size < 1 or self.n_in < 1 or self.n_out < 1:
            raise ConfigError("batch_size, n_in and n_out must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    @property
    def arch(self) -> ArchPreset:
        preset = get_preset(self.preset)
        sites = len(preset.site_dims)
        if self.affine_sites == "default":
            n = preset.affine_sites
        elif self.affine_sites == "all":
            n = sites
        else:
            n = int(self.affine_sites)
        if not 0 <= n <= sites:
            raise ConfigError(f"affine_sites must lie in [0, {sites}] for preset {preset.name}")
        return dataclasses.replace(preset, affine_sites=n, dropout=self.dropout)

    def loss_weights(self):
        from .losses import LossWeights

        return LossWeights(
            self.lambda_chamfer, self.lambda_pnorm, self.lambda_density,
            self.lambda_occupancy, self.lambda_offset, self.p_exponent,
        )

    def enabled_terms(self) -> dict[str, bool]:
        return {
            "chamfer": self.use_chamfer,
            "pnorm": self.use_pnorm,
            "density": self.use_density,
            "occupancy": self.use_occupancy,
            "offset": self.use_offset,
        }

    # -- flat text form ----------------------------------------------------
    def dumps(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            values[key] = value
        return cls.from_strings(values)

    @classmethod
    def from_strings(cls, values: dict[str, str], base: "RunConfig | None" = None) -> "RunConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = dataclasses.asdict(base) if base is not None else {}
        for key, text in values.items():
            if key not in types:
                raise ConfigError(f"unknown configuration key {key!r}")
            kwargs[key] = _parse(key, types[key], text)
        return cls(**kwargs)

    def with_overrides(self, **overrides) -> "RunConfig":
        return dataclasses.replace(self, **overrides)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.loads(Path(path).read_text())


def _parse(key: str, type_name, text: str):
    type_name = getattr(type_name, "__name__", type_name)
    try:
        if type_name == "bool":
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if type_name == "int":
            return int(text)
        if type_name == "float":
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type_name}") from None
