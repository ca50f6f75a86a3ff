"""Model configuration read from ``key=value`` files."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

MODEL_KINDS = ("treelstm", "brgcn", "convgnn", "mlp")
# axis name -> values tried by a sweep
SWEEPS = {
    "layers": tuple(range(1, 11)),
    "depth": (3, 6, 9, 12, 15, 18),
    "pooling": ("max", "avg", "sum"),
    "mcd": (True, False),
}
_BOOLS = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    model: str = "treelstm"
    layers: int = 6
    hidden: int = 64
    pooling: str = "max"
    use_mcd: bool = True
    k: int = 15
    epochs: int = 50
    lr: float = 1e-3
    seed: int = 0
    slice_follow_c: bool = True

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.pooling not in ("max", "avg", "sum"):
            raise ConfigError(f"pooling must be max, avg or sum, got {self.pooling!r}")
        for name in ("layers", "hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.k < 0 or self.epochs < 0:
            raise ConfigError("k and epochs must be >= 0")

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)

    def estimator_params(self) -> dict:
        p = {"hidden": self.hidden, "pooling": self.pooling, "epochs": self.epochs,
             "lr": self.lr, "random_state": self.seed}
        if self.model in ("brgcn", "convgnn"):
            p["layers"] = self.layers
        return p

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return "".join(f"{k}={str(v).lower() if isinstance(v, bool) else v}\n" for k, v in asdict(self).items())


def parse_config(text: str, base: ModelConfig = None) -> ModelConfig:
    """Parse ``key=value`` lines; ``#`` starts a comment, unknown keys are errors."""
    types = {f.name: f.type for f in fields(ModelConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        kind = types[key]
        try:
            if kind == "bool":
                if value.lower() not in _BOOLS:
                    raise ValueError(value)
                values[key] = _BOOLS[value.lower()]
            elif kind == "int":
                values[key] = int(value)
            elif kind == "float":
                values[key] = float(value)
            else:
                values[key] = value
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {value!r} for {key}") from None
    return replace(base or ModelConfig(), **values)


def read_config(path, base: ModelConfig = None) -> ModelConfig:
    with open(path) as fh:
        return parse_config(fh.read(), base)
