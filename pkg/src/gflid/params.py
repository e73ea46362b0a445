"""Per-unit model constants for the grid-following converter on an infinite bus."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace


class DegenerateNetworkError(ValueError):
    """The line/filter admittances do not define a solvable grid node."""


@dataclass(frozen=True)
class ModelParams:
    # network and LCL filter, pu
    x_line: float = 0.0020625
    r_line: float = 0.0
    l_f: float = 0.009
    r_f: float = 0.016
    c_f: float = 2.5
    l_g: float = 0.002
    r_g: float = 0.003
    # base and infinite bus
    omega_b: float = 2.0 * math.pi * 60.0
    omega_s: float = 1.0
    v2_mag: float = 1.0
    theta2: float = 0.0
    # PLL
    l_lp: float = 500.0
    kp_pll: float = 0.2
    ki_pll: float = 5.0
    # outer power loops
    omega_z: float = 2.0 * math.pi * 10.0
    omega_f: float = 2.0 * math.pi * 10.0
    kp_p: float = 2.0
    ki_p: float = 40.0
    kp_q: float = 2.0
    ki_q: float = 40.0
    # inner current loop; k_ffv < 1 makes the converter leg damp the filter
    # capacitor / grid-leg resonance, which is unstable for k_ffv in [0, 1]
    kp_c: float = 0.1
    ki_c: float = 5.0
    k_ffv: float = -2.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ValueError(f"model.{f.name} must be a finite number, got {v!r}")
        for name in ("l_f", "c_f", "l_g", "omega_b", "v2_mag"):
            if getattr(self, name) <= 0:
                raise ValueError(f"model.{name} must be > 0")
        for name in ("r_f", "r_g", "x_line", "r_line"):
            if getattr(self, name) < 0:
                raise ValueError(f"model.{name} must be >= 0")

    # -- derived network quantities -------------------------------------------------

    @property
    def v2(self) -> complex:
        return complex(self.v2_mag * math.cos(self.theta2), self.v2_mag * math.sin(self.theta2))

    @property
    def y_line(self) -> complex:
        z = complex(self.r_line, self.x_line)
        if z == 0:
            raise DegenerateNetworkError("line impedance r_line + j*x_line is zero")
        return 1.0 / z

    @property
    def y_filt(self) -> complex:
        return 1.0 / complex(self.r_g, self.omega_s * self.l_g)

    def admittances(self) -> dict[str, float]:
        """G/B entries of the two-branch network around the grid node."""
        y1, yf = self.y_line, self.y_filt
        return {
            "G11": y1.real, "B11": y1.imag,
            "G12": -y1.real, "B12": -y1.imag,
            "Gff": yf.real, "Bff": yf.imag,
            "G1f": -yf.real, "B1f": -yf.imag,
        }

    def node_coefficients(self) -> tuple[complex, complex]:
        """Return (a, b) with v_grid = a + b * v_filt."""
        y1, yf = self.y_line, self.y_filt
        ysum = y1 + yf
        if abs(ysum) < 1e-12 * abs(y1):
            raise DegenerateNetworkError(f"|Y1 + Yf| = {abs(ysum):.3e} is singular")
        return self.v2 * y1 / ysum, yf / ysum

    # -- serialization ---------------------------------------------------------------

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown model keys: {', '.join(unknown)}")
        vals = {}
        for k, v in d.items():
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ValueError(f"{k} must be a number, got {v!r}")
            vals[k] = float(v)
        return cls(**vals)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        return cls.from_dict(json.loads(text))

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def gains(self) -> dict[str, float]:
        keys = ("l_lp", "kp_pll", "ki_pll", "omega_z", "omega_f", "kp_p", "ki_p",
                "kp_q", "ki_q", "kp_c", "ki_c", "k_ffv")
        return {k: getattr(self, k) for k in keys}
