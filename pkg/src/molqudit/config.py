"""Run configuration: one YAML file with nested, strictly validated sections."""

from __future__ import annotations

import hashlib
import json
import math
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SpinBlock(_Strict):
    A_par: float = -898.0
    A_perp: float = -615.0
    p: float = -66.0
    g_x: float = 2.9
    g_y: float = 2.9
    g_z: float = 4.3
    g_I: float = -0.2592
    temperature: float = Field(1.4, gt=0)


class FieldBlock(_Strict):
    """Static field magnitudes (T) per experiment along a shared direction."""

    direction: tuple[float, float, float] = (1.0, 0.0, 0.0)
    spectrum: float = Field(0.22, ge=0, le=1)
    calibration: float = Field(0.22, ge=0, le=1)
    qtm: float = Field(0.12, ge=0, le=1)
    tim: float = Field(0.22, ge=0, le=1)
    fine_tune: bool = False

    @field_validator("direction")
    @classmethod
    def _nonzero(cls, v):
        if math.hypot(*v) == 0:
            raise ValueError("field direction must be non-zero")
        return v


class DephasingBlock(_Strict):
    t2_single: float = Field(8.0, gt=0)
    t2_double: float = Field(1.2, gt=0)
    t2_triple: float = Field(0.7, gt=0)
    outside_rate: Optional[float] = Field(None, ge=0)
    t1: float = Field(200.0, gt=0)
    t1_in_simulations: bool = False
    sigma_rel: float = Field(0.03, ge=0)
    samples: int = Field(24, ge=1)
    seed: int = 1234


class HardwareBlock(_Strict):
    b1_qtm: float = Field(1e-4, gt=0)
    b1_tim: float = Field(5e-4, gt=0)
    b1_calibration: float = Field(5e-4, gt=0)
    echo_delay: float = Field(1.5, ge=0)


class SpectrumBlock(_Strict):
    fwhm: float = Field(0.5, gt=0)
    step: float = Field(0.02, gt=0)
    temperature: Optional[float] = Field(None, gt=0)


class CalibrationBlock(_Strict):
    points: int = Field(25, ge=5)
    span: float = Field(3.0, gt=0)
    rabi_max: float = Field(3.0, gt=0)
    rabi_points: int = Field(61, ge=6)


class QtmBlock(_Strict):
    D: float = 2.0
    E: float = 0.2
    t_max: float = Field(10.0, gt=0)
    points: int = Field(41, ge=2)
    compile_time: float = Field(1.0, ge=0)


class TimBlock(_Strict):
    b: float = 1.0
    J: float = 1.0
    n: int = Field(2, ge=1)
    bt_max: float = Field(7.0, gt=0)
    points: int = Field(36, ge=2)
    compile_time: float = Field(5.0, ge=0)

    @field_validator("b")
    @classmethod
    def _b_nonzero(cls, v):
        if v == 0:
            raise ValueError("b must be non-zero (time axis is 2 pi b t)")
        return v


class OutputBlock(_Strict):
    dir: str = "out"


Backend = Literal["ideal", "lindblad", "lindblad-ensemble", "exact-target"]


class RunConfig(_Strict):
    spin: SpinBlock = SpinBlock()
    field: FieldBlock = FieldBlock()
    dephasing: DephasingBlock = DephasingBlock()
    hardware: HardwareBlock = HardwareBlock()
    backend: Backend = "lindblad"
    spectrum: SpectrumBlock = SpectrumBlock()
    calibration: CalibrationBlock = CalibrationBlock()
    qtm: QtmBlock = QtmBlock()
    tim: TimBlock = TimBlock()
    output: OutputBlock = OutputBlock()

    def to_yaml(self) -> str:
        return yaml.safe_dump(_plain(self.model_dump()), sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str) -> "RunConfig":
        data = yaml.safe_load(text)
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ValueError("config must be a mapping of sections")
        return cls.model_validate(data)

    def digest(self) -> str:
        blob = json.dumps(_plain(self.model_dump()), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def updated(self, section: str, **values) -> "RunConfig":
        block = getattr(self, section).model_copy(update=values)
        return self.model_copy(update={section: type(getattr(self, section)).model_validate(block.model_dump())})


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj
