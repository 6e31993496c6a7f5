"""
Instance and result documents.
Instance models reject unknown fields; the mode field picks the model.
"""

from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from workflow.core.iron import CostModel
from workflow.core.mech import ProductionModel

VERSION = "ironkit-1"
MODES = ("iron", "access", "goods", "contract", "sosd", "dyadic")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class AxisModel(_Strict):
    points: List[float]
    probs: List[float]


class SolveOptions(_Strict):
    tol: Optional[float] = Field(default=None, gt=0)
    max_sweeps: Optional[int] = Field(default=None, ge=1)
    phi: Optional[Literal["quadratic", "quartic"]] = None
    method: Optional[Literal["oracle", "flow"]] = None
    with_access: Optional[bool] = None
    n: Optional[int] = Field(default=None, ge=1)
    levels: Optional[List[int]] = None
    seed: Optional[int] = None
    count: Optional[int] = Field(default=None, ge=1)
    order: Optional[Literal["first", "second"]] = None


class PolynomialTerm(_Strict):
    coef: float
    powers: List[int]


class FunctionSpec(_Strict):
    """A built-in function by name (optionally for one agent) or a polynomial"""
    name: Optional[str] = None
    agent: Optional[int] = Field(default=None, ge=0)
    polynomial: Optional[List[PolynomialTerm]] = None

    @model_validator(mode="after")
    def _one_kind(self) -> "FunctionSpec":
        if (self.name is None) == (self.polynomial is None):
            raise ValueError("give exactly one of name or polynomial")
        return self

    def as_dict(self) -> Dict[str, Any]:
        return self.model_dump(exclude_none=True)


class ContinuumGoods(_Strict):
    dimension: int = Field(ge=1)
    level: int = Field(default=5, ge=1)
    values: List[FunctionSpec]
    marginal_revenues: Optional[List[FunctionSpec]] = None


class Distributions(_Strict):
    g: Any
    f: Any


class InstanceBase(_Strict):
    version: str
    name: Optional[str] = None
    axes: Optional[List[AxisModel]] = None
    options: SolveOptions = Field(default_factory=SolveOptions)

    def requires_axes(self) -> bool:
        return True


class IronInstance(InstanceBase):
    mode: Literal["iron"]
    alpha: Any
    cost: Optional[CostModel] = None


class AccessInstance(InstanceBase):
    mode: Literal["access"]
    alphas: List[Any]
    cost: Optional[CostModel] = None


class GoodsInstance(InstanceBase):
    mode: Literal["goods"]
    values: Optional[List[Any]] = None
    continuum: Optional[ContinuumGoods] = None
    marginal_revenues: Optional[List[Any]] = None
    cost: Optional[CostModel] = None

    @model_validator(mode="after")
    def _one_source(self) -> "GoodsInstance":
        if (self.values is None) == (self.continuum is None):
            raise ValueError("give exactly one of values or continuum")
        return self

    def requires_axes(self) -> bool:
        return self.continuum is None


class ContractInstance(InstanceBase):
    mode: Literal["contract"]
    costs: List[Any]
    production: ProductionModel = Field(default_factory=ProductionModel)


class SosdInstance(InstanceBase):
    mode: Literal["sosd"]
    distributions: Distributions


class DyadicInstance(InstanceBase):
    mode: Literal["dyadic"]
    function: FunctionSpec
    dimension: int = Field(ge=1)
    densities: Optional[List[List[float]]] = None

    def requires_axes(self) -> bool:
        return False


INSTANCE_MODELS = {
    "iron": IronInstance,
    "access": AccessInstance,
    "goods": GoodsInstance,
    "contract": ContractInstance,
    "sosd": SosdInstance,
    "dyadic": DyadicInstance,
}


class GridPayload(BaseModel):
    """A grid function in canonical row-major order with its shape"""
    shape: List[int]
    values: List[float]


class ResultDocument(BaseModel):
    """Final solve output"""
    version: str = VERSION
    instance_digest: str
    name: Optional[str] = None
    mode: str
    status: str
    outputs: Dict[str, Any] = Field(default_factory=dict)
    certificates: Dict[str, Any] = Field(default_factory=dict)
    diagnostics: Dict[str, Any] = Field(default_factory=dict)
    warnings: List[str] = Field(default_factory=list)
