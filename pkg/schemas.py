"""
Pydantic models for parameters, reports, certificates and run manifests.

These are the JSON artifacts written by the command line and returned by the HTTP
service.
"""

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, validator

from geometry import Ball, Box, Region


class AffineParams(BaseModel):
    m: int = Field(..., ge=2, description="State dimension")
    r: float = Field(..., description="Contraction rate of S")
    s: float = Field(..., description="Translation along the first axis")
    a: float = Field(..., description="Expansion rate of T")
    v: List[float] = Field(..., description="Box halfwidths v_2..v_m")
    scale: float = Field(1.0, gt=0, description="Conjugating dilation applied by rescale")

    @validator("v")
    def validate_v(cls, v, values):
        m = values.get("m")
        if m is not None and len(v) != m - 1:
            raise ValueError(f"expected {m - 1} halfwidths, got {len(v)}")
        return v


class InequalityCheck(BaseModel):
    name: str
    lhs: float
    relation: str
    rhs: float
    slack: float
    passed: bool


class CoveringSummary(BaseModel):
    covered: bool
    spacing: float
    n_points: int
    n_uncovered: int
    witnesses: List[List[float]] = []


class ConditionReport(BaseModel):
    params: AffineParams
    checks: List[InequalityCheck]
    covering: Optional[CoveringSummary] = None
    passed: bool

    @property
    def failures(self) -> List[str]:
        names = [c.name for c in self.checks if not c.passed]
        if self.covering is not None and not self.covering.covered:
            names.append("covering")
        return names


class CoverPlan(BaseModel):
    lam: float
    dim: int
    k: int
    centers: List[List[float]]
    delta: float = 1.0
    spacing: float
    verified: bool

    @property
    def translations(self) -> List[List[float]]:
        return [[self.delta * c for c in center] for center in self.centers]


class DomainSpec(BaseModel):
    kind: str
    center: List[float]
    halfwidths: Optional[List[float]] = None
    radius: Optional[float] = None

    @classmethod
    def from_region(cls, region: Region) -> "DomainSpec":
        return cls(**region.to_dict())

    def to_region(self) -> Region:
        if self.kind == "box":
            return Box(self.halfwidths, self.center)
        return Ball(self.center, self.radius)


class HypothesisCheck(BaseModel):
    name: str
    passed: bool
    detail: Dict[str, Any] = {}


class MinimalityCertificate(BaseModel):
    domain: DomainSpec
    working_domain: Optional[DomainSpec] = None
    family: Dict[str, Any]
    lam: float
    kappa: float
    lebesgue_number: Optional[float] = None
    rho: Optional[float] = None
    delta: Optional[float] = None
    n0: Optional[int] = None
    k: Optional[int] = None
    density_radius: Optional[float] = None
    block_contraction: Optional[float] = None
    spacing: float
    hypotheses: List[HypothesisCheck]
    status: str

    @property
    def passed(self) -> bool:
        return self.status == "passed"

    def domain_region(self) -> Region:
        return self.domain.to_region()

    def working_region(self) -> Optional[Region]:
        return self.working_domain.to_region() if self.working_domain is not None else None

    def load_family(self):
        from maps import MapFamily

        return MapFamily.from_dict(self.family)

    def failed_hypotheses(self) -> List[str]:
        return [h.name for h in self.hypotheses if not h.passed]


class PhaseEntry(BaseModel):
    step: int
    case: str
    family_index: int
    letters: List[str]
    radius_bound: float


class BranchPlan(BaseModel):
    start: List[float]
    target_center: List[float]
    target_radius: float
    word: List[str]
    indices: List[int]
    start_step: int
    end_step: int
    phases: List[PhaseEntry]
    endpoints: List[List[float]]
    k: int
    n0: int
    k_r: int
    k_kappa: int
    bound: int
    pull_backs: int = 0
    slack: int = Field(0, description="Pull-backs used beyond k_kappa")
    verified: bool

    @property
    def length(self) -> int:
        return len(self.word)


class TrialOutcome(BaseModel):
    trial: int
    seed: int
    success: bool
    steps: int
    max_plan_length: int
    message: Optional[str] = None


class TrialReport(BaseModel):
    epsilon: float
    model: str
    n_trials: int
    n_success: int
    success_rate: float
    precheck_passed: bool
    precheck: Dict[str, Any]
    bound: int
    slack: float
    max_plan_length: int
    message: Optional[str] = None
    trials: List[TrialOutcome] = []


class GenerationStats(BaseModel):
    generation: int
    n_strips: int
    n_pruned: int
    max_diameter: float
    diameter_bound: float
    decay_ratio: Optional[float] = None
    covered: bool
    n_uncovered: int
    witnesses: List[List[float]] = []


class BlenderReport(BaseModel):
    window: int
    epsilon: float
    n_max: int
    spacing: float
    base_rate: float
    e_in: DomainSpec
    e_out: DomainSpec
    kappa_max: float
    inclusion_precheck: bool
    inclusion_witnesses: List[List[float]] = []
    domination: bool
    inflation: float
    generations: List[GenerationStats]
    passed: bool
    note: str = (
        "minimality of the strong unstable lamination is checked through strip density "
        "over the inner region, not leafwise"
    )
    product: Optional[Dict[str, Any]] = None


class MixingReport(BaseModel):
    u_prefix: List[int]
    v_prefix: List[int]
    n_min: int
    horizon: int
    passed: bool
    hits: List[int]
    samples: List[int]
    first_miss: Optional[int] = None
    message: Optional[str] = None


class RunConfig(BaseModel):
    command: str
    inputs: List[str] = []
    output: Optional[str] = None
    dim: Optional[int] = None
    spacing: Optional[float] = None
    tol: Optional[float] = None
    epsilon: Optional[float] = None
    seed: Optional[int] = None
    options: Dict[str, Any] = {}
    budgets: Dict[str, int] = {}


class Manifest(BaseModel):
    version: str
    config: RunConfig
    outputs: List[str] = []
    status: str
    exit_code: int
