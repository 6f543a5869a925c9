from typing import Any, Callable, Dict, List, Optional

import numpy as np
from fastapi import APIRouter, Depends, HTTPException
from pydantic import BaseModel, Field
from sqlalchemy.orm import Session

from affine_construction import box_B, check_conditions, construction_family, find_parameters
from config import VERSION
from database import get_db
from errors import IFSError, UsageError
from geometry import Ball
from maps import FamilySequence, MapFamily
from minimality import certify, dense_branch
from models import record_run
from schemas import (
    AffineParams,
    BlenderReport,
    BranchPlan,
    ConditionReport,
    DomainSpec,
    Manifest,
    MinimalityCertificate,
    MixingReport,
    RunConfig,
)
from symbolic import Cylinder, SkewProduct, blender_verify, mixing_probe, perturbed_product, skew_product_from_certificate

router = APIRouter()


class ConstructRequest(BaseModel):
    dim: int = Field(..., ge=2, le=8, description="State dimension m")
    max_contraction: Optional[float] = Field(None, gt=0, description="Cap on a·r; default tries the cap ladder")
    spacing: Optional[float] = Field(None, gt=0, description="Covering grid spacing")


class CheckRequest(BaseModel):
    params: AffineParams
    covering: bool = Field(False, description="Also run the grid covering oracle")
    spacing: Optional[float] = Field(None, gt=0)


class CertifyRequest(BaseModel):
    params: Optional[AffineParams] = Field(None, description="Certify the S, S∘T pair on its box")
    family: Optional[Dict[str, Any]] = Field(None, description="Or any family JSON, with a domain")
    domain: Optional[DomainSpec] = None
    spacing: Optional[float] = Field(None, gt=0)
    max_word_length: int = Field(20, ge=1, le=30)


class BranchRequest(BaseModel):
    certificate: MinimalityCertificate
    start: Optional[List[float]] = None
    target_center: List[float]
    target_radius: float = Field(..., gt=0)
    epsilon: float = Field(0.0, ge=0)
    model: str = Field("affine", pattern="^(affine|bump)$")
    seed: int = 0
    start_step: int = Field(0, ge=0)


class BlenderRequest(BaseModel):
    certificate: Optional[MinimalityCertificate] = None
    product: Optional[Dict[str, Any]] = None
    window: int = Field(1, ge=1, le=5)
    epsilon: float = Field(0.0, ge=0)
    model: str = Field("affine", pattern="^(affine|bump)$")
    seed: int = 0
    n_max: int = Field(40, ge=1, le=60)
    spacing: float = Field(0.02, gt=0)
    base_rate: float = Field(2.0, gt=1)
    strip_budget: int = Field(2 ** 20, ge=1)


class MixRequest(BaseModel):
    product: Dict[str, Any]
    u: str = Field(..., description="prefix:c1,...,cm,radius")
    v: str = Field(..., description="prefix:c1,...,cm,radius")
    n_min: int = Field(30, ge=0)
    horizon: int = Field(60, ge=0)
    seed: int = 0
    max_samples: int = Field(65536, ge=2048)


def _run(db: Session, command: str, request: BaseModel, compute: Callable[[], BaseModel], passed: Callable[[Any], bool]):
    """Run one computation, record it in the ledger and map library errors to HTTP errors"""
    config = RunConfig(command=command, options=request.model_dump(exclude={"certificate", "product", "family"}))
    try:
        result = compute()
    except IFSError as e:
        status_code = 400 if isinstance(e, UsageError) else 422
        manifest = Manifest(version=VERSION, config=config, status="error", exit_code=e.exit_code)
        record_run(command, "error", e.exit_code, manifest.model_dump(), e.to_diagnostic(), db=db)
        raise HTTPException(status_code=status_code, detail=e.to_diagnostic())
    ok = passed(result)
    exit_code = 0 if ok else 1
    status = "passed" if ok else "failed"
    manifest = Manifest(version=VERSION, config=config, status=status, exit_code=exit_code)
    record_run(command, status, exit_code, manifest.model_dump(), {"passed": ok}, db=db)
    return result


@router.post("/api/construct", response_model=AffineParams)
def construct(request: ConstructRequest, db: Session = Depends(get_db)):
    """Search parameters of the S, S∘T pair in dimension m"""
    return _run(
        db, "construct", request,
        lambda: find_parameters(request.dim, request.max_contraction, request.spacing),
        lambda _: True,
    )


@router.post("/api/check", response_model=ConditionReport)
def check(request: CheckRequest, db: Session = Depends(get_db)):
    """Evaluate every construction inequality with its slack"""
    return _run(
        db, "check", request,
        lambda: check_conditions(request.params, request.spacing, covering=request.covering),
        lambda report: report.passed,
    )


def _certify(request: CertifyRequest) -> MinimalityCertificate:
    if request.params is not None:
        family, domain = construction_family(request.params), box_B(request.params)
    elif request.family is not None:
        family, domain = MapFamily.from_dict(request.family), None
    else:
        raise UsageError("send either params or family")
    if request.domain is not None:
        domain = request.domain.to_region()
    if domain is None:
        raise UsageError("a family needs a domain")
    return certify(family, domain, request.spacing, request.max_word_length)


@router.post("/api/certify", response_model=MinimalityCertificate)
def certify_family(request: CertifyRequest, db: Session = Depends(get_db)):
    """Minimality certificate of a family on a domain"""
    return _run(db, "certify", request, lambda: _certify(request), lambda cert: cert.passed)


def _branch(request: BranchRequest) -> BranchPlan:
    cert = request.certificate
    domain = cert.domain_region()
    seq = FamilySequence(cert.load_family(), request.epsilon, request.model, request.seed, domain)
    start = np.array(request.start) if request.start is not None else domain.center
    target = Ball(request.target_center, request.target_radius)
    return dense_branch(start, target, seq, cert, request.start_step, seed=request.seed)


@router.post("/api/branch", response_model=BranchPlan)
def branch(request: BranchRequest, db: Session = Depends(get_db)):
    """Word sending the certified domain into a target ball"""
    return _run(db, "branch", request, lambda: _branch(request), lambda plan: plan.verified)


def _blender(request: BlenderRequest) -> BlenderReport:
    if request.product is not None:
        product = SkewProduct.from_dict(request.product)
    elif request.certificate is not None:
        product = skew_product_from_certificate(request.certificate)
    else:
        raise UsageError("send either a certificate or a product")
    if request.window > 1 or request.epsilon > 0:
        product = perturbed_product(product, request.window, request.epsilon, request.seed, request.model)
    return blender_verify(product, request.n_max, request.spacing, request.base_rate, request.strip_budget)


@router.post("/api/blender", response_model=BlenderReport)
def blender(request: BlenderRequest, db: Session = Depends(get_db)):
    """Strip refinement check of a skew product"""
    return _run(db, "blender", request, lambda: _blender(request), lambda report: report.passed)


def _mix(request: MixRequest) -> MixingReport:
    product = SkewProduct.from_dict(request.product)
    u = Cylinder.parse(request.u, product.k)
    v = Cylinder.parse(request.v, product.k)
    return mixing_probe(product, u, v, request.n_min, request.horizon, request.seed, request.max_samples)


@router.post("/api/mix", response_model=MixingReport)
def mix(request: MixRequest, db: Session = Depends(get_db)):
    """Topological mixing probe between two cylinders"""
    return _run(db, "mix", request, lambda: _mix(request), lambda report: report.passed)
