from dataclasses import dataclass
from functools import lru_cache
from io import BytesIO
from typing import Dict, List

from fastapi import Depends, FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import StreamingResponse
from pydantic import BaseModel, Field

from Backend.WaveformEngine.cwkg_store import CwkgStore, load
from Backend.WaveformEngine.ere import mode_names
from Backend.WaveformEngine.errors import WavePilotError
from Backend.WaveformEngine.model import WaveformRecommender, load_model
from Backend.WaveformEngine.recommend import recommend as run_recommend
from Backend.WaveformEngine.settings import configure_logging, get_settings
from Backend.WaveformEngine.synthlab import waveform_spec_from_store
from Backend.pdf_generator import generate_recommendation_pdf


# ---------------------------------------------------------------------------
# Logging setup
# ---------------------------------------------------------------------------

logger = configure_logging()


# ---------------------------------------------------------------------------
# FastAPI app setup
# ---------------------------------------------------------------------------

app = FastAPI(
    title="WavePilot API",
    description="Waveform recommendation for composite communication environments.",
    version="1.0.0",
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


# ---------------------------------------------------------------------------
# Pydantic models
# ---------------------------------------------------------------------------

class RecommendRequest(BaseModel):
    environment: Dict[str, str]
    top_k: int = Field(5, ge=1)


class RankedWaveform(BaseModel):
    rank: int
    waveform_id: str
    probability: float
    score: float
    summary: str = ""


class RecommendResponse(BaseModel):
    mode: str
    seed: int
    waveform_count: int
    recommendations: List[RankedWaveform]
    warnings: List[str] | None = None


# ---------------------------------------------------------------------------
# Service
# ---------------------------------------------------------------------------

@dataclass
class RecommenderService:
    store: CwkgStore
    model: WaveformRecommender


@lru_cache(maxsize=1)
def _load_service() -> RecommenderService:
    settings = get_settings()
    if settings.kg_path is None or settings.checkpoint_dir is None:
        raise RuntimeError("WAVEPILOT_KG_PATH and WAVEPILOT_CHECKPOINT_DIR must both be set.")
    store = load(settings.kg_path)
    model = load_model(settings.checkpoint_dir, store)
    logger.info("API loaded kg=%s checkpoint=%s", settings.kg_path, settings.checkpoint_dir)
    return RecommenderService(store, model)


def get_service() -> RecommenderService:
    try:
        return _load_service()
    except RuntimeError as exc:
        raise HTTPException(status_code=503, detail=str(exc)) from exc
    except WavePilotError as exc:
        logger.error("API could not load model: %s", exc.message)
        raise HTTPException(status_code=503, detail=exc.to_dict()) from exc


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _summary(store: CwkgStore, waveform_id: str) -> str:
    try:
        spec = waveform_spec_from_store(store, waveform_id)
    except WavePilotError:
        return ""
    extras = [name for name, on in (("suppression", spec.jamming_suppression), ("soft demod", spec.soft_demodulation)) if on]
    parts = [spec.modulation, f"{spec.coding_type} {spec.coding_rate}", spec.crc, f"{spec.supported_rate_bps / 1e6:g} Mbps"]
    return ", ".join(parts + extras)


def _build_response(request: RecommendRequest, service: RecommenderService) -> RecommendResponse:
    model = service.model
    warnings: List[str] = []
    top_k = request.top_k
    if top_k > len(model.waveform_ids):
        warnings.append(f"top_k {top_k} exceeds {len(model.waveform_ids)} waveforms; clamped.")
        top_k = len(model.waveform_ids)

    logger.info("RECOMMEND request: features=%s top_k=%d", sorted(request.environment), top_k)
    try:
        ranked = run_recommend(request.environment, model, service.store, top_k)
    except WavePilotError as exc:
        logger.info(
            "RECOMMEND %s: subject=%s invalid=%s",
            type(exc).__name__,
            exc.subject,
            exc.invalid_value,
        )
        raise HTTPException(status_code=422, detail=exc.to_dict()) from exc

    return RecommendResponse(
        mode=model.config.resolved_mode,
        seed=model.config.seed,
        waveform_count=len(model.waveform_ids),
        recommendations=[
            RankedWaveform(
                rank=r.rank,
                waveform_id=r.waveform_id,
                probability=r.probability,
                score=r.score,
                summary=_summary(service.store, r.waveform_id),
            )
            for r in ranked
        ],
        warnings=warnings or None,
    )


# ---------------------------------------------------------------------------
# Routes
# ---------------------------------------------------------------------------

@app.get("/health")
async def health() -> Dict[str, str]:
    return {"status": "ok"}


@app.get("/modes")
async def modes() -> Dict[str, List[str]]:
    return {"modes": mode_names()}


@app.post("/recommend", response_model=RecommendResponse)
def recommend(request: RecommendRequest, service: RecommenderService = Depends(get_service)) -> RecommendResponse:
    """
    Rank all known waveforms for the described environment.
    Feature values may be unseen (a new JSR level, a new rate); no retraining happens.
    """
    return _build_response(request, service)


@app.post("/recommend-pdf")
def recommend_pdf(request: RecommendRequest, service: RecommenderService = Depends(get_service)) -> StreamingResponse:
    response = _build_response(request, service)
    pdf_bytes = generate_recommendation_pdf(
        environment=request.environment,
        recommendations=[r.model_dump() for r in response.recommendations],
        model_info={"mode": response.mode, "seed": str(response.seed)},
    )
    return StreamingResponse(
        BytesIO(pdf_bytes),
        media_type="application/pdf",
        headers={"Content-Disposition": 'inline; filename="wavepilot_recommendation.pdf"'},
    )


def reset_service_cache() -> None:
    """Drop the cached model (tests, or after retraining into the same directory)."""
    _load_service.cache_clear()
