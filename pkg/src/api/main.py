import logging

from fastapi import FastAPI

from src.api.routes import enhance
from src.config import settings
from src.tensor import set_num_threads

logging.basicConfig(level=settings.log_level.upper())
logger = logging.getLogger(__name__)

app = FastAPI(
    title="LU2Net Enhancement API",
    description="Underwater image enhancement with a lightweight axial U-Net",
    version="1.0.0",
)

app.include_router(enhance.router, prefix="/v1", tags=["enhance"])


@app.on_event("startup")
def configure_threads():
    set_num_threads(settings.num_threads)
    logger.info(f"🚀 API ready with {settings.num_threads} compute thread(s)")


@app.get("/")
async def root():
    return {"message": "LU2Net Enhancement API", "status": "active"}


@app.get("/health")
async def health_check():
    return {"status": "healthy"}
