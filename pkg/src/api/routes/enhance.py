import logging
import time

from fastapi import APIRouter, Depends, HTTPException, Request, Response, status
from starlette.concurrency import run_in_threadpool

from src.api.middleware import error_detail, get_network
from src.config import settings
from src.data.image_io import decode_image, encode_png
from src.errors import DecodeError, LU2NetError
from src.model.network import Network, count_flops, count_params, enhance_image
from src.schemas import ModelSummary

router = APIRouter()
logger = logging.getLogger(__name__)


@router.get("/model", response_model=ModelSummary)
def get_model(net: Network = Depends(get_network)):
    report = count_flops(net, 256, 256)
    return ModelSummary(
        network=net.config,
        params=count_params(net),
        macs_256=report.macs,
        gflops_256=report.flops_2op / 1e9,
        divisor=net.config.divisor,
        weights=settings.api_weights or None,
    )


def _enhance_bytes(net: Network, data: bytes) -> tuple:
    img = decode_image(data)
    started = time.perf_counter()
    out = enhance_image(net, img)
    elapsed_ms = (time.perf_counter() - started) * 1000.0
    return encode_png(out), elapsed_ms, img.shape


@router.post(
    "/enhance",
    response_class=Response,
    responses={200: {"content": {"image/png": {}}}},
)
async def enhance(request: Request, net: Network = Depends(get_network)):
    """Enhance one PNG or binary PPM sent as the raw request body; replies with a PNG."""
    declared = request.headers.get("content-length")
    if declared and declared.isdigit() and int(declared) > settings.max_upload_bytes:
        raise HTTPException(
            status_code=status.HTTP_413_REQUEST_ENTITY_TOO_LARGE,
            detail=error_detail("PAYLOAD_TOO_LARGE", f"upload exceeds {settings.max_upload_bytes} bytes"),
        )
    data = await request.body()
    if len(data) > settings.max_upload_bytes:
        raise HTTPException(
            status_code=status.HTTP_413_REQUEST_ENTITY_TOO_LARGE,
            detail=error_detail("PAYLOAD_TOO_LARGE", f"upload exceeds {settings.max_upload_bytes} bytes"),
        )
    if not data:
        raise HTTPException(
            status_code=status.HTTP_400_BAD_REQUEST,
            detail=error_detail("EMPTY_BODY", "send PNG or PPM bytes as the request body"),
        )

    try:
        png, elapsed_ms, shape = await run_in_threadpool(_enhance_bytes, net, data)
    except DecodeError as e:
        raise HTTPException(
            status_code=status.HTTP_400_BAD_REQUEST,
            detail=error_detail("INVALID_IMAGE", e.reason),
        )
    except LU2NetError as e:
        logger.error(f"❌ Enhancement failed: {e}")
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail=error_detail("ENHANCE_FAILED", str(e)),
        )

    logger.info(f"Enhanced {shape[1]}x{shape[0]} upload in {elapsed_ms:.1f} ms")
    return Response(
        content=png,
        media_type="image/png",
        headers={"X-Inference-Ms": f"{elapsed_ms:.3f}"},
    )
