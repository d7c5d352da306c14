import logging

from fastapi import FastAPI

from cfr_mediation.api import router as api_router
from cfr_mediation.config import settings

# Configure logging
logging.basicConfig(level=settings.log_level.upper())
logger = logging.getLogger(__name__)

# Create FastAPI app
app = FastAPI(title="CFR mediation", version="1.0.0")

# Include query routes
app.include_router(api_router, prefix="/api")


@app.get("/")
async def root():
    """Root endpoint"""
    return {"message": "CFR mediation API is running", "docs": "/docs"}


if __name__ == "__main__":
    import uvicorn

    logger.info(f"Serving on {settings.api_host}:{settings.api_port}")
    uvicorn.run(app, host=settings.api_host, port=settings.api_port)
