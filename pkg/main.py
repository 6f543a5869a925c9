from contextlib import asynccontextmanager

from fastapi import FastAPI

from config import VERSION, configure_logging
from database import init_db
from routers import api, runs


@asynccontextmanager
async def lifespan(app: FastAPI):
    # Startup
    configure_logging()
    init_db()
    yield


app = FastAPI(
    title="IFS Minimality Service",
    description="Construction, minimality certificates, dense branches and symbolic blender checks for iterated function systems",
    version=VERSION,
    lifespan=lifespan,
)

app.include_router(api.router, tags=["Computations"])
app.include_router(runs.router, tags=["Run Ledger"])


@app.get("/health")
async def health_check():
    """Application health check"""
    return {
        "status": "healthy",
        "application": "IFS Minimality Service",
        "version": VERSION,
    }


if __name__ == "__main__":
    import uvicorn

    print("🚀 Starting IFS Minimality Service")
    print("🔌 API Documentation: http://localhost:8000/docs")

    uvicorn.run(
        "main:app",
        host="0.0.0.0",
        port=8000,
        reload=True,
        log_level="info",
    )
