from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from .api.v1.routes import router as v1_router
from .config import settings

app = FastAPI(
    title="Forge Artifacts",
    version="1.0.0",
    description="Read-only view over one archetype pipeline output directory.",
)

# artifacts are static files; nothing here writes
app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["GET"], allow_headers=["*"])
app.include_router(v1_router)


@app.get("/health")
async def health():
    root = settings.FORGE_OUTPUT_DIR
    return {"status": "ok", "artifact_root": str(root), "artifact_root_exists": root.is_dir()}
