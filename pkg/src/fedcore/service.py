"""HTTP face of the core: typed endpoints plus the raw RPC envelope.

POST /rpc takes ``{"id": n, "method": "...", "params": {...}}`` and always
answers a canonical-JSON envelope with the matching id, even for garbage
input, so request/response transcripts replay byte-for-byte.  The /v1
routes expose the same methods with validated request/response models.
"""

from __future__ import annotations

import json
from contextlib import asynccontextmanager
from typing import Optional

import click
import uvicorn
from fastapi import FastAPI, HTTPException, Request, Response
from pydantic import BaseModel, Field

from .config import Config, load_config
from .core import CoreService
from .errors import CoreError
from .model import canonical_dumps


class RpcRequest(BaseModel):
    id: int = 0
    method: str
    params: dict = Field(default_factory=dict)


class RpcError(BaseModel):
    code: int
    message: str
    data: Optional[object] = None


class RpcResponse(BaseModel):
    id: int
    result: Optional[object] = None
    error: Optional[RpcError] = None


class DiscoverRequest(BaseModel):
    experiment: dict


class CandidateMapModel(BaseModel):
    watermark: int
    entries: dict[str, list[str]]


class RealizeRequest(BaseModel):
    id: str
    experiment: dict
    engine: Optional[str] = None
    seed: int = 0
    max_nodes_expanded: int = 500_000
    max_ms: int = 30_000


class RealizationModel(BaseModel):
    experiment: str
    node_map: dict[str, str]
    link_map: dict[str, list[str]]
    watermark: int
    status: str


class ExperimentRef(BaseModel):
    id: str


class ReserveResult(BaseModel):
    id: str
    status: str


class MaterializeResult(BaseModel):
    entries: int


class StatusResult(BaseModel):
    state: str
    progress: Optional[dict] = None
    errors: Optional[list] = None
    forced: Optional[bool] = None


class CommissionRequest(BaseModel):
    site: str
    network: dict
    endpoint: Optional[str] = None
    mechanisms: Optional[list[str]] = None


class CommissionResult(BaseModel):
    uuids: list[str]


class DecommissionRequest(BaseModel):
    site: str
    mode: str = "simple"
    nodes: list[str] = Field(default_factory=list)
    replacement: Optional[dict] = None
    force: bool = False


class OkResult(BaseModel):
    ok: bool = True


class SiteInfo(BaseModel):
    id: str
    endpoint: str
    mechanisms: list[str]
    nodes: int
    links: int


class SitesResult(BaseModel):
    sites: list[SiteInfo]


class ExperimentInfo(BaseModel):
    id: str
    phase: str


class ExperimentsResult(BaseModel):
    experiments: list[ExperimentInfo]


class AgentsRunRequest(BaseModel):
    max_steps: int = 10_000


class StepsResult(BaseModel):
    steps: int


def _http_error(e: CoreError) -> HTTPException:
    detail: dict = {"code": e.code, "message": e.message}
    if e.data is not None:
        detail["data"] = e.data
    return HTTPException(status_code=e.code, detail=detail)


def create_app(config: Config | None = None, core: CoreService | None = None) -> FastAPI:
    owns_core = core is None
    core = core or CoreService(config)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if core.config.agent_autostart and core.config.agents > 0:
            core.start_agents()
        yield
        core.stop_agents()
        if owns_core:
            core.close()

    app = FastAPI(title="fedcore", lifespan=lifespan)
    app.state.core = core

    def invoke(method: str, params: dict):
        try:
            return core.call(method, params)
        except CoreError as e:
            raise _http_error(e)

    @app.post("/rpc")
    async def rpc(request: Request) -> Response:
        raw = await request.body()
        try:
            req = json.loads(raw)
        except ValueError:
            body = {"id": 0, "error": {"code": 400, "message": "malformed request body"}}
            return Response(canonical_dumps(body), media_type="application/json")
        if not isinstance(req, dict) or "method" not in req:
            req_id = req.get("id", 0) if isinstance(req, dict) else 0
            body = {"id": req_id, "error": {"code": 400, "message": "request must carry id and method"}}
            return Response(canonical_dumps(body), media_type="application/json")
        req_id = req.get("id", 0)
        params = req.get("params") or {}
        try:
            result = core.call(req["method"], params)
            body = {"id": req_id, "result": result}
        except CoreError as e:
            body = {"id": req_id, "error": e.envelope()}
        except Exception as e:
            body = {"id": req_id, "error": {"code": 500, "message": f"internal: {e}"}}
        return Response(canonical_dumps(body), media_type="application/json")

    @app.get("/healthz")
    def healthz() -> OkResult:
        return OkResult()

    @app.post("/v1/discover", response_model=CandidateMapModel)
    def discover(req: DiscoverRequest):
        return invoke("discover", req.model_dump())

    @app.post("/v1/realize", response_model=RealizationModel)
    def realize(req: RealizeRequest):
        return invoke("realize", req.model_dump())

    @app.post("/v1/reserve", response_model=ReserveResult)
    def reserve(req: ExperimentRef):
        return invoke("reserve", req.model_dump())

    @app.post("/v1/materialize", response_model=MaterializeResult)
    def materialize(req: ExperimentRef):
        return invoke("materialize", req.model_dump())

    @app.post("/v1/dematerialize", response_model=ReserveResult)
    def dematerialize(req: ExperimentRef):
        return invoke("dematerialize", req.model_dump())

    @app.get("/v1/experiments/{experiment_id}/status", response_model=StatusResult)
    def status(experiment_id: str):
        return invoke("status", {"id": experiment_id})

    @app.post("/v1/commission", response_model=CommissionResult)
    def commission(req: CommissionRequest):
        return invoke("commission", req.model_dump())

    @app.post("/v1/decommission", response_model=OkResult)
    def decommission(req: DecommissionRequest):
        return invoke("decommission", req.model_dump())

    @app.get("/v1/sites", response_model=SitesResult)
    def sites():
        return invoke("sites.list", {})

    @app.get("/v1/experiments", response_model=ExperimentsResult)
    def experiments():
        return invoke("experiments.list", {})

    @app.post("/v1/agents/run", response_model=StepsResult)
    def agents_run(req: AgentsRunRequest):
        return invoke("agents.run", req.model_dump())

    return app


@click.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--listen", default=None, help="host:port override")
@click.option("--journal", default=None, help="journal file path override")
@click.option("--agents", type=int, default=None)
@click.option("--seed", type=int, default=None)
def main(config_path, listen, journal, agents, seed):
    """Run the federation core service."""
    cfg = load_config(config_path)
    if listen:
        host, port = listen.rsplit(":", 1)
        cfg.listen_host, cfg.listen_port = host, int(port)
    if journal:
        cfg.journal = journal
    if agents is not None:
        cfg.agents = agents
    if seed is not None:
        cfg.seed = seed
    app = create_app(cfg)
    uvicorn.run(app, host=cfg.listen_host, port=cfg.listen_port, log_level="warning")


if __name__ == "__main__":
    main()
