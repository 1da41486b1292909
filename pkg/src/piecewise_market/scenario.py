"""Scenario files: schema validation and construction of models and portfolios."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .market import EventLaw, MarketModel
from .ustate import TimeGrid

BATTERIES = ("numeraire", "log_optimality", "deflator", "supermartingale",
             "clock_invariance", "structural", "open_market", "refine")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridSpec(_Strict):
    horizon: float = Field(1.0, gt=0)
    steps: int = Field(256, ge=1)


class EventSpec(_Strict):
    scheduled: list[tuple[float, Literal["entry", "exit", "split", "merge"]]] = []
    p_entry: float = Field(0.0, ge=0, le=1)
    p_exit: float = Field(0.0, ge=0, le=1)
    p_split: float = Field(0.0, ge=0, le=1)
    p_merge: float = Field(0.0, ge=0, le=1)
    ipo: Literal["fixed", "lognormal", "relative"] = "fixed"
    ipo_a: float = 1.0
    ipo_b: float = 0.0


class MarketSpec(_Strict):
    kind: Literal["gbm", "mean_reverting", "constant"] = "gbm"
    scheme: Literal["log", "euler"] = "log"
    initial_prices: list[float]
    drift: list[float]
    cov: list[list[float]]
    kappa: float = 0.0
    theta: Optional[list[float]] = None
    events: EventSpec = EventSpec()


class PortfolioSpec(_Strict):
    """A portfolio under test.

    ``constant`` weights are indexed by asset id; ``unit`` holds one asset
    id; ``equal`` splits ``leverage`` over the live assets; ``rank`` puts
    ``rank_weights`` (default equal) on the top ``top_m`` ranks; ``table``
    gives one weight row per grid step by position.
    """

    name: str
    type: Literal["money_market", "constant", "unit", "equal", "numeraire", "rank", "table"]
    weights: Optional[list[float]] = None
    asset: Optional[int] = None
    leverage: float = 1.0
    top_m: Optional[int] = Field(None, ge=1)
    rank_weights: Optional[list[float]] = None
    table: Optional[list[list[float]]] = None

    @model_validator(mode="after")
    def _fields_for_type(self):
        need = {"constant": "weights", "unit": "asset", "rank": "top_m", "table": "table"}
        key = need.get(self.type)
        if key is not None and getattr(self, key) is None:
            raise ValueError(f"portfolio type {self.type!r} requires field {key!r}")
        return self


class DeflatorSpec(_Strict):
    kind: Literal["rademacher", "gaussian"] = "rademacher"
    scale: float = Field(0.5, ge=0)


class RefineSpec(_Strict):
    steps: list[int] = [32, 64, 128, 256, 512]
    n_paths: int = Field(200, ge=2)


class TreeRef(_Strict):
    file: str


class Scenario(_Strict):
    name: str = "scenario"
    grid: GridSpec = GridSpec()
    n_paths: int = Field(1000, ge=1)
    seed: int = Field(0, ge=0)
    clock_mode: Literal["calendar", "paper"] = "calendar"
    market: MarketSpec
    portfolios: list[PortfolioSpec] = []
    top_m: Optional[int] = Field(None, ge=1)
    trees: dict[str, TreeRef] = {}
    battery: list[Literal[BATTERIES]] = ["numeraire", "log_optimality"]
    checkpoints: list[float] = [1.0]
    deflator: DeflatorSpec = DeflatorSpec()
    refine: Optional[RefineSpec] = None
    output: Optional[str] = None

    def build_model(self) -> MarketModel:
        m = self.market
        ev = EventLaw(scheduled=[tuple(x) for x in m.events.scheduled], p_entry=m.events.p_entry,
                      p_exit=m.events.p_exit, p_split=m.events.p_split,
                      p_merge=m.events.p_merge, ipo=m.events.ipo, ipo_a=m.events.ipo_a,
                      ipo_b=m.events.ipo_b)
        return MarketModel(m.initial_prices, m.drift, m.cov, kind=m.kind, scheme=m.scheme,
                           kappa=m.kappa, theta=m.theta, events=ev)

    def build_grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.grid.horizon, self.grid.steps)

    def checkpoint_indices(self, grid: TimeGrid) -> list[int]:
        return [grid.index_of(t, tol=1e-9) for t in self.checkpoints]


def bundled_names() -> list[str]:
    root = resources.files("piecewise_market") / "data"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_path(ref: str) -> Path:
    """A filesystem path, or the name of a bundled fixture."""
    p = Path(ref)
    if p.exists():
        return p
    name = ref[:-5] if ref.endswith(".json") else ref
    bundled = resources.files("piecewise_market") / "data" / f"{name}.json"
    if bundled.is_file():
        return Path(str(bundled))
    raise FileNotFoundError(f"no scenario or fixture named {ref!r}")


def load_json(ref: str) -> dict:
    return json.loads(resolve_path(ref).read_text())


def load_scenario(ref: str) -> Scenario:
    return Scenario.model_validate(load_json(ref))


def portfolio_weights(spec: PortfolioSpec, ens, rho=None, ranks=None) -> np.ndarray:
    """Step weights (P, J, W) of a portfolio specification on an ensemble."""
    ids = ens.step_ids()
    live = ens.step_live()
    P, J, W = ids.shape
    if spec.type == "money_market":
        w = np.zeros((P, J, W))
    elif spec.type == "constant":
        table = np.asarray(spec.weights, float)
        safe = np.clip(ids, 0, None)
        w = np.where(ids < table.size, table[np.minimum(safe, table.size - 1)], 0.0)
    elif spec.type == "unit":
        w = (ids == spec.asset).astype(float)
    elif spec.type == "equal":
        w = np.broadcast_to(spec.leverage / ens.step_dims()[..., None], (P, J, W)).copy()
    elif spec.type == "numeraire":
        if rho is None:
            raise ValueError("numeraire weights are not available")
        w = rho.copy()
    elif spec.type == "rank":
        if ranks is None:
            from .openmarket import rank_process
            ranks = rank_process(ens.step_left(), ens.step_dims())
        rw = np.asarray(spec.rank_weights if spec.rank_weights is not None
                        else [1.0 / spec.top_m] * spec.top_m, float)
        if rw.size != spec.top_m:
            raise ValueError("rank_weights must have top_m entries")
        pos = np.clip(ranks - 1, 0, spec.top_m - 1)
        w = np.where(ranks <= spec.top_m, rw[pos], 0.0)
    elif spec.type == "table":
        tab = np.asarray(spec.table, float)
        if tab.shape[0] != J:
            raise ValueError(f"table needs {J} rows, one per step")
        w = np.zeros((P, J, W))
        k = min(W, tab.shape[1])
        w[..., :k] = tab[None, :, :k]
    else:  # pragma: no cover - guarded by the schema
        raise ValueError(spec.type)
    return np.where(live, w, 0.0)
