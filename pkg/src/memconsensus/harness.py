"""Experiment runner: configurations, sweeps, CSV/JSON output and scaling fits."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from . import __version__
from .core import (
    MIN_NODES,
    PRESETS,
    PROTOCOL_IDS,
    ProtocolError,
    derive_params,
    make_instance,
    resolve_overrides,
)
from .engine_async import AsyncSimConfig, SimResult, run_async
from .engine_sync import SyncSimConfig, run_sync
from .protocols import build_protocol

CSV_VERSION = 1
CONFIG_VERSION = 1
KIND_COLUMNS = tuple(f"comm_kind{k}" for k in range(1, 7))
CSV_COLUMNS = (
    "csv_version",
    "protocol",
    "preset",
    "n",
    "p",
    "epsilon",
    "rep",
    "majority_bit",
    "success",
    "consensus_reached",
    "communications_total",
    "n_consensus",
    "n_terminal",
    "consensus_time",
    "terminal_time",
    "consensus_censored",
    "terminal_censored",
    "states_used",
    "final_incorrect",
    "events",
    "end_time",
    "aspirant_to_expert",
) + KIND_COLUMNS + ("error",)


@dataclass(frozen=True)
class ExperimentConfig:
    """A sweep over ``n_list x p_list x repetitions`` for one protocol.

    ``overrides`` are scale factors applied on top of ``preset``.  ``horizon``
    is in time units (rounds for the synchronous protocol); ``None`` uses the
    protocol's default.
    """

    protocol_id: str
    n_list: tuple
    p_list: tuple = (0.75,)
    epsilon: float = 0.2
    seed_base: int = 0
    repetitions: int = 1
    preset: str = "desk"
    overrides: Mapping[str, float] = field(default_factory=dict)
    horizon: Optional[float] = None
    audit: bool = False
    majority_bit: int = 1
    out_csv: Optional[str] = None
    out_json: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        object.__setattr__(self, "p_list", tuple(float(p) for p in self.p_list))
        object.__setattr__(self, "overrides", dict(self.overrides))
        if self.protocol_id not in PROTOCOL_IDS:
            raise ValueError(f"unknown protocol id {self.protocol_id!r}; known: {', '.join(PROTOCOL_IDS)}")
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; known: {', '.join(PRESETS)}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if not self.n_list:
            raise ValueError("n_list is empty")
        for n in self.n_list:
            if n < MIN_NODES:
                raise ValueError(f"n must be at least {MIN_NODES}, got {n}")
        if not self.p_list:
            raise ValueError("p_list is empty")
        for p in self.p_list:
            if not 0.5 <= p <= 1.0:
                raise ValueError(f"p must lie in [1/2, 1], got {p}")
        if not 0 < self.epsilon < 0.25:
            raise ValueError(f"epsilon must lie in (0, 1/4), got {self.epsilon}")
        if self.majority_bit not in (0, 1):
            raise ValueError("majority_bit must be 0 or 1")
        if self.horizon is not None and not self.horizon > 0:
            raise ValueError("horizon must be positive")
        resolve_overrides(self.protocol_id, self.preset, self.overrides)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_list"] = list(self.n_list)
        d["p_list"] = list(self.p_list)
        d["overrides"] = dict(sorted(self.overrides.items()))
        return {"config_version": CONFIG_VERSION, **d}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ExperimentConfig":
        d = dict(d)
        version = d.pop("config_version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ValueError(f"unsupported config_version {version}")
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def scales(self) -> dict:
        """Effective scale factors: the preset overlaid with ``overrides``."""
        return resolve_overrides(self.protocol_id, self.preset, self.overrides)

    def cells(self) -> list:
        return [(n, p, rep) for n in self.n_list for p in self.p_list for rep in range(self.repetitions)]


def _stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def run_seed(seed_base: int, protocol_id: str, n: int, p: float, rep: int) -> np.random.SeedSequence:
    """Seed of one run; depends only on its coordinates, never on scheduling."""
    return np.random.SeedSequence(
        [int(seed_base) & (2**63 - 1), _stable_hash(protocol_id), int(n), _stable_hash(repr(float(p))), int(rep)]
    )


def simulate(
    protocol_id: str,
    n: int,
    p: float,
    epsilon: float,
    seed: int | np.random.SeedSequence,
    *,
    preset: str = "desk",
    overrides: Optional[Mapping[str, float]] = None,
    horizon: Optional[float] = None,
    audit: bool = False,
    majority_bit: int = 1,
    snapshot_times: Sequence[float] = (),
) -> SimResult:
    """One run.  The 3-state baseline stops once every belief is correct."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    inst_seed, engine_seed = ss.spawn(2)
    scales = resolve_overrides(protocol_id, preset, overrides)
    ps = derive_params(protocol_id, n, epsilon, scales)
    protocol = build_protocol(ps)
    instance = make_instance(n, p, inst_seed, majority_bit=majority_bit, epsilon=epsilon)
    stop = protocol_id == "baseline-3state"
    if protocol.synchronous:
        cfg = SyncSimConfig(
            seed=engine_seed,
            horizon=None if horizon is None else int(math.ceil(horizon)),
            audit=audit,
            snapshot_times=tuple(int(t) for t in snapshot_times),
            stop_when_correct=stop,
        )
        return run_sync(protocol, instance, cfg)
    cfg = AsyncSimConfig(
        seed=engine_seed,
        horizon=horizon,
        audit=audit,
        snapshot_times=tuple(snapshot_times),
        stop_when_correct=stop,
    )
    return run_async(protocol, instance, cfg)


def result_row(config: ExperimentConfig, n: int, p: float, rep: int, res: SimResult) -> dict:
    per_kind = {k: 0 for k in range(1, 7)}
    names = {v: k for k, v in res.kind_names.items()}
    for name, count in res.per_type_comm_counts.items():
        k = names.get(name)
        if k in per_kind:
            per_kind[k] = int(count)
    row = {
        "csv_version": CSV_VERSION,
        "protocol": config.protocol_id,
        "preset": config.preset,
        "n": n,
        "p": p,
        "epsilon": config.epsilon,
        "rep": rep,
        "majority_bit": res.majority_bit,
        "success": bool(res.success),
        "consensus_reached": not res.consensus_censored,
        "communications_total": res.communications_total,
        "n_consensus": res.communications_at_consensus,
        "n_terminal": res.communications_at_terminal,
        "consensus_time": res.consensus_time,
        "terminal_time": res.terminal_time,
        "consensus_censored": bool(res.consensus_censored),
        "terminal_censored": bool(res.terminal_censored),
        "states_used": None if res.states_observed is None else int(res.states_observed.shape[0]),
        "final_incorrect": res.final_incorrect_count,
        "events": res.events_processed,
        "end_time": res.end_time,
        "aspirant_to_expert": (
            int(res.kind_transitions[1, 2])
            if res.kind_names.get(1) == "aspirant" and res.kind_names.get(2) == "expert"
            else None
        ),
        "error": "",
    }
    for k in range(1, 7):
        row[f"comm_kind{k}"] = per_kind[k]
    return row


def _failed_row(config: ExperimentConfig, n: int, p: float, rep: int, err: Exception) -> dict:
    row = {c: None for c in CSV_COLUMNS}
    row.update(
        csv_version=CSV_VERSION,
        protocol=config.protocol_id,
        preset=config.preset,
        n=n,
        p=p,
        epsilon=config.epsilon,
        rep=rep,
        success=False,
        consensus_reached=False,
        consensus_censored=True,
        terminal_censored=True,
        error=f"{type(err).__name__}: {err}",
    )
    return row


def run_cell(config: ExperimentConfig, n: int, p: float, rep: int) -> dict:
    """One sweep row; hard errors become failed rows."""
    try:
        res = simulate(
            config.protocol_id,
            n,
            p,
            config.epsilon,
            run_seed(config.seed_base, config.protocol_id, n, p, rep),
            preset=config.preset,
            overrides=config.overrides,
            horizon=config.horizon,
            audit=config.audit,
            majority_bit=config.majority_bit,
        )
    except (ProtocolError, ValueError, MemoryError) as err:
        return _failed_row(config, n, p, rep, err)
    return result_row(config, n, p, rep, res)


def _run_cell_args(args) -> dict:
    config_dict, n, p, rep = args
    return run_cell(ExperimentConfig.from_dict(config_dict), n, p, rep)


def _sort_key(row: Mapping[str, Any]) -> tuple:
    return (row["protocol"], row["n"], row["p"], row["rep"])


def run_sweep(config: ExperimentConfig, workers: int = 1) -> list:
    """All rows of the sweep in canonical order; independent of ``workers``."""
    cells = config.cells()
    if workers <= 1 or len(cells) == 1:
        rows = [run_cell(config, n, p, rep) for n, p, rep in cells]
    else:
        payload = config.to_dict()
        # largest instances first keeps the pool busy until the end
        order = sorted(cells, key=lambda c: (-c[0], c[1], c[2]))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_cell_args, [(payload, n, p, rep) for n, p, rep in order]))
    return sorted(rows, key=_sort_key)


# ---------------------------------------------------------------------------
# output


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(value)


def rows_to_csv(rows: Iterable[Mapping[str, Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in CSV_COLUMNS])
    return buf.getvalue()


_INT_COLUMNS = {
    "csv_version", "n", "rep", "majority_bit", "communications_total", "n_consensus", "n_terminal",
    "states_used", "final_incorrect", "events", "aspirant_to_expert", *KIND_COLUMNS,
}
_BOOL_COLUMNS = {"success", "consensus_reached", "consensus_censored", "terminal_censored"}
_FLOAT_COLUMNS = {"p", "epsilon", "consensus_time", "terminal_time", "end_time"}


def read_csv(path: str | Path) -> list:
    """Typed rows of a sweep CSV file."""
    return parse_csv(Path(path).read_text(encoding="utf-8"))


def parse_csv(text: str) -> list:
    """Parse sweep CSV text back into typed rows."""
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError("CSV header does not match this version's column set")
    rows = []
    for raw in reader:
        row: dict = {}
        for k, v in raw.items():
            if v == "":
                row[k] = "" if k == "error" else None
            elif k in _INT_COLUMNS:
                row[k] = int(v)
            elif k in _BOOL_COLUMNS:
                row[k] = v == "1"
            elif k in _FLOAT_COLUMNS:
                row[k] = float(v)
            else:
                row[k] = v
        rows.append(row)
    return rows


def summarize(rows: Iterable[Mapping[str, Any]]) -> list:
    """Per-cell aggregates.  The success rate counts every row, failed or not."""
    groups: dict = {}
    for row in rows:
        groups.setdefault((row["protocol"], row["n"], row["p"]), []).append(row)
    out = []
    for (protocol, n, p), rs in sorted(groups.items()):
        term = [r["n_terminal"] / n for r in rs if r.get("n_terminal") is not None]
        cons = [r["n_consensus"] / n for r in rs if r.get("n_consensus") is not None]
        ttime = [r["terminal_time"] for r in rs if r.get("terminal_time") not in (None, math.inf)]
        out.append(
            {
                "protocol": protocol,
                "n": n,
                "p": p,
                "runs": len(rs),
                "success_rate": sum(bool(r["success"]) for r in rs) / len(rs),
                "consensus_rate": sum(bool(r["consensus_reached"]) for r in rs) / len(rs),
                "errors": sum(bool(r.get("error")) for r in rs),
                "mean_n_terminal_per_n": float(np.mean(term)) if term else None,
                "mean_n_consensus_per_n": float(np.mean(cons)) if cons else None,
                "mean_terminal_time": float(np.mean(ttime)) if ttime else None,
            }
        )
    return out


def sidecar(config: ExperimentConfig, rows: Sequence[Mapping[str, Any]]) -> dict:
    """Config echo, resolved constants and environment for a sweep."""
    import numba

    params = {}
    for n in config.n_list:
        ps = derive_params(config.protocol_id, n, config.epsilon, config.scales())
        params[str(n)] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in ps.as_dict().items()}
    return {
        "csv_version": CSV_VERSION,
        "csv_columns": list(CSV_COLUMNS),
        "config": config.to_dict(),
        "scales": config.scales(),
        "derived_params": params,
        "summary": summarize(rows),
        "environment": {
            "package_version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "numba": numba.__version__,
        },
    }


def write_outputs(config: ExperimentConfig, rows: Sequence[Mapping[str, Any]],
                  csv_path: Optional[str | Path] = None, json_path: Optional[str | Path] = None) -> None:
    csv_path = csv_path or config.out_csv
    json_path = json_path or config.out_json
    if csv_path is None and json_path is None:
        raise ValueError("no output path given")
    if csv_path is not None:
        Path(csv_path).write_text(rows_to_csv(rows), encoding="utf-8")
        if json_path is None:
            json_path = str(Path(csv_path).with_suffix(".json"))
    Path(json_path).write_text(json.dumps(sidecar(config, rows), indent=2, sort_keys=True, default=_json_default),
                               encoding="utf-8")


def _json_default(obj):
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Mapping):
        return dict(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# ---------------------------------------------------------------------------
# scaling fits


@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    constant: float
    residual: float  # root mean square of log2 residuals
    points: int


def fit_power_law(xs: Sequence[float], ys: Sequence[float]) -> ScalingFit:
    """Least-squares fit of ``log y = b log x + log a``."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape:
        raise ValueError("x and y differ in length")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite data")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("power-law fits need positive data")
    if np.unique(x).size < 4:
        raise ValueError("need at least 4 distinct x values")
    lx, ly = np.log2(x), np.log2(y)
    b, a = np.polyfit(lx, ly, 1)
    resid = ly - (b * lx + a)
    return ScalingFit(float(b), float(2.0**a), float(np.sqrt(np.mean(resid**2))), int(x.size))


def fit_scaling(rows: Iterable[Mapping[str, Any]], x: str = "n", y: str = "n_terminal") -> ScalingFit:
    """Power-law fit of column ``y`` against ``x`` over rows where ``y`` is finite.

    Censored runs carry no value for ``y`` and are left out; their share is
    visible through the success rate.
    """
    xs, ys = [], []
    for r in rows:
        v = r.get(y)
        if v is None or (isinstance(v, float) and not math.isfinite(v)):
            continue
        xs.append(float(r[x]))
        ys.append(float(v))
    return fit_power_law(xs, ys)


__all__ = [
    "CSV_COLUMNS",
    "CSV_VERSION",
    "ExperimentConfig",
    "ScalingFit",
    "fit_power_law",
    "fit_scaling",
    "parse_csv",
    "read_csv",
    "result_row",
    "rows_to_csv",
    "run_cell",
    "run_seed",
    "run_sweep",
    "sidecar",
    "simulate",
    "summarize",
    "write_outputs",
]
