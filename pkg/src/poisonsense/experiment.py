"""End-to-end scenario: hypotheses, clustering, allocation sweep and simulated sensing.

Every stage reads the artifacts of the previous one from the output
directory and writes its own, so stages can be re-run independently.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .allocation import Allocation, DifferenceMatrix, difference_matrix, evaluate, solve_lexicographic
from .attacks import AttackType, attack_rng, attacks_from_json, attacks_to_json, make_zone_attack_types, sample_attack
from .clustering import choose_n_c, pair_sets
from .costs import bpr_cost
from .network import Network, generate_routes, parse_tntp
from .partition import Partition, load_partition, synth_partition
from .posterior import Observation, likelihood_weights, post_sensing_routing, sensed_links
from .routing import best_response_flow, system_optimal_flow

log = logging.getLogger(__name__)

STAGES = ("ingest", "routes", "attacks", "best-responses", "cluster", "diffmatrix", "allocate", "simulate", "report")

# stream tags for attack_rng keys
_ATTACK_STREAM = 1
_RANDOM_ALLOC_STREAM = 2


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


@dataclass
class ScenarioConfig:
    net_file: str
    trips_file: str
    node_file: str | None = None
    od_pairs: list[list[int]] | None = None
    od_top: int | None = 2
    k_routes: int = 4
    partition_file: str | None = None
    partition_groups: int | None = None
    partition_seed: int = 0
    mean_scale: float = 30.0
    rel_std: float = 0.1
    ambient_ratio: float = 0.5
    hypothesis_f_hat: str | list[float] = "max"
    epsilon: float | None = None
    epsilon_rel: float = 0.01
    n_c_max: int | None = None
    restarts: int = 32
    budgets: list[float] = field(default_factory=lambda: [27.0, 9.0, 5.0])
    trials: int = 1
    seed: int = 0
    tol: float = 1e-8
    max_iter: int = 10_000
    out: str = "results"
    jobs: int = 1
    base_dir: str = "."

    def __post_init__(self):
        if not self.budgets:
            raise ValueError("budget list must be nonempty")
        if any(g < 0 for g in self.budgets):
            raise ValueError("budgets must be nonnegative")
        for name in ("k_routes", "mean_scale", "rel_std", "ambient_ratio", "epsilon_rel", "restarts", "trials", "tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.partition_file is None and self.partition_groups is None:
            raise ValueError("need partition_file or partition_groups")

    @classmethod
    def from_file(cls, path: str | os.PathLike, **overrides) -> ScenarioConfig:
        path = Path(path)
        data = json.loads(path.read_text())
        data.setdefault("base_dir", str(path.parent))
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)

    def resolve(self, p: str | None) -> Path | None:
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def out_dir(self) -> Path:
        return self.resolve(self.out)

    def digest(self) -> str:
        d = asdict(self)
        for k in ("out", "jobs", "base_dir"):
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True, eq=False)
class EvaluationRecord:
    budget: float
    type_id: int
    kind: str
    trial: int
    realized_cost: float
    objective: float
    alpha: float
    selected: tuple[int, ...]
    converged: bool
    convex: bool

    FIELDS = ("budget", "type_id", "kind", "trial", "realized_cost", "objective", "alpha", "selected", "converged", "convex")

    def row(self) -> list:
        return [
            repr(float(self.budget)), self.type_id, self.kind, self.trial,
            repr(float(self.realized_cost)), repr(float(self.objective)), repr(float(self.alpha)),
            " ".join(map(str, self.selected)), int(self.converged), int(self.convex),
        ]


# --------------------------------------------------------------------------
# building blocks


def evaluate_true_cost(network: Network, y, f_true) -> float:
    """Total BPR cost of planner flow ``y`` under the real ambient flow."""
    y = np.asarray(y, dtype=float)
    return float(np.sum(y * bpr_cost(y, f_true, network.b, network.w, network.c)))


def random_allocation_baseline(
    partition: Partition, q, gamma: float, seed: int | np.random.Generator, M: np.ndarray | None = None
) -> Allocation:
    """Shuffle groups, then add each one that still fits the budget."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    q = np.asarray(q, dtype=float)
    x = [0] * partition.n_groups
    rem = gamma
    for g in rng.permutation(partition.n_groups):
        if q[g] <= rem:
            x[g] = 1
            rem -= q[g]
    if M is not None:
        return evaluate(M, q, x)
    return Allocation(tuple(x), np.zeros(0), float("nan"), float("nan"), float(np.dot(q, x)))


def hypothesis_f_hat(rule, f: np.ndarray, types: Sequence[AttackType]) -> np.ndarray:
    """Reported flow used when computing best responses to each hypothesis.

    ``"max"`` adds the largest attack mean on each link, which keeps every
    hypothesis consistent with the report (attack mean never above it).
    ``"mean"`` adds the average attack mean. A list is used verbatim.
    """
    mus = np.array([t.mu for t in types])
    if isinstance(rule, str):
        if rule == "max":
            return f + mus.max(axis=0)
        if rule == "mean":
            return f + mus.mean(axis=0)
        raise ValueError(f"unknown hypothesis_f_hat rule {rule!r}")
    return np.asarray(rule, dtype=float)


def simulate_trial(
    network: Network,
    types: Sequence[AttackType],
    alloc: Allocation,
    partition: Partition,
    f_true: np.ndarray,
    a: np.ndarray,
    tol: float,
    max_iter: int,
):
    """Sense ``a`` on the allocated groups, weight hypotheses and route; returns (solution, true cost)."""
    f_hat = f_true + a
    E = sensed_links(alloc, partition)
    obs = Observation.of(E, a)
    omega = likelihood_weights(obs, types)
    sol = post_sensing_routing(network, f_hat, obs, omega, types, tol=tol, max_iter=max_iter, allow_nonconvex=True)
    return sol, evaluate_true_cost(network, sol.y, f_true)


# --------------------------------------------------------------------------
# artifacts


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _json_text(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _load_network(out: Path, name: str) -> Network:
    return Network.from_dict(json.loads((out / name).read_text()))


def _load_partition(out: Path, network: Network) -> Partition:
    with open(out / "partition.csv") as fh:
        return load_partition(fh, network)


def _load_types(out: Path) -> list[AttackType]:
    with open(out / "attacks.json") as fh:
        return attacks_from_json(fh)


def _load_allocations(out: Path) -> dict[float, Allocation]:
    res = {}
    with open(out / "allocations.csv") as fh:
        for row in csv.DictReader(fh):
            res[float(row["budget"])] = row
    return res


# --------------------------------------------------------------------------
# stages


def stage_ingest(cfg: ScenarioConfig):
    out = cfg.out_dir
    node = cfg.resolve(cfg.node_file)
    with open(cfg.resolve(cfg.net_file)) as nf, open(cfg.resolve(cfg.trips_file)) as tf:
        nodes = open(node) if node else None
        try:
            net = parse_tntp(nf, tf, nodes)
        finally:
            if nodes:
                nodes.close()
    pairs = cfg.od_pairs if cfg.od_pairs is not None else (net.top_od_pairs(cfg.od_top) if cfg.od_top else None)
    if pairs is not None:
        net = net.restrict_ods([tuple(p) for p in pairs])
    log.info("ingest: %d nodes, %d links, %d OD pairs", net.n_nodes, net.n_links, net.n_od)
    _write(out / "network.json", _json_text(net.to_dict()))


def stage_routes(cfg: ScenarioConfig):
    out = cfg.out_dir
    net = generate_routes(_load_network(out, "network.json"), cfg.k_routes)
    _write(out / "routed_network.json", _json_text(net.to_dict()))
    rows = [[r, net.route_od[r], " ".join(map(str, links))] for r, links in enumerate(net.routes)]
    _write(out / "routes.csv", _csv_text(["route_id", "od_index", "links"], rows))
    log.info("routes: %d routes", net.n_routes)


def stage_attacks(cfg: ScenarioConfig):
    out = cfg.out_dir
    net = _load_network(out, "routed_network.json")
    if cfg.partition_file:
        with open(cfg.resolve(cfg.partition_file)) as fh:
            part = load_partition(fh, net)
    else:
        part = synth_partition(net, cfg.partition_groups, seed=cfg.partition_seed)
    buf = io.StringIO()
    part.write_csv(buf)
    _write(out / "partition.csv", buf.getvalue())
    types = make_zone_attack_types(part, net.c, cfg.mean_scale, cfg.rel_std)
    buf = io.StringIO()
    attacks_to_json(types, buf)
    _write(out / "attacks.json", buf.getvalue() + "\n")
    log.info("attacks: %d groups, %d attack types", part.n_groups, len(types))


def _best_response_task(args):
    net, t, f_hat, tol, max_iter, allow_nonconvex = args
    return best_response_flow(net, t, f_hat, tol=tol, max_iter=max_iter, allow_nonconvex=allow_nonconvex)


def _map(fn, tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, tasks))
    return [fn(t) for t in tasks]


def stage_best_responses(cfg: ScenarioConfig):
    out = cfg.out_dir
    net = _load_network(out, "routed_network.json")
    types = _load_types(out)
    f = cfg.ambient_ratio * net.c
    f_hat = hypothesis_f_hat(cfg.hypothesis_f_hat, f, types)
    allow = cfg.hypothesis_f_hat != "max"
    sols = _map(_best_response_task, [(net, t, f_hat, cfg.tol, cfg.max_iter, allow) for t in types], cfg.jobs)
    rows = [[t.id, r, repr(float(v))] for t, s in zip(types, sols) for r, v in enumerate(s.z)]
    _write(out / "best_responses.csv", _csv_text(["type_id", "route_id", "flow"], rows))
    _write(out / "best_responses.json", _json_text({
        "f_hat": [float(v) for v in f_hat],
        "solutions": {str(t.id): s.to_dict() for t, s in zip(types, sols)},
    }))
    bad = [t.id for t, s in zip(types, sols) if not s.converged]
    if bad:
        log.warning("best responses did not reach tolerance for types %s", bad)


def _read_best_responses(out: Path, n_types: int) -> np.ndarray:
    with open(out / "best_responses.csv") as fh:
        rows = list(csv.DictReader(fh))
    n_r = 1 + max(int(r["route_id"]) for r in rows)
    Z = np.zeros((n_types, n_r))
    for r in rows:
        Z[int(r["type_id"]), int(r["route_id"])] = float(r["flow"])
    return Z


def stage_cluster(cfg: ScenarioConfig):
    out = cfg.out_dir
    net = _load_network(out, "routed_network.json")
    types = _load_types(out)
    Z = _read_best_responses(out, len(types))
    eps = cfg.epsilon if cfg.epsilon is not None else cfg.epsilon_rel * float(np.sum(net.d))
    try:
        model = choose_n_c(Z, eps, cfg.n_c_max or len(types), restarts=cfg.restarts, seed=cfg.seed)
    except ValueError as e:
        raise StageError("cluster", str(e)) from e
    ps = pair_sets(model, len(types))
    data = model.to_dict()
    data["P"] = [list(p) for p in ps.P]
    data["Q"] = [list(p) for p in ps.Q]
    _write(out / "clusters.json", _json_text(data))
    log.info("cluster: n_c=%d, |P|=%d (epsilon=%g)", model.n_c, len(ps.P), eps)


def stage_diffmatrix(cfg: ScenarioConfig):
    out = cfg.out_dir
    net = _load_network(out, "routed_network.json")
    part = _load_partition(out, net)
    types = _load_types(out)
    P = [tuple(p) for p in json.loads((out / "clusters.json").read_text())["P"]]
    if not P:
        raise StageError("diffmatrix", "all attack types fell into one cluster; there is nothing to distinguish")
    dm = difference_matrix(types, part, P)
    buf = io.StringIO()
    dm.write_csv(buf)
    _write(out / "diffmatrix.csv", buf.getvalue())


def stage_allocate(cfg: ScenarioConfig):
    out = cfg.out_dir
    net = _load_network(out, "routed_network.json")
    part = _load_partition(out, net)
    with open(out / "diffmatrix.csv") as fh:
        dm = DifferenceMatrix.read_csv(fh)
    rows = []
    for g in cfg.budgets:
        a = solve_lexicographic(dm.M, part.q, g)
        rows.append([repr(float(g)), "".join(map(str, a.x)), " ".join(map(str, a.selected)),
                     repr(a.alpha), repr(a.avg), repr(a.cost)])
        log.info("allocate: budget %g -> groups %s (alpha %.4g)", g, a.selected, a.alpha)
    _write(out / "allocations.csv", _csv_text(["budget", "x", "selected", "alpha", "avg", "cost"], rows))


def _simulate_task(args):
    net, types, part, M, q, budget, b_index, x_opt, t_id, trials, f_true, seed, tol, max_iter = args
    q = np.asarray(q)
    opt = evaluate(M, q, x_opt)
    records = []
    true_type = types[t_id]
    for k in range(trials):
        a = sample_attack(true_type, attack_rng(seed, _ATTACK_STREAM, t_id, k))
        rnd = random_allocation_baseline(part, q, budget, attack_rng(seed, _RANDOM_ALLOC_STREAM, b_index, t_id, k), M)
        for kind, alloc in (("optimized", opt), ("random", rnd)):
            sol, cost = simulate_trial(net, types, alloc, part, f_true, a, tol, max_iter)
            records.append(EvaluationRecord(budget, true_type.id, kind, k, cost, sol.objective, alloc.alpha,
                                            alloc.selected, sol.converged, sol.convex))
    return records


def stage_simulate(cfg: ScenarioConfig):
    out = cfg.out_dir
    net = _load_network(out, "routed_network.json")
    part = _load_partition(out, net)
    types = _load_types(out)
    with open(out / "diffmatrix.csv") as fh:
        dm = DifferenceMatrix.read_csv(fh)
    allocs = _load_allocations(out)
    f_true = cfg.ambient_ratio * net.c
    tasks = []
    for bi, g in enumerate(cfg.budgets):
        x_opt = tuple(int(ch) for ch in allocs[float(g)]["x"])
        for t in range(len(types)):
            tasks.append((net, types, part, dm.M, part.q, float(g), bi, x_opt, t, cfg.trials, f_true,
                          cfg.seed, cfg.tol, cfg.max_iter))
    records = [r for chunk in _map(_simulate_task, tasks, cfg.jobs) for r in chunk]
    records.sort(key=lambda r: (cfg.budgets.index(r.budget), r.type_id, r.kind, r.trial))

    # full-information reference: true ambient flow known on every link
    full = system_optimal_flow(net, f_true, tol=cfg.tol, max_iter=cfg.max_iter)
    full_cost = evaluate_true_cost(net, full.y, f_true)
    _write(out / "evaluations.csv", _csv_text(EvaluationRecord.FIELDS, [r.row() for r in records]))
    _write(out / "full_information.json", _json_text({"realized_cost": full_cost, "objective": full.objective}))


def stage_report(cfg: ScenarioConfig) -> list[dict]:
    out = cfg.out_dir
    with open(out / "evaluations.csv") as fh:
        rows = list(csv.DictReader(fh))
    full = json.loads((out / "full_information.json").read_text())
    summary = []
    for g in cfg.budgets:
        for kind in ("optimized", "random"):
            sel = [r for r in rows if float(r["budget"]) == float(g) and r["kind"] == kind]
            cost = np.array([float(r["realized_cost"]) for r in sel])
            obj = np.array([float(r["objective"]) for r in sel])
            summary.append({
                "budget": float(g), "kind": kind, "n": len(sel),
                "mean_objective": float(obj.mean()), "mean_realized_cost": float(cost.mean()),
                "min_realized_cost": float(cost.min()), "max_realized_cost": float(cost.max()),
                "full_information_cost": full["realized_cost"],
            })
    header = list(summary[0])
    _write(out / "report.csv", _csv_text(header, [[s[h] if not isinstance(s[h], float) else repr(s[h]) for h in header] for s in summary]))
    return summary


_STAGE_FUNCS = {
    "ingest": stage_ingest,
    "routes": stage_routes,
    "attacks": stage_attacks,
    "best-responses": stage_best_responses,
    "cluster": stage_cluster,
    "diffmatrix": stage_diffmatrix,
    "allocate": stage_allocate,
    "simulate": stage_simulate,
    "report": stage_report,
}


def write_manifest(cfg: ScenarioConfig, stages: Sequence[str]):
    out = cfg.out_dir
    path = out / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {}
    if manifest.get("config_sha256") != cfg.digest():
        manifest = {"config_sha256": cfg.digest(), "seed": cfg.seed, "version": __version__, "stages": {}}
    for s in stages:
        manifest["stages"][s] = __version__
    manifest["artifacts"] = sorted(p.name for p in out.iterdir() if p.name != "manifest.json")
    _write(path, _json_text(manifest))


def run_stage(cfg: ScenarioConfig, stage: str):
    if stage not in _STAGE_FUNCS:
        raise ValueError(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")
    try:
        result = _STAGE_FUNCS[stage](cfg)
    except StageError:
        raise
    except (OSError, ValueError, KeyError) as e:
        raise StageError(stage, f"{type(e).__name__}: {e}") from e
    write_manifest(cfg, [stage])
    return result


def run_pipeline(cfg: ScenarioConfig, stages: Sequence[str] = STAGES) -> list[dict]:
    """Run ``stages`` in order; returns the report summary when the report stage runs."""
    summary = []
    for s in stages:
        res = run_stage(cfg, s)
        if s == "report":
            summary = res
    return summary
