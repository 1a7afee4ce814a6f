"""Experiment orchestration: runs, sweeps, metareasoner training, exports.

Every artifact on disk is reproducible from (config, seed list): all
randomness derives from the master seed through counter-based splits, the
config is copied verbatim into the output directory, and CSV/JSON writers
are deterministic. Run-level parallelism only; a single writer merges
results.
"""

from __future__ import annotations

import csv
import json
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dqn, meta, nn
from .config import (
    ConfigError, build_run_config, load_config, master_seed, resolve_seeds,
)
from .dqn import DqnAgent, EpsilonSchedule, ReplayBuffer
from .dyna import DivergenceError, RunConfig, RunResult, run_training
from .envs import Transition
from .meta import (
    MetaController, RolloutController, ScheduleController, ScriptedController,
    StaticController, train_metareasoner,
)
from .seeding import RUN_NAMESPACE, derive_seed

PHASE_CSV_COLUMNS = [
    "run_id", "phase", "K", "J", "return_error", "length_error",
    "eval_score", "wall_ms",
]
CURVE_CSV_COLUMNS = ["phase", "mean_eval", "std_eval", "mean_K", "std_K"]


class CheckpointError(RuntimeError):
    pass


def build_controller(spec: dict, k_max: int = 32) -> RolloutController:
    kind = spec["type"]
    if kind == "static":
        return StaticController(spec["k"], k_max)
    if kind in ("inc", "dec", "inc_dec"):
        return ScheduleController(kind)
    if kind == "scripted":
        return ScriptedController(spec["ks"])
    if kind == "meta":
        path = spec.get("checkpoint")
        if not path:
            raise ConfigError("meta controller requires a 'checkpoint' path")
        agent = load_meta_agent(Path(path))
        return MetaController(agent, epsilon=0.0)
    raise ConfigError(f"unknown controller type {kind!r}")


def _execute_run(args: tuple[dict, dict, int]) -> dict:
    """Worker entry: one full run from plain data, for process pools."""
    doc, controller_spec, user_seed = args
    run_cfg = build_run_config(doc, derive_seed(master_seed(doc), RUN_NAMESPACE, user_seed))
    controller = build_controller(controller_spec, run_cfg.k_max)
    result = run_training(run_cfg, controller)
    out = result.to_json()
    out["user_seed"] = user_seed
    return out


def _run_many(doc: dict, controller_spec: dict, seeds: list[int], jobs: int) -> list[dict]:
    tasks = [(doc, controller_spec, s) for s in seeds]
    if jobs <= 1 or len(tasks) == 1:
        return [_execute_run(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_execute_run, tasks))


def _phase_rows(result_doc: dict) -> list[list]:
    run_id = f"{result_doc['label']}_s{result_doc['user_seed']}"
    rows = []
    for p in result_doc["phases"]:
        rows.append([
            run_id, p["phase"], p["k"], p["quality"], p["return_error"],
            p["length_error"], p["eval_score"], p["wall_ms"],
        ])
    return rows


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _prepare_out(config_path: Path, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(config_path, out_dir / "config.json")


def cmd_run(config_path: Path, out_dir: Path | None, jobs: int | None) -> int:
    doc = load_config(config_path)
    if "controller" not in doc:
        raise ConfigError("'run' requires a 'controller' section")
    out = Path(out_dir or doc.get("out_dir", "out"))
    jobs = jobs or doc.get("jobs", 1)
    seeds = sorted(resolve_seeds(doc))
    _prepare_out(config_path, out)

    results = _run_many(doc, doc["controller"], seeds, jobs)
    rows = []
    for res in sorted(results, key=lambda r: r["user_seed"]):
        _write_json(out / f"run_{res['label']}_s{res['user_seed']}.json", res)
        rows.extend(_phase_rows(res))
    _write_csv(out / "phases.csv", PHASE_CSV_COLUMNS, rows)
    return 0


def results_table(per_approach_scores: dict[str, list[float]]) -> dict:
    table = []
    for label in sorted(per_approach_scores):
        scores = per_approach_scores[label]
        n = len(scores)
        stderr = float(np.std(scores, ddof=1) / np.sqrt(n)) if n > 1 else None
        table.append({
            "approach": label,
            "mean": float(np.mean(scores)),
            "stderr": stderr,
            "n": n,
        })
    return {"kind": "results_table", "schema_version": 1, "rows": table}


def cmd_sweep(config_path: Path, out_dir: Path | None, jobs: int | None) -> int:
    doc = load_config(config_path)
    approaches = doc.get("approaches")
    if not approaches:
        raise ConfigError("'sweep' requires a non-empty 'approaches' list")
    for spec in approaches:
        if spec["type"] == "meta" and not spec.get("checkpoint"):
            raise ConfigError("meta approach in a sweep requires a 'checkpoint' path")
    out = Path(out_dir or doc.get("out_dir", "out"))
    jobs = jobs or doc.get("jobs", 1)
    seeds = sorted(resolve_seeds(doc))
    _prepare_out(config_path, out)

    scores: dict[str, list[float]] = {}
    rows = []
    for spec in approaches:
        results = _run_many(doc, spec, seeds, jobs)
        for res in sorted(results, key=lambda r: r["user_seed"]):
            _write_json(out / f"run_{res['label']}_s{res['user_seed']}.json", res)
            rows.extend(_phase_rows(res))
            scores.setdefault(res["label"], []).append(res["final_score"])
    _write_csv(out / "phases.csv", PHASE_CSV_COLUMNS, rows)
    _write_json(out / "results_table.json", results_table(scores))
    return 0


# ---- metareasoner training ----

def _adam_to_json(opt: nn.AdamState) -> dict:
    return {
        "t": opt.t,
        "learning_rate": opt.learning_rate,
        "m": [a.tolist() for a in opt.m],
        "v": [a.tolist() for a in opt.v],
    }


def _adam_from_json(doc: dict, net: nn.Mlp) -> nn.AdamState:
    opt = nn.adam_init(net, doc["learning_rate"])
    opt.t = doc["t"]
    opt.m = [np.asarray(a, dtype=np.float64) for a in doc["m"]]
    opt.v = [np.asarray(a, dtype=np.float64) for a in doc["v"]]
    return opt


def _buffer_to_json(buffer: ReplayBuffer) -> dict:
    s, a, r, s2, goal_terminal = buffer.columns()
    return {
        "obs_dim": buffer.obs_dim,
        "s": s.tolist(), "a": a.tolist(), "r": r.tolist(),
        "s2": s2.tolist(), "terminal": goal_terminal.tolist(),
    }


def _buffer_from_json(doc: dict) -> ReplayBuffer:
    buffer = ReplayBuffer(doc["obs_dim"])
    for s, a, r, s2, term in zip(doc["s"], doc["a"], doc["r"], doc["s2"], doc["terminal"]):
        buffer.add(Transition(np.asarray(s), a, r, np.asarray(s2), term))
    return buffer


def save_meta_checkpoint(path: Path, episode: int, agent: DqnAgent,
                         buffer: ReplayBuffer, rng_state: dict) -> None:
    doc = {
        "kind": "meta_checkpoint",
        "schema_version": 1,
        "meta_episode": episode,
        "agent": dqn.agent_to_json(agent),
        "adam": _adam_to_json(agent.opt),
        "buffer": _buffer_to_json(buffer),
        "rng_state": rng_state,
    }
    _write_json(path, doc)


def load_meta_checkpoint(path: Path):
    try:
        doc = json.loads(path.read_text())
        if doc.get("kind") != "meta_checkpoint":
            raise CheckpointError(f"{path} is not a meta checkpoint")
        agent = dqn.agent_from_json(doc["agent"], meta.META_LR)
        agent.opt = _adam_from_json(doc["adam"], agent.online)
        buffer = _buffer_from_json(doc["buffer"])
        return doc["meta_episode"], agent, buffer, doc["rng_state"]
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"corrupt meta checkpoint {path}: {exc}") from exc


def load_meta_agent(path: Path) -> DqnAgent:
    episode, agent, _, _ = load_meta_checkpoint(path)
    del episode
    return agent


def _latest_checkpoint(out: Path) -> Path | None:
    candidates = sorted(out.glob("meta_ep*.json"))
    return candidates[-1] if candidates else None


def _meta_csv_rows(path: Path) -> list[meta.MetaEpisodeRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(meta.MetaEpisodeRow(
                int(rec["meta_episode"]), float(rec["score"]),
                float(rec["epsilon"]), float(rec["mean_K_chosen"]),
            ))
    return rows


def _write_meta_csv(path: Path, rows: list[meta.MetaEpisodeRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["meta_episode", "score", "epsilon", "mean_K_chosen"])
        for row in rows:
            writer.writerow([row.meta_episode, row.score, row.epsilon, row.mean_k_chosen])


def cmd_meta_train(config_path: Path, out_dir: Path | None, resume: bool) -> int:
    doc = load_config(config_path)
    meta_section = doc.get("meta", {})
    episodes = meta_section.get("episodes", 2000)
    checkpoint_every = meta_section.get("checkpoint_every", 50)
    out = Path(out_dir or doc.get("out_dir", "out"))
    _prepare_out(config_path, out)
    seed = master_seed(doc)
    run_cfg = build_run_config(doc, seed=0)  # per-episode seeds are derived inside

    agent: DqnAgent | None = None
    buffer = ReplayBuffer(meta.META_OBS_DIM)
    rng_state = None
    start_episode = 1
    prior_rows: list[meta.MetaEpisodeRow] = []
    csv_path = out / "meta_training.csv"
    if resume:
        latest = _latest_checkpoint(out)
        if latest is not None:
            done, agent, buffer, rng_state = load_meta_checkpoint(latest)
            start_episode = done + 1
            if csv_path.exists():
                # drop rows the checkpoint never saw (crash between writes)
                prior_rows = [r for r in _meta_csv_rows(csv_path) if r.meta_episode <= done]

    last_state = {"rng": rng_state}

    def on_episode_end(episode, agent_now, buffer_now, rows, rng_state_now):
        _write_meta_csv(csv_path, prior_rows + rows)
        last_state["rng"] = rng_state_now
        if episode % checkpoint_every == 0:
            save_meta_checkpoint(out / f"meta_ep{episode:06d}.json", episode,
                                 agent_now, buffer_now, rng_state_now)

    kwargs = {}
    if "epsilon" in meta_section:
        kwargs["epsilon_schedule"] = EpsilonSchedule(**meta_section["epsilon"])
    if "updates_per_transition" in meta_section:
        kwargs["updates_per_transition"] = meta_section["updates_per_transition"]
    if "target_sync_episodes" in meta_section:
        kwargs["target_sync_episodes"] = meta_section["target_sync_episodes"]

    agent, _stats, _rows = train_metareasoner(
        run_cfg, episodes, seed,
        agent=agent, buffer=buffer, start_episode=start_episode,
        rng_state=rng_state, on_episode_end=on_episode_end, **kwargs,
    )
    save_meta_checkpoint(out / "meta_final.json", episodes, agent, buffer,
                         last_state["rng"] or {})
    return 0


def cmd_export_plots(results_dir: Path, out_dir: Path | None) -> int:
    results_dir = Path(results_dir)
    out = Path(out_dir or results_dir)
    out.mkdir(parents=True, exist_ok=True)
    groups: dict[str, list[dict]] = {}
    for path in sorted(results_dir.glob("*.json")):
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError:
            continue
        if isinstance(doc, dict) and doc.get("kind") == "run_result":
            groups.setdefault(doc["label"], []).append(doc)
    if not groups:
        raise ConfigError(f"no run results found in {results_dir}")
    for label, docs in sorted(groups.items()):
        phase_counts = {len(d["phases"]) for d in docs}
        if len(phase_counts) != 1:
            raise ConfigError(f"approach {label!r} mixes runs with different phase counts")
        evals = np.array([[p["eval_score"] for p in d["phases"]] for d in docs])
        ks = np.array([[p["k"] for p in d["phases"]] for d in docs])
        rows = []
        for i in range(evals.shape[1]):
            rows.append([
                i + 1,
                float(evals[:, i].mean()), float(evals[:, i].std()),
                float(ks[:, i].mean()), float(ks[:, i].std()),
            ])
        _write_csv(out / f"curve_{label}.csv", CURVE_CSV_COLUMNS, rows)
    return 0
