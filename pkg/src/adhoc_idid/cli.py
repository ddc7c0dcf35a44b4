"""Command-line front end: solve, learn, oracle, simulate, compare.

Every command writes its primary outputs plus ``manifest.json`` (resolved
configuration, library versions, timestamp) into ``--out``.  Primary outputs
are byte-identical for identical flags and seed.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import harness
from .domains import DomainError, build_domain, load_domain_config
from .idid import (
    LearnedPolicy,
    build_idid,
    learned_models,
    solve_augmented_idid,
    solve_idid,
)
from .mcesp import LearnerConfig, generate_collaborative_set, write_trace
from .planning import OracleTooLarge, brute_force_oracle
from .policy import tree_from_dict, tree_to_dict

log = logging.getLogger("adhoc_idid")

EXIT_OK, EXIT_CONFIG, EXIT_GUARD, EXIT_RUNTIME = 0, 1, 2, 3

DEFAULTS = {
    "horizon": 3,
    "level": 1,
    "K": 32,
    "weighting": "uniform",
    "augmented": False,
    "true_model": None,
    "alpha": 0.9,
    "gamma": 1.0,
    "n_saa": 25,
    "restarts": 20,
    "trials": 10,
    "steps": 20,
    "lookahead": 3,
    "seed": 0,
    "workers": None,
    "resolution": 3,
    "prior_limit": 100,
    "agents": "aug-idid,opat-po",
    "teammates": "random,predefined,optimal",
    "teammate": "true-model",
    "pattern": None,
    "repetition": 2,
    "switch_step": 15,
    "rollouts": 50,
    "learned": None,
}

# per-domain defaults, applied below explicit flags and config entries
DOMAIN_DEFAULTS = {
    # the one-shot grid: j's start is common knowledge, one collaborative slot
    "grid1shot": {"horizon": 1, "K": 1, "prior_limit": 1},
}


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--domain", help="domain name (mabc, grid3, grid1shot, box_pushing, "
                                         "bandit) or a JSON domain config path")
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--horizon", type=int)
    common.add_argument("--level", type=int)
    common.add_argument("--K", type=int)
    common.add_argument("--weighting", choices=["uniform", "diverse"])
    common.add_argument("--augmented", action="store_true", default=None)
    common.add_argument("--true-model", dest="true_model", choices=["oracle"])
    common.add_argument("--alpha", type=float)
    common.add_argument("--gamma", type=float)
    common.add_argument("--n-saa", dest="n_saa", type=int)
    common.add_argument("--restarts", type=int)
    common.add_argument("--learned", help="candidates.json from a previous learn run")
    common.add_argument("--trials", type=int)
    common.add_argument("--steps", type=int)
    common.add_argument("--lookahead", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--resolution", type=int, help="level-0 prior belief grid resolution")
    common.add_argument("--prior-limit", dest="prior_limit", type=int)
    common.add_argument("--agents")
    common.add_argument("--teammates")
    common.add_argument("--teammate")
    common.add_argument("--pattern", help="1-based action digits, e.g. 1324")
    common.add_argument("--repetition", type=int)
    common.add_argument("--switch-step", dest="switch_step", type=int)
    common.add_argument("--rollouts", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="adhoc-idid", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve a (possibly augmented) I-DID")
    sub.add_parser("learn", parents=[common], help="generate collaborative level-0 policies")
    sub.add_parser("oracle", parents=[common], help="brute-force joint optimum")
    sub.add_parser("simulate", parents=[common], help="run one agent against one teammate")
    sub.add_parser("compare", parents=[common], help="agents x teammates comparison table")
    return p


def resolve(args: argparse.Namespace) -> dict:
    """Explicit flags > config file > per-domain defaults > global defaults."""
    cfg: dict = {}
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
    flags = {k: v for k, v in vars(args).items()
             if v is not None and k not in ("config", "command", "verbose")}
    domain = flags.get("domain", cfg.get("domain"))
    if domain is None:
        raise ConfigError("--domain is required")
    key = domain if isinstance(domain, str) else domain.get("family", "")
    if str(key).endswith(".json"):
        try:
            with open(key) as fh:
                key = json.load(fh).get("family", "")
        except (OSError, json.JSONDecodeError, AttributeError) as exc:
            raise ConfigError(f"cannot read domain config {domain}: {exc}") from exc
    out = dict(DEFAULTS)
    out.update(DOMAIN_DEFAULTS.get(str(key).lower(), {}))
    unknown = set(cfg) - set(DEFAULTS) - {"domain", "out"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    out.update(cfg)
    out.update(flags)
    out["domain"] = domain
    out["command"] = args.command
    if out["workers"] is None:
        out["workers"] = os.cpu_count() or 1
    if out.get("out") is None:
        out["out"] = f"runs/{args.command}"
    for name in ("horizon", "level", "K", "restarts", "steps", "lookahead", "rollouts",
                 "repetition", "n_saa", "workers", "resolution", "prior_limit"):
        if int(out[name]) < (0 if name == "steps" else 1):
            raise ConfigError(f"{name} must be positive")
    return out


def load_domain(spec):
    if isinstance(spec, dict):
        params = dict(spec)
        return build_domain(params.pop("family"), params)
    if str(spec).endswith(".json"):
        return load_domain_config(spec)
    return build_domain(spec)


# --------------------------------------------------------------------------
# output helpers


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "artifact": pkg}


def write_manifest(out: Path, cfg: dict, outputs: list[str], argv) -> None:
    _dump(out / "manifest.json", {
        "argv": list(argv),
        "config": cfg,
        "outputs": sorted(outputs),
        "versions": _versions(),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    })


def _tree_json(tree, domain, agent: str = "i") -> dict:
    d = domain.as_agent(agent)
    return tree_to_dict(tree, d.actions_i, d.observations_i)


def _learner_cfg(cfg: dict) -> LearnerConfig:
    return LearnerConfig(alpha=cfg["alpha"], gamma=cfg["gamma"], n_saa=cfg["n_saa"],
                         seed=cfg["seed"])


def _learned(cfg: dict, domain) -> list[LearnedPolicy]:
    if cfg["learned"]:
        return load_candidates(cfg["learned"], domain)
    return generate_collaborative_set(domain, cfg["horizon"], cfg["restarts"],
                                      _learner_cfg(cfg), workers=cfg["workers"])


def load_candidates(path, domain) -> list[LearnedPolicy]:
    with open(path) as fh:
        data = json.load(fh)
    dj = domain.as_agent("j")
    out = []
    for item in data["candidates"]:
        pol = tree_from_dict(item["policy"], dj.actions_i, dj.observations_i)
        partner = item.get("partner")
        if partner is not None:
            partner = tree_from_dict(partner, domain.actions_i, domain.observations_i)
        out.append(LearnedPolicy(pol, float(item["utility"]), partner))
    return out


# --------------------------------------------------------------------------
# commands


def cmd_solve(cfg: dict, out: Path) -> list[str]:
    domain = load_domain(cfg["domain"])
    T = cfg["horizon"]
    prior = dict(resolution=cfg["resolution"], limit=cfg["prior_limit"])
    if cfg["true_model"] == "oracle":
        pi_i, pi_j, rep = brute_force_oracle(domain, T)
        models = learned_models(domain, [LearnedPolicy(pi_j, rep.value, pi_i)])
        idid = build_idid(domain, 1, T, models=models, weights=[1.0], K=1, **prior)
        solve_augmented_idid(idid, [])
    else:
        idid = build_idid(domain, cfg["level"], T, weighting=cfg["weighting"], K=cfg["K"],
                          **prior)
        if cfg["augmented"]:
            solve_augmented_idid(idid, _learned(cfg, domain))
        else:
            solve_idid(idid)
    _dump(out / "policy.json", _tree_json(idid.policy, domain))
    report = {"value": round(float(idid.value), 12), "level": idid.level, "horizon": T,
              "augmented": bool(cfg["augmented"] or cfg["true_model"]),
              "model_counts": idid.model_counts, "K": idid.K, "weighting": idid.weighting}
    _dump(out / "value.json", report)
    print(f"value {idid.value:.6f}  first action {domain.actions_i[idid.policy.action]}  "
          f"models per step {idid.model_counts}")
    return ["policy.json", "value.json"]


def cmd_learn(cfg: dict, out: Path) -> list[str]:
    domain = load_domain(cfg["domain"])
    rows: list = []
    found = generate_collaborative_set(domain, cfg["horizon"], cfg["restarts"],
                                       _learner_cfg(cfg), workers=cfg["workers"], trace=rows)
    found.sort(key=lambda c: (-c.value, c.policy.to_actions()))
    bundle = {"domain": domain.name, "horizon": cfg["horizon"], "candidates": [
        {"policy": _tree_json(c.policy, domain, "j"), "utility": round(c.value, 12),
         "partner": None if c.partner is None else _tree_json(c.partner, domain)}
        for c in found]}
    _dump(out / "candidates.json", bundle)
    write_trace(out / "trace.csv", rows, domain.observations_j)
    for c in found[:10]:
        print(f"{c.value:10.4f}  {[domain.actions_j[a] for a in c.policy.to_actions()]}")
    print(f"{len(found)} candidates")
    return ["candidates.json", "trace.csv"]


def cmd_oracle(cfg: dict, out: Path) -> list[str]:
    domain = load_domain(cfg["domain"])
    pi_i, pi_j, rep = brute_force_oracle(domain, cfg["horizon"])
    _dump(out / "oracle.json", {
        "value": round(rep.value, 12), "per_step": [round(v, 12) for v in rep.per_step],
        "pi_i": _tree_json(pi_i, domain), "pi_j": _tree_json(pi_j, domain, "j")})
    print(f"joint optimum {rep.value:.6f}")
    return ["oracle.json"]


def _agents(cfg: dict, domain, names) -> list:
    T = cfg["horizon"]
    out = []
    learned = None
    prior = dict(resolution=cfg["resolution"], limit=cfg["prior_limit"])
    for name in names:
        if name == "aug-idid":
            learned = learned if learned is not None else _learned(cfg, domain)
            out.append(harness.build_idid_agent(domain, T, learned, level=cfg["level"],
                                                K=cfg["K"], weighting=cfg["weighting"], **prior))
        elif name == "idid":
            out.append(harness.build_idid_agent(domain, T, (), level=cfg["level"], K=cfg["K"],
                                                weighting=cfg["weighting"], augmented=False,
                                                **prior))
        elif name == "opat-po":
            out.append(harness.OPATAgent(domain, harness.OptimalTeam.solve(domain, T),
                                         cfg["rollouts"]))
        else:
            raise ConfigError(f"unknown agent {name!r}")
    return out


def _script(kind: str, cfg: dict, agent=None, domain=None) -> harness.TeammateScript:
    if kind == "true-model":
        return harness.TeammateScript("true-model", policy=agent.behaviors[
            true_model_index(agent, domain, cfg["horizon"])])
    pattern = harness.parse_pattern(cfg["pattern"]) if cfg["pattern"] else ()
    return harness.TeammateScript(kind, seed=cfg["seed"], pattern=pattern,
                                  repetition=cfg["repetition"], switch_step=cfg["switch_step"],
                                  random_pattern=not pattern)


def true_model_index(agent, domain, horizon: int) -> int:
    """j's jointly optimal policy if the agent models it, else its most probable model."""
    try:
        pi_j = brute_force_oracle(domain, horizon)[1]
    except OracleTooLarge:
        return int(np.argmax(agent.weights))
    key = harness.behavior_from_tree(pi_j).key
    for k, b in enumerate(agent.behaviors):
        if b.key == key:
            return k
    return int(np.argmax(agent.weights))


def _write_logs(out: Path, summaries, logs, domain) -> list[str]:
    harness.write_summary_csv(out / "summary.csv", summaries)
    harness.write_episodes_csv(out / "episodes.csv", logs, domain)
    harness.write_belief_csv(out / "beliefs.csv", logs)
    return ["summary.csv", "episodes.csv", "beliefs.csv"]


def cmd_simulate(cfg: dict, out: Path) -> list[str]:
    domain = load_domain(cfg["domain"])
    name = cfg["agents"].split(",")[0]
    agent = _agents(cfg, domain, [name])[0]
    script = _script(cfg["teammate"], cfg, agent, domain)
    summaries, logs = harness.compare([agent], [script], domain, max(cfg["trials"], 2),
                                      cfg["steps"], cfg["lookahead"], cfg["seed"], baseline=None,
                                      horizon=cfg["horizon"], workers=cfg["workers"])
    files = _write_logs(out, summaries, logs, domain)
    s = summaries[0]
    print(f"{s.agent} vs {s.teammate}: {s.mean:.3f} +- {s.std:.3f} over {s.n} trials")
    if script.kind == "true-model" and cfg["steps"] > 0:
        k = true_model_index(agent, domain, cfg["horizon"])
        final = [lg.model_beliefs[-1][k] for lg in logs.values()]
        print(f"final belief on the true model ({agent.labels[k]}): mean {np.mean(final):.4f}, "
              f"min {np.min(final):.4f}")
    return files


def cmd_compare(cfg: dict, out: Path) -> list[str]:
    domain = load_domain(cfg["domain"])
    names = [n.strip() for n in cfg["agents"].split(",") if n.strip()]
    agents = _agents(cfg, domain, names)
    scripts = [_script(k.strip(), cfg, agents[0], domain)
               for k in cfg["teammates"].split(",") if k.strip()]
    baseline = "opat-po" if "opat-po" in names else None
    summaries, logs = harness.compare(agents, scripts, domain, cfg["trials"], cfg["steps"],
                                      cfg["lookahead"], cfg["seed"], baseline=baseline,
                                      horizon=cfg["horizon"], workers=cfg["workers"])
    files = _write_logs(out, summaries, logs, domain)
    for s in summaries:
        p = "" if s.baseline is None else f"  p={s.p_value:.4g} vs {s.baseline}"
        print(f"{s.teammate:12s} {s.agent:10s} {s.mean:8.3f} +- {s.std:.3f}{p}")
    return files


COMMANDS = {"solve": cmd_solve, "learn": cmd_learn, "oracle": cmd_oracle,
            "simulate": cmd_simulate, "compare": cmd_compare}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        files = COMMANDS[args.command](cfg, out)
        write_manifest(out, cfg, files, argv)
    except OracleTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (ConfigError, DomainError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report any solver failure as runtime
        log.exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
