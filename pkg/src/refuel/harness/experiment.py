"""Config-driven method comparison runs with deterministic on-disk artifacts."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path


from ..turn_mdp import TurnMDP, load_mdp, mdp_to_dict
from ..optimizers import RunResult, kl_to_base, pmd_iterate, refuel_iterate, rloo_iterate
from ..policy import Policy, TabularSoftmaxPolicy, policy_from_dict, policy_to_dict
from ..rollout import BUFFER_SCHEMES, OfflineBuffer, build_offline_buffer
from ..seeding import derive_seed
from .instances import gen_covariate_shift_mdp, gen_random_mdp
from .winrate import branch_winrate, branch_winrate_exact

METHODS = ("refuel", "lt-offline", "lt-mixed", "lt-online", "mt-mixed", "rloo", "pmd-exact")
OUTPUT_DIR_ENV = "REFUEL_OUTPUT_DIR"
WINRATE_NOTE = (
    "branch winrate: reference rollin to turn h, then one completion by each policy from the shared "
    "state, judged by terminal reward (ties 0.5); an analog of per-turn dialogue winrate, not a reproduction"
)


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class MissingArtifacts(OSError):
    """A comparison was requested for runs that have not been written."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run depends on; artifacts are a pure function of it.

    ``mdp`` is either ``{"path": ...}`` (optionally with ``"policy_path"``
    for the base policy) or a generator spec such as
    ``{"generator": "random", "horizon": 2, "states_per_turn": 3,
    "actions": 2, "branching": 2, "seed": 0}`` or
    ``{"generator": "covariate_shift", "seed": 0}``.
    """

    mdp: dict
    methods: tuple[str, ...]
    iterations: int = 10
    samples: int = 1000
    eta: float | str = "lemma3"
    gamma: float = 0.0
    seed: int = 0
    output_dir: str = "runs/default"
    buffer_factor: int = 10
    winrate_samples: int = 2000

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "mdp", dict(self.mdp))

    def validate(self) -> "ExperimentConfig":
        if not self.methods:
            raise ConfigError("method list is empty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("duplicate methods")
        if not isinstance(self.iterations, int) or self.iterations < 0:
            raise ConfigError("iterations must be an integer >= 0")
        if not isinstance(self.samples, int) or self.samples < 1:
            raise ConfigError("samples must be an integer >= 1")
        if isinstance(self.eta, str):
            if self.eta != "lemma3":
                raise ConfigError(f"eta must be a positive number or 'lemma3', got {self.eta!r}")
        elif not (isinstance(self.eta, (int, float)) and math.isfinite(self.eta) and self.eta > 0):
            raise ConfigError("eta must be a positive number or 'lemma3'")
        if not (isinstance(self.gamma, (int, float)) and self.gamma >= 0):
            raise ConfigError("gamma must be >= 0")
        if self.buffer_factor < 1 or self.winrate_samples < 1:
            raise ConfigError("buffer_factor and winrate_samples must be >= 1")
        if "path" not in self.mdp and self.mdp.get("generator") not in ("random", "covariate_shift"):
            raise ConfigError("mdp needs a 'path' or a generator of 'random' / 'covariate_shift'")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = list(self.methods)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config fields {sorted(extra)}")
        if "mdp" not in doc or "methods" not in doc:
            raise ConfigError("config needs 'mdp' and 'methods'")
        try:
            return cls(**doc).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path: str | Path, seed: int | None = None, output_dir: str | None = None) -> ExperimentConfig:
    """Read a JSON config; ``seed`` and then ``output_dir`` (or the
    ``REFUEL_OUTPUT_DIR`` environment variable) override the file."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    cfg = ExperimentConfig.from_dict(doc)
    return apply_overrides(cfg, seed, output_dir)


def apply_overrides(cfg: ExperimentConfig, seed: int | None = None, output_dir: str | None = None) -> ExperimentConfig:
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    out = output_dir or os.environ.get(OUTPUT_DIR_ENV)
    if out:
        cfg = replace(cfg, output_dir=out)
    return cfg


def build_instance(spec: dict) -> tuple[TurnMDP, Policy]:
    """The MDP and the base policy every method starts from."""
    spec = dict(spec)
    if "path" in spec:
        mdp = load_mdp(spec["path"])
        if "policy_path" in spec:
            base = policy_from_dict(json.loads(Path(spec["policy_path"]).read_text()))
        else:
            base = TabularSoftmaxPolicy.uniform(mdp.index, mdp.action_count)
        return mdp, base
    kind = spec.pop("generator")
    try:
        if kind == "covariate_shift":
            return gen_covariate_shift_mdp(**spec)
        rr = spec.pop("reward_range", (0.0, 1.0))
        mdp = gen_random_mdp(reward_range=tuple(rr), **spec)
    except TypeError as exc:
        raise ConfigError(f"bad generator arguments: {exc}") from exc
    return mdp, TabularSoftmaxPolicy.uniform(mdp.index, mdp.action_count)


def method_seed(master: int, method: str) -> int:
    return derive_seed(master, "method", method)


def run_method(cfg: ExperimentConfig, method: str, mdp: TurnMDP, base: Policy,
               buffer: OfflineBuffer | None) -> RunResult:
    seed = method_seed(cfg.seed, method)
    T, N = cfg.iterations, cfg.samples
    eta = cfg.eta if isinstance(cfg.eta, str) else float(cfg.eta)
    if method == "pmd-exact":
        return pmd_iterate(mdp, base, T, eta)
    if method == "rloo":
        return rloo_iterate(mdp, base, T, eta, N, seed, gamma=cfg.gamma)
    return refuel_iterate(mdp, base, T, eta, N, method, buffer if method in BUFFER_SCHEMES else None,
                          seed, gamma=cfg.gamma)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _dump_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _clean(x: float):
    return x if math.isfinite(x) else None


def winrates(mdp: TurnMDP, policy: Policy, base: Policy, n: int, seed: int) -> tuple[list[float], list[float]]:
    """(Monte Carlo, exact) branch winrate vs ``base`` for every turn."""
    mc = [branch_winrate(mdp, policy, base, h, n, derive_seed(seed, "winrate", h)) for h in range(1, mdp.horizon + 1)]
    ex = [branch_winrate_exact(mdp, policy, base, h) for h in range(1, mdp.horizon + 1)]
    return mc, ex


def run_experiment(config: ExperimentConfig) -> dict[str, Path]:
    """Run every method and write ``<out>/<method>/{metrics.csv, summary.json,
    policy.json}`` plus ``<out>/mdp.json`` and ``<out>/config.json``.

    Returns the per-method output directories.
    """
    cfg = config.validate()
    mdp, base = build_instance(cfg.mdp)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    echo = cfg.to_dict()
    del echo["output_dir"]  # keeps artifacts location-independent
    _dump_json(out / "config.json", echo)
    _dump_json(out / "mdp.json", mdp_to_dict(mdp))
    _dump_json(out / "base_policy.json", policy_to_dict(base))

    buffer = None
    if any(m in BUFFER_SCHEMES for m in cfg.methods):
        buffer = build_offline_buffer(mdp, base, cfg.buffer_factor * cfg.samples, derive_seed(cfg.seed, "buffer"))

    H = mdp.horizon
    header = (["method", "iteration", "J", "kl_to_base", "residual", "gap"]
              + [f"winrate_h{h}" for h in range(1, H + 1)]
              + [f"winrate_exact_h{h}" for h in range(1, H + 1)])
    dirs = {}
    for method in cfg.methods:
        run = run_method(cfg, method, mdp, base, buffer)
        seed = method_seed(cfg.seed, method)
        d = out / method
        d.mkdir(exist_ok=True)
        rows = []
        for m, p in zip(run.metrics, run.policies):
            mc, ex = winrates(mdp, p, base, cfg.winrate_samples, derive_seed(seed, "eval", m.iteration))
            rows.append([method, str(m.iteration), _fmt(m.return_j), _fmt(kl_to_base(mdp, p, base)),
                         _fmt(m.regression_residual), _fmt(m.gap_to_comparator)]
                        + [_fmt(w) for w in mc] + [_fmt(w) for w in ex])
        with open(d / "metrics.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
        last = run.metrics[-1]
        mc, ex = winrates(mdp, run.policies[-1], base, cfg.winrate_samples,
                          derive_seed(seed, "eval", last.iteration))
        _dump_json(d / "summary.json", {
            "method": method,
            "seed": seed,
            "iterations": cfg.iterations,
            "final_J": last.return_j,
            "base_J": run.metrics[0].return_j,
            "final_kl_to_base": kl_to_base(mdp, run.policies[-1], base),
            "final_residual": _clean(last.regression_residual),
            "final_gap": last.gap_to_comparator,
            "winrate": mc,
            "winrate_exact": ex,
            "winrate_samples": cfg.winrate_samples,
            "winrate_note": WINRATE_NOTE,
            "reward_range": list(mdp.reward_range),
        })
        _dump_json(d / "policy.json", policy_to_dict(run.policies[-1]))
        dirs[method] = d
    return dirs


def _read_summary(path: Path) -> dict:
    if not path.exists():
        raise MissingArtifacts(f"missing run artifact {path}")
    return json.loads(path.read_text())


def compare_methods(source: ExperimentConfig | str | Path, run_missing: bool = True) -> Path:
    """Write ``comparison.csv`` (one row per method) and return its path.

    ``source`` is a config (runs are produced inline when absent and
    ``run_missing``) or an output directory holding a previous run.
    """
    if isinstance(source, ExperimentConfig):
        cfg = source.validate()
        out = Path(cfg.output_dir)
        if run_missing and not all((out / m / "summary.json").exists() for m in cfg.methods):
            run_experiment(cfg)
        methods = list(cfg.methods)
    else:
        out = Path(source)
        doc = _read_summary(out / "config.json")
        methods = doc.get("methods") or []
        if not methods:
            raise ConfigError("method list is empty")
    summaries = [_read_summary(out / m / "summary.json") for m in methods]
    H = len(summaries[0]["winrate"])
    header = (["method", "final_J", "kl_to_base", "residual"]
              + [f"winrate_h{h}" for h in range(1, H + 1)]
              + [f"winrate_exact_h{h}" for h in range(1, H + 1)])
    path = out / "comparison.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for s in summaries:
            res = s["final_residual"]
            writer.writerow([s["method"], _fmt(s["final_J"]), _fmt(s["final_kl_to_base"]),
                             "nan" if res is None else _fmt(res)]
                            + [_fmt(w) for w in s["winrate"]] + [_fmt(w) for w in s["winrate_exact"]])
    return path


def comparison_rows(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
