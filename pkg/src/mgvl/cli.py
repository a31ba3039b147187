"""Command-line driver: ``train``, ``eval``, ``bench`` and ``gen``.

Exit codes: 0 ok, 2 configuration error, 3 I/O error (including missing or corrupt
logs), 4 invariant violation detected during a run.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import shutil
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bandit import StationaryError
from .certified import (LogError, dump_log_binary, dumps_log, extract_monotone_markov,
                        load_log_binary, loads_log, merge_player_logs, truncate_log)
from .envgen import (ParityOpponent, ParityOpponentSpec, RandomGameSpec, parity_hard_instance,
                     random_game)
from .evalx import EvalError, GapReport, certified_gap, mc_value, nash_gap_markov, \
    nash_values_zero_sum, policy_values
from .game import GameFormatError, MarkovGame, dump_game, parse_game
from .linprog import LPError
from .nashq import NashQConfig, NashQError, train_nashq
from .vlearn import TrainConfig, nash_v_preset, train

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_INVARIANT = 0, 2, 3, 4
ALGOS = ("vlearn-external", "vlearn-swap", "vlearn-monotone", "nash-v", "nashq")
GAP_COLUMNS = GapReport.CSV_COLUMNS
DIAG_COLUMNS = ("episode", "player", "optimism_violations", "gap_trace", "wallclock_ms")


class ConfigError(ValueError):
    pass


class RunIOError(OSError):
    pass


# --- game sources ------------------------------------------------------------------------

def _kv(body: str) -> tuple[list[str], dict[str, str]]:
    flags, kv = [], {}
    for part in filter(None, (p.strip() for p in body.split(","))):
        if "=" in part:
            k, v = part.split("=", 1)
            kv[k.strip()] = v.strip()
        else:
            flags.append(part)
    return flags, kv


REWARD_ALIASES = {"zs": "zero-sum", "zero-sum": "zero-sum", "gs": "general-sum",
                  "general-sum": "general-sum", "coop": "cooperative", "cooperative": "cooperative"}


def parse_game_source(src: str) -> tuple[MarkovGame, dict]:
    """Game from an inline generator spec or a JSON game file.

    Inline forms: ``random:zs,S=4,A=2,B=2,H=3[,seed=0,conc=1.0]`` (``m=3,actions=2x2x2`` for
    more players; ``gs`` / ``coop`` for other reward modes) and
    ``parity:H=6,T=1|3,alpha=0.2[,seed=0]``. Returns the game and generator extras.
    """
    try:
        if src.startswith("random:"):
            flags, kv = _kv(src[len("random:"):])
            mode = "zero-sum"
            for f in flags:
                if f not in REWARD_ALIASES:
                    raise ConfigError(f"unknown flag {f!r} in game spec")
                mode = REWARD_ALIASES[f]
            m = int(kv.pop("m", 2))
            if "actions" in kv:
                actions = tuple(int(x) for x in kv.pop("actions").split("x"))
            else:
                a = int(kv.pop("A", 2))
                b = int(kv.pop("B", a))
                actions = (a, b) + (a,) * (m - 2) if m >= 2 else (a,)
            conc = kv.pop("conc", "1.0")
            spec = RandomGameSpec(m, int(kv.pop("S", 4)), actions, int(kv.pop("H", 3)), mode,
                                  conc if conc == "uniform" else float(conc),
                                  int(kv.pop("seed", 0)))
            if kv:
                raise ConfigError(f"unknown keys in game spec: {sorted(kv)}")
            return random_game(spec), {}
        if src.startswith("parity:"):
            _, kv = _kv(src[len("parity:"):])
            H = int(kv.pop("H", 6))
            T = tuple(int(x) for x in kv.pop("T", "1").split("|"))
            opp = ParityOpponentSpec(H, T, float(kv.pop("alpha", 0.2)), int(kv.pop("seed", 0)))
            if kv:
                raise ConfigError(f"unknown keys in game spec: {sorted(kv)}")
            return parity_hard_instance(H), {"parity": opp}
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad game spec {src!r}: {exc}") from None
    path = Path(src)
    try:
        text = path.read_text()
    except OSError as exc:
        raise RunIOError(f"cannot read game file {src}: {exc}") from None
    try:
        return parse_game(text), {}
    except GameFormatError as exc:
        raise ConfigError(f"invalid game file {src}: {exc}") from None


# --- configuration ----------------------------------------------------------------------

@dataclass
class RunConfig:
    algo: str = "vlearn-external"
    game: str = "random:zs,S=4,A=2,B=2,H=3"
    K: int = 1000
    seed: int = 0
    c: float = 1.0
    delta: float = 0.1
    checkpoints: list[int] = field(default_factory=list)
    out: str = "runs/latest"
    format: str = "json"
    pessimistic: bool = False

    def validate(self):
        if self.algo not in ALGOS:
            raise ConfigError(f"algo must be one of {ALGOS}")
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must be in (0, 1)")
        if self.c < 0:
            raise ConfigError("c must be >= 0")
        if self.format not in ("json", "binary"):
            raise ConfigError("format must be 'json' or 'binary'")
        self.checkpoints = sorted({int(k) for k in self.checkpoints if 1 <= int(k) <= self.K})
        if self.K not in self.checkpoints:
            self.checkpoints.append(self.K)


def load_config_file(path: str) -> dict:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise RunIOError(f"cannot read config {path}: {exc}") from None
    try:
        if path.endswith(".toml"):
            try:
                import tomllib
            except ModuleNotFoundError:                     # Python < 3.11
                import tomli as tomllib
            return tomllib.loads(raw.decode())
        return json.loads(raw)
    except Exception as exc:                                # noqa: BLE001 - any parse failure
        raise ConfigError(f"cannot parse config {path}: {exc}") from None


def _checkpoint_list(v) -> list[int]:
    if isinstance(v, str):
        return [int(x) for x in v.replace(";", ",").split(",") if x.strip()]
    return [int(x) for x in v]


def build_run_config(args) -> RunConfig:
    base: dict = {}
    if getattr(args, "manifest", None):
        base = load_config_file(args.manifest).get("config", {})
        src = str(base.get("game", ""))
        if not src.startswith(("random:", "parity:")) and not Path(src).exists():
            # the run directory keeps its own copy of the game
            base["game"] = str(Path(args.manifest).parent / "game.json")
    if getattr(args, "config", None):
        base.update(load_config_file(args.config))
    for key in ("algo", "game", "K", "seed", "c", "delta", "checkpoints", "out", "format"):
        v = getattr(args, key, None)
        if v is not None:
            base[key] = v
    if getattr(args, "pessimistic", False):
        base["pessimistic"] = True
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(base) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "checkpoints" in base:
        base["checkpoints"] = _checkpoint_list(base["checkpoints"])
    try:
        cfg = RunConfig(**base)
        cfg.K, cfg.seed = int(cfg.K), int(cfg.seed)
        cfg.c, cfg.delta = float(cfg.c), float(cfg.delta)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad configuration: {exc}") from None
    cfg.validate()
    return cfg


def workers() -> int:
    try:
        return max(1, int(os.environ.get("MGVL_THREADS", "1")))
    except ValueError:
        raise ConfigError("MGVL_THREADS must be an integer") from None


# --- output helpers -----------------------------------------------------------------------

class Staging:
    """Collect outputs in a scratch directory and move them into place only on success."""

    def __init__(self, out: str):
        self.out = Path(out)
        try:
            self.out.parent.mkdir(parents=True, exist_ok=True)
            self.tmp = Path(tempfile.mkdtemp(prefix=".mgvl-", dir=self.out.parent))
        except OSError as exc:
            raise RunIOError(f"cannot create output directory {out}: {exc}") from None

    def path(self, name: str) -> Path:
        return self.tmp / name

    def write_text(self, name: str, text: str):
        self.path(name).write_text(text, encoding="utf-8")

    def write_bytes(self, name: str, data: bytes):
        self.path(name).write_bytes(data)

    def commit(self):
        try:
            self.out.mkdir(parents=True, exist_ok=True)
            for f in sorted(self.tmp.iterdir()):
                os.replace(f, self.out / f.name)
        except OSError as exc:
            raise RunIOError(f"cannot write outputs to {self.out}: {exc}") from None
        finally:
            shutil.rmtree(self.tmp, ignore_errors=True)

    def abort(self):
        shutil.rmtree(self.tmp, ignore_errors=True)


def fmt(x) -> str:
    """Locale-independent number formatting for CSV cells."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(x) for x in r])
    return buf.getvalue()


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


# --- train ---------------------------------------------------------------------------------

def reference_values(game: MarkovGame):
    if not (game.zero_sum and game.num_players == 2):
        return None
    V = nash_values_zero_sum(game).V[: game.horizon]
    cap = np.arange(game.horizon, 0, -1, dtype=float)[:, None]
    return [V, cap - V]


def run_train(cfg: RunConfig) -> dict:
    game, extras = parse_game_source(cfg.game)
    if cfg.algo == "nashq" and not (game.zero_sum and game.num_players == 2):
        raise ConfigError("nashq needs a two-player zero-sum game")
    if cfg.algo == "nash-v" and game.num_players != 2:
        raise ConfigError("nash-v needs a two-player game")
    stage = Staging(cfg.out)
    try:
        ref = reference_values(game)
        files = []
        ext = "json" if cfg.format == "json" else "bin"

        def write_log(name, log):
            if cfg.format == "json":
                stage.write_text(name, dumps_log(log))
            else:
                stage.write_bytes(name, dump_log_binary(log))
            files.append(name)

        if cfg.algo == "nashq":
            res = train_nashq(game, NashQConfig(cfg.K, cfg.seed, cfg.c, cfg.delta,
                                                tuple(cfg.checkpoints)),
                              None if ref is None else ref[0])
            write_log(f"log_joint.{ext}", res.log)
            rows = [[r["episode"], 0, r["sandwich_violations"], r["gap_trace"],
                     r["wallclock_ms"]] for r in res.diagnostics.rows]
        else:
            tc = TrainConfig(cfg.K, cfg.seed, mode="swap" if cfg.algo == "vlearn-swap" else "external",
                             c=cfg.c, delta=cfg.delta, monotone=cfg.algo == "vlearn-monotone",
                             pessimistic=cfg.pessimistic, checkpoints=tuple(cfg.checkpoints),
                             players=nash_v_preset(cfg.c) if cfg.algo == "nash-v" else None)
            opponents = {}
            if "parity" in extras:
                opponents = {1: ParityOpponent(extras["parity"])}
            res = train(game, tc, ref, opponents)
            for j, lg in enumerate(res.player_logs()):
                write_log(f"log_p{j}.{ext}", lg)
            if res.cuts:
                stage.write_text("monotone_cuts.json", _dump(
                    {str(k): [c.tolist() for c in v] for k, v in sorted(res.cuts.items())}))
                files.append("monotone_cuts.json")
            rows = [[r[c] for c in DIAG_COLUMNS] for r in res.diagnostics.rows]
            if "parity" in extras:
                stage.write_text("opponent_transcript.jsonl", "".join(
                    json.dumps({"episode": k, "x": x, "y": y}) + "\n"
                    for k, x, y in opponents[1].transcript))
                files.append("opponent_transcript.jsonl")
        stage.write_text("diagnostics.csv", csv_text(DIAG_COLUMNS, rows))
        stage.write_text("game.json", dump_game(game))
        manifest = {"command": "train", "version": __version__, "config": asdict(cfg),
                    "game_num_players": game.num_players, "logs": files,
                    "artifacts": sorted(files + ["diagnostics.csv", "game.json"])}
        stage.write_text("manifest.json", _dump(manifest))
    except BaseException:
        stage.abort()
        raise
    stage.commit()
    return manifest


# --- eval ----------------------------------------------------------------------------------

def load_log_file(path: Path):
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise RunIOError(f"cannot read log {path}: {exc}") from None
    if data[:4] == b"MGVL":
        return load_log_binary(data)
    try:
        return loads_log(data.decode("utf-8"))
    except UnicodeDecodeError:
        raise LogError(f"{path} is neither a JSON nor a binary log") from None


def _eval_task(args):
    game, log, i, mode, unvisited = args
    return certified_gap(game, log, i, mode, unvisited).to_dict()


def run_eval(run_dir: str, modes=("best_response", "strategy_mod"), checkpoints=None,
             mc: int = 0, unvisited: str = "optimistic", out: str | None = None,
             seed: int = 0) -> list[dict]:
    d = Path(run_dir)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
        game_text = (d / "game.json").read_text()
    except OSError as exc:
        raise RunIOError(f"cannot read run directory {run_dir}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise RunIOError(f"corrupt manifest in {run_dir}: {exc}") from None
    game = parse_game(game_text)
    logs = [load_log_file(d / name) for name in manifest["logs"] if name.startswith("log_")]
    log = logs[0] if len(logs) == 1 else merge_player_logs(logs)
    if len(log.players) == 1 and log.variant == "v" and game.num_players > 1:
        raise ConfigError("gap evaluation needs every player's log")
    K = log.K
    cps = sorted(set(checkpoints or manifest["config"].get("checkpoints") or [K]))
    if any(not 1 <= c <= K for c in cps):
        raise ConfigError(f"checkpoints must lie in [1, {K}]")
    if log.variant == "q":
        modes = tuple(m for m in modes if m == "best_response") or ("best_response",)
    prefixes = {c: truncate_log(log, c) if c != K else log for c in cps}
    tasks = [(game, prefixes[c], i, m, unvisited)
             for c in cps for i in range(game.num_players) for m in modes]
    nw = workers()
    if nw > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(nw, len(tasks))) as pool:
            reports = list(pool.map(_eval_task, tasks))
    else:
        reports = [_eval_task(t) for t in tasks]
    rows = [dict(r) for r in reports]
    if mc:
        for c in cps:
            mean, se = mc_value(game, prefixes[c], mc, seed)
            for r in [r for r in rows if r["K"] == c and r["exact_or_mc"] == "exact"]:
                i = r["player"]
                rows.append(dict(r, on_policy=float(mean[i]),
                                 gap=r["upper_bound"] - float(mean[i]),
                                 exact_or_mc="mc", stderr=float(se[i])))
    cuts_path = d / "monotone_cuts.json"
    if cuts_path.exists():
        cuts = json.loads(cuts_path.read_text())
        for c in cps:
            if str(c) not in cuts:
                continue
            pol = extract_monotone_markov(prefixes[c], [np.array(x) for x in cuts[str(c)]]).policy
            gaps = nash_gap_markov(game, pol)
            V = policy_values(game, pol)[:, 0, game.initial_state]
            for i in range(game.num_players):
                rows.append({"player": i, "mode": "nash_markov", "K": c, "on_policy": float(V[i]),
                             "upper_bound": float(V[i] + gaps[i]), "gap": float(gaps[i]),
                             "exact_or_mc": "exact", "stderr": 0.0})
    rows.sort(key=lambda r: (r["K"], r["player"], r["mode"], r["exact_or_mc"]))
    target = Path(out) if out else d
    stage = Staging(str(target))
    try:
        stage.write_text("gaps.csv", csv_text(GAP_COLUMNS, [[r[c] for c in GAP_COLUMNS]
                                                            for r in rows]))
        stage.write_text("gaps.json", _dump(rows))
    except BaseException:
        stage.abort()
        raise
    stage.commit()
    return rows


# --- bench ---------------------------------------------------------------------------------

def _bench_one(args):
    cfg_dict, seed = args
    cfg = RunConfig(**dict(cfg_dict, seed=seed))
    game, extras = parse_game_source(cfg.game)
    t0 = time.perf_counter()
    if cfg.algo == "nashq":
        res = train_nashq(game, NashQConfig(cfg.K, seed, cfg.c, cfg.delta))
    else:
        tc = TrainConfig(cfg.K, seed, mode="swap" if cfg.algo == "vlearn-swap" else "external",
                         c=cfg.c, delta=cfg.delta, monotone=cfg.algo == "vlearn-monotone",
                         players=nash_v_preset(cfg.c) if cfg.algo == "nash-v" else None)
        opp = {1: ParityOpponent(extras["parity"])} if "parity" in extras else None
        res = train(game, tc, None, opp)
    t1 = time.perf_counter()
    gap = certified_gap(game, res.log, 0).gap if "parity" not in extras else float("nan")
    t2 = time.perf_counter()
    return [cfg.algo, cfg.K, seed, t1 - t0, t2 - t1, cfg.K / max(t1 - t0, 1e-12), gap]


BENCH_COLUMNS = ("algo", "K", "seed", "seconds_train", "seconds_eval", "episodes_per_sec",
                 "gap_player0")


def run_bench(cfg: RunConfig, seeds: int) -> list[list]:
    parse_game_source(cfg.game)          # validate early
    tasks = [(asdict(cfg), cfg.seed + n) for n in range(seeds)]
    nw = workers()
    if nw > 1 and seeds > 1:
        with ProcessPoolExecutor(max_workers=min(nw, seeds)) as pool:
            return list(pool.map(_bench_one, tasks))
    return [_bench_one(t) for t in tasks]


# --- argument parsing ------------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mgvl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"mgvl {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML or JSON file; flags override its values")
        sp.add_argument("--algo", choices=ALGOS)
        sp.add_argument("--game", help="game file or inline spec (random:..., parity:...)")
        sp.add_argument("--K", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--c", type=float)
        sp.add_argument("--delta", type=float)
        sp.add_argument("--checkpoints", help="comma-separated episode indices")

    tr = sub.add_parser("train", help="train and write logs, diagnostics and a manifest")
    common(tr)
    tr.add_argument("--manifest", help="re-run the configuration stored in a manifest")
    tr.add_argument("--out")
    tr.add_argument("--format", choices=("json", "binary"))
    tr.add_argument("--pessimistic", action="store_true", help="track the gap-trace diagnostics")

    ev = sub.add_parser("eval", help="certified gap reports for a training run")
    ev.add_argument("run", help="run directory written by 'train'")
    ev.add_argument("--modes", default="best_response,strategy_mod")
    ev.add_argument("--checkpoints")
    ev.add_argument("--mc", type=int, default=0, help="add Monte-Carlo rows with n episodes")
    ev.add_argument("--mc-seed", type=int, default=0)
    ev.add_argument("--unvisited", choices=("optimistic", "execute"), default="optimistic")
    ev.add_argument("--out", help="directory for gaps.csv / gaps.json (default: the run)")

    be = sub.add_parser("bench", help="time training and evaluation; CSV on stdout")
    common(be)
    be.add_argument("--seeds", type=int, default=1)

    ge = sub.add_parser("gen", help="write a game file from an inline spec")
    ge.add_argument("--game", required=True)
    ge.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        if args.command == "train":
            cfg = build_run_config(args)
            man = run_train(cfg)
            print(f"wrote {', '.join(man['artifacts'] + ['manifest.json'])} to {cfg.out}")
        elif args.command == "eval":
            modes = tuple(m.strip() for m in args.modes.split(",") if m.strip())
            bad = set(modes) - {"best_response", "strategy_mod"}
            if bad:
                raise ConfigError(f"unknown eval modes {sorted(bad)}")
            cps = _checkpoint_list(args.checkpoints) if args.checkpoints else None
            if args.mc < 0:
                raise ConfigError("--mc must be >= 0")
            rows = run_eval(args.run, modes, cps, args.mc, args.unvisited, args.out, args.mc_seed)
            sys.stdout.write(csv_text(GAP_COLUMNS, [[r[c] for c in GAP_COLUMNS] for r in rows]))
        elif args.command == "bench":
            cfg = build_run_config(args)
            if args.seeds < 1:
                raise ConfigError("--seeds must be >= 1")
            sys.stdout.write(csv_text(BENCH_COLUMNS, run_bench(cfg, args.seeds)))
        elif args.command == "gen":
            game, _ = parse_game_source(args.game)
            try:
                Path(args.out).parent.mkdir(parents=True, exist_ok=True)
                Path(args.out).write_text(dump_game(game))
            except OSError as exc:
                raise RunIOError(f"cannot write {args.out}: {exc}") from None
    except (ConfigError, NashQError, GameFormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunIOError, LogError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FloatingPointError, LPError, StationaryError, EvalError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
