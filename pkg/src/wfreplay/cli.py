"""Command-line entry point: ``wfreplay validate | run | drift | cost-report``.

Exit codes: 0 success, 1 validation or run failure, 2 configuration error.
Settings resolve as flags, then environment, then ``netgent.toml``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .controller import INVALIDATED, RunConfig, RunTrace, run_workflow, write_trace
from .environment import AdapterError, WebDriverConfig, WebDriverEnvironment
from .repo import Repository, StorageError
from .reporting import DriftReport, cost_report, cost_scenario
from .scenarios import fixture_path
from .sim import DriftOp, SimApp, SimEnvironment, TargetNotFound, apply_drift, changed_pages, load_app
from .synthesis.chat import ChatConfig, chat_backend
from .synthesis.cost import CostModel
from .synthesis.oracle import OracleBackend
from .synthesis.pipeline import Synthesizer
from .workflow import AbstractWorkflow, WorkflowError, parse_workflow

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["main", "build_parser", "Settings", "load_settings"]

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
CONFIG_FILE = "netgent.toml"


class ConfigError(Exception):
    pass


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Settings:
    llm_endpoint: str | None = None
    llm_model: str = "default"
    browser_url: str | None = None
    proxy: str | None = None
    repo: str | None = None
    rate: str = "0.35"


def _flatten(data: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for k, v in data.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_settings(
    args: argparse.Namespace, environ: Mapping[str, str] | None = None, cwd: str | Path | None = None
) -> Settings:
    env = os.environ if environ is None else environ
    path = getattr(args, "config", None)
    if path is None:
        default = Path(cwd or ".") / CONFIG_FILE
        path = default if default.exists() else None
    file_cfg: dict[str, Any] = {}
    if path is not None:
        try:
            file_cfg = _flatten(tomllib.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None

    def pick(flag: str, env_name: str | None, key: str, default: Any = None) -> Any:
        value = getattr(args, flag, None)
        if value is not None:
            return value
        if env_name and env.get(env_name):
            return env[env_name]
        if key in file_cfg:
            return str(file_cfg[key])
        return default

    return Settings(
        llm_endpoint=pick("llm_endpoint", None, "llm.endpoint"),
        llm_model=pick("model", None, "llm.model", "default"),
        browser_url=pick("browser", "NETGENT_BROWSER_URL", "browser.url"),
        proxy=pick("proxy", "NETGENT_PROXY", "browser.proxy"),
        repo=pick("repo", None, "repo"),
        rate=pick("rate", None, "cost.rate", "0.35"),
    )


def _bundled(name: str) -> Path | None:
    try:
        return fixture_path(name)
    except FileNotFoundError:
        return None


def _resolve(arg: str, suffix: str) -> Path:
    """A path, or the name of a bundled fixture (``espn`` -> ``espn<suffix>``)."""
    p = Path(arg)
    if p.exists():
        return p
    found = _bundled(arg if arg.endswith(suffix) else arg + suffix)
    if found is not None:
        return found
    raise ConfigError(f"no such file or bundled fixture: {arg}")


def _load_workflow(arg: str) -> tuple[AbstractWorkflow, Path]:
    path = _resolve(arg, ".workflow")
    try:
        return parse_workflow(path.read_bytes()), path
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None


def _load_sim(arg: str) -> SimApp:
    path = _resolve(arg, ".sim.json")
    try:
        return load_app(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad sim fixture {path}: {exc}") from None


def _backend(args: argparse.Namespace, settings: Settings, wf_path: Path) -> Synthesizer:
    if args.backend == "oracle":
        book = Path(args.oracle_book) if args.oracle_book else wf_path.with_name(wf_path.name.split(".")[0] + ".oracle.json")
        if not book.exists():
            raise ConfigError(f"oracle book not found: {book}")
        try:
            return OracleBackend.from_file(book, tokens_per_state=args.tokens_per_state)
        except ValueError as exc:
            raise ConfigError(f"bad oracle book {book}: {exc}") from None
    try:
        return chat_backend(ChatConfig.from_env(settings.llm_endpoint, model=settings.llm_model))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _rate(text: str) -> Decimal:
    try:
        value = Decimal(text)
    except InvalidOperation:
        raise ConfigError(f"bad rate {text!r}") from None
    if value < 0 or not value.is_finite():
        raise ConfigError(f"bad rate {text!r}")
    return value


def _run_config(args: argparse.Namespace, seed: int, rate: Decimal) -> RunConfig:
    return RunConfig(seed=seed, max_steps=args.max_steps, cost_model=CostModel.blended(rate))


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_validate(args: argparse.Namespace, out, err) -> int:
    try:
        path = _resolve(args.workflow, ".workflow")
        data = path.read_bytes()
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_FAIL
    try:
        w = parse_workflow(data)
    except WorkflowError as exc:
        print(f"{path}:{exc.line or 1}:{exc.col or 1}: {exc.message}", file=err)
        return EXIT_FAIL
    print(f"workflow {w.workflow_id} (app {w.app_label}), entry {w.entry_url}, max_steps {w.max_steps}", file=out)
    print(f"{len(w.states)} states:", file=out)
    for st in w.states:
        print(f"  {st.name}{'  [end]' if st.is_end else ''}", file=out)
    print("end states: " + ", ".join(s.name for s in w.end_states), file=out)
    return EXIT_OK


def _env_factory(args: argparse.Namespace, settings: Settings) -> Callable[[int], Any]:
    if args.sim:
        app = _load_sim(args.sim)
        return lambda seed: SimEnvironment(app, seed, secrets=os.environ)
    if not settings.browser_url:
        raise ConfigError("choose --sim FIXTURE or --browser URL (or set NETGENT_BROWSER_URL)")
    try:
        wd = WebDriverConfig.from_env(endpoint=settings.browser_url, proxy=settings.proxy)
    except AdapterError as exc:
        raise ConfigError(str(exc)) from None
    return lambda seed: WebDriverEnvironment(wd, secrets=os.environ)


def _execute(
    w: AbstractWorkflow,
    make_env: Callable[[int], Any],
    repo_root: str | Path,
    backend: Synthesizer,
    cfg: RunConfig,
) -> RunTrace:
    env = make_env(cfg.seed)
    try:
        return run_workflow(w, env, Repository(repo_root), backend, cfg)
    finally:
        env.close()


def cmd_run(args: argparse.Namespace, out, err) -> int:
    settings = load_settings(args)
    w, wf_path = _load_workflow(args.workflow)
    rate = _rate(settings.rate)
    make_env = _env_factory(args, settings)
    backend = _backend(args, settings, wf_path)
    repo_root = settings.repo or ".wfreplay-repo"
    try:
        Repository(repo_root)
    except StorageError as exc:
        raise ConfigError(str(exc)) from None
    if args.runs < 1 or (args.parallel is not None and args.parallel < 1):
        raise ConfigError("--runs and --parallel must be at least 1")
    seeds = [args.seed + i for i in range(args.runs)]

    def one(seed: int) -> RunTrace:
        return _execute(w, make_env, repo_root, backend, _run_config(args, seed, rate))

    if args.parallel and args.parallel > 1:
        with ThreadPoolExecutor(max_workers=args.parallel) as pool:
            traces = list(pool.map(one, seeds))
    else:
        traces = [one(s) for s in seeds]

    if args.trace_out:
        for t in traces:
            print(f"trace: {write_trace(t, args.trace_out)}", file=out)
    report = cost_report(traces, scenario=f"{w.workflow_id} x{args.runs} from seed {args.seed}")
    for line in report.lines():
        print(line, file=out)
    failed = [t for t in traces if not t.ok]
    for t in failed:
        print(f"run with seed {t.seed} aborted: {t.events[-1].detail}", file=err)
    return EXIT_FAIL if failed else EXIT_OK


def cmd_drift(args: argparse.Namespace, out, err) -> int:
    settings = load_settings(args)
    w, wf_path = _load_workflow(args.workflow)
    rate = _rate(settings.rate)
    backend = _backend(args, settings, wf_path)
    base = _load_sim(args.sim)
    try:
        op = DriftOp.parse(args.drift)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"bad drift spec {args.drift!r}: {exc}") from None
    repo_root = settings.repo or ".wfreplay-repo"
    cfg = _run_config(args, args.seed, rate)

    try:
        drifted = apply_drift(base, op)
    except TargetNotFound as exc:
        print(f"TargetNotFound: {exc}", file=err)
        return EXIT_FAIL
    except ValueError as exc:
        raise ConfigError(f"drift {args.drift!r}: {exc}") from None

    repo = Repository(repo_root)
    if not repo.states(w.workflow_id):
        warm = run_workflow(w, SimEnvironment(base, args.seed, secrets=os.environ), repo, backend, cfg)
        print(f"warm-up run: {warm.outcome}, tokens={warm.totals.tokens.total}", file=out)
        if not warm.ok:
            print(f"warm-up run aborted: {warm.events[-1].detail}", file=err)
            return EXIT_FAIL

    drift_run = run_workflow(w, SimEnvironment(drifted, args.seed, secrets=os.environ), repo, backend, cfg)
    with tempfile.TemporaryDirectory() as tmp:
        cold = run_workflow(w, SimEnvironment(drifted, args.seed, secrets=os.environ), Repository(tmp), backend, cfg)
    if args.trace_out:
        print(f"trace: {write_trace(drift_run, args.trace_out)}", file=out)

    report = DriftReport(
        drift=args.drift,
        states_regenerated=drift_run.totals.synthesized_states,
        states_replayed=drift_run.totals.hits,
        invalidations=drift_run.count(INVALIDATED),
        tokens_drift_run=drift_run.totals.tokens.total,
        tokens_cold_equivalent=cold.totals.tokens.total,
        locality_bound=max(1, len(changed_pages(base, drifted))),
        drift_run_outcome=drift_run.outcome,
    )
    if args.json:
        print(json.dumps(report.to_dict()), file=out)
    else:
        for k, v in report.to_dict().items():
            print(f"{k}: {v}", file=out)
    if not drift_run.ok:
        print(f"drift run aborted: {drift_run.events[-1].detail}", file=err)
        return EXIT_FAIL
    if not report.within_bound:
        print(
            f"regenerated {report.states_regenerated} states, over the locality bound {report.locality_bound}", file=err
        )
        return EXIT_FAIL
    return EXIT_OK


def cmd_cost_report(args: argparse.Namespace, out, err) -> int:
    rate = _rate(args.rate)
    try:
        sc = cost_scenario(
            args.tokens_per_run, rate, args.runs, args.states, args.tokens_per_state, args.weeks, args.drifted_states_per_week
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    for line in sc.lines(args.runs, args.weeks, args.drifted_states_per_week):
        print(line, file=out)
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def _common_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("workflow", help="workflow file, or the name of a bundled fixture")
    p.add_argument("--repo", help="state repository directory (created if missing)")
    p.add_argument("--backend", choices=("oracle", "chat"), default="oracle")
    p.add_argument("--oracle-book", help="oracle book JSON (default: <workflow>.oracle.json next to the workflow)")
    p.add_argument("--tokens-per-state", type=int, help="override the oracle's per-state token cost")
    p.add_argument("--llm-endpoint", help="chat-completion endpoint URL (config key llm.endpoint)")
    p.add_argument("--model", help="model name sent to the chat endpoint")
    p.add_argument("--rate", help="blended dollars per million tokens (default 0.35)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--trace-out", help="directory for trace-*.jsonl files")
    p.add_argument("--config", help=f"settings file (default ./{CONFIG_FILE} when present)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wfreplay", description="Compile-then-replay workflow runner.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and validate a workflow file")
    p.add_argument("workflow")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run a workflow against a simulated app or a WebDriver browser")
    _common_run_flags(p)
    target = p.add_mutually_exclusive_group()
    target.add_argument("--sim", help="sim fixture JSON, or the name of a bundled one")
    target.add_argument("--browser", help="WebDriver endpoint URL")
    p.add_argument("--proxy", help="HTTP proxy passed to the browser")
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--parallel", type=int, help="run up to P runs concurrently")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("drift", help="measure regeneration cost after one UI change")
    _common_run_flags(p)
    p.add_argument("--sim", required=True, help="sim fixture JSON, or the name of a bundled one")
    p.add_argument("--drift", required=True, help="kind:page[:selector[:arg]] or a JSON object")
    p.add_argument("--json", action="store_true", help="print the report as one JSON object")
    p.set_defaults(func=cmd_drift)

    p = sub.add_parser("cost-report", help="what-if cost arithmetic")
    p.add_argument("--tokens-per-run", type=int, default=278_000)
    p.add_argument("--rate", default="0.35")
    p.add_argument("--runs", type=int, default=1_000_000)
    p.add_argument("--states", type=int, default=10)
    p.add_argument("--tokens-per-state", type=int, default=42_600)
    p.add_argument("--weeks", type=int, default=52)
    p.add_argument("--drifted-states-per-week", type=int, default=1)
    p.set_defaults(func=cmd_cost_report)
    return parser


def main(argv: Sequence[str] | None = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args, out, err)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=err)
        return EXIT_CONFIG
    except WorkflowError as exc:
        print(f"{args.workflow}:{exc.line or 1}:{exc.col or 1}: {exc.message}", file=err)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
