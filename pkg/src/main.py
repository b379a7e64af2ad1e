import argparse
import logging
import os

from dotenv import load_dotenv

from . import harness
from .config import RunConfig, list_presets, load_config, load_preset, parse_grid, preset_description
from .errors import ConfigError, FedFWError, NumericalError
from .store import Store
from .utils import setup_logging

logger = logging.getLogger(__name__)


def _resolve_config(args: argparse.Namespace) -> tuple[RunConfig, str | None]:
    if bool(args.config) == bool(args.preset):
        raise ConfigError("pass exactly one of --config PATH or --preset NAME")
    cfg = load_config(args.config) if args.config else load_preset(args.preset)
    cfg = cfg.with_overrides(seed=args.seed)
    return cfg.with_overrides(workers=harness.resolve_workers(args.workers, cfg)), args.preset


def run(args: argparse.Namespace) -> int:
    load_dotenv()
    setup_logging(os.getenv("LOG_LEVEL", "INFO"))

    if args.command == "presets":
        for name in list_presets():
            print(f"{name:16s} {preset_description(name)}")
        return 0

    store = None
    try:
        cfg, preset = _resolve_config(args)
        store = Store(os.getenv("FEDFW_DB_PATH", "data/runs.sqlite3"))
        if args.command == "run":
            result = harness.run(cfg, args.out, store, preset)
            logger.info("Artifacts written to %s", result.out_dir)
            return 0
        if args.command == "sweep":
            grid = parse_grid(args.grid or [])
            rows, failed = harness.sweep(cfg, grid, args.out, store, preset)
            if failed:
                logger.error("%s of %s sweep cells failed", failed, len(rows))
                return 1
            return 0
        checks, ok = harness.verify(cfg, args.out)
        if not ok:
            logger.error("verify failed: %s", ", ".join(c["check"] for c in checks if not c["passed"]))
            return 1
        return 0
    except ConfigError as exc:
        logger.error("Invalid config: %s", exc)
        return 2
    except NumericalError as exc:
        logger.error("Aborted at round %s: %s", exc.round_index, exc)
        return 1
    except FedFWError as exc:
        logger.error("Run failed: %s", exc)
        return 1
    except Exception as exc:  # pylint: disable=broad-except
        logger.exception("Fatal run error: %s", exc)
        return 1
    finally:
        if store is not None:
            store.close()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Federated Frank-Wolfe experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=None, help="run config JSON")
        p.add_argument("--preset", default=None, help="named preset under config/presets")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--workers", type=int, default=None, help="client worker threads")

    add_common(sub.add_parser("run", help="run one experiment"))
    sweep = sub.add_parser("sweep", help="run a grid over lambda0 / participation / seed")
    add_common(sweep)
    sweep.add_argument("--grid", action="append", default=None, help="KEY=v1,v2 (repeatable)")
    add_common(sub.add_parser("verify", help="run the invariant checks against a live run"))
    presets = sub.add_parser("presets", help="list the shipped presets")
    presets.add_argument("action", choices=["list"])
    return parser


def main() -> None:
    args = build_parser().parse_args()
    raise SystemExit(run(args))


if __name__ == "__main__":
    main()
