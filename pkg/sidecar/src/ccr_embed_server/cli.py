"""CLI entry point: ccr-embed-server --model <name> --port 8230 [--normalize]"""

from __future__ import annotations

import argparse
import logging
import sys

import uvicorn

from . import __version__
from .app import ServerConfig, create_app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ccr-embed-server")
    parser.add_argument("--model", default="hash:dim=256,seed=0",
                        help="sentence-encoder identifier or hash:dim=...,seed=...")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8230)
    parser.add_argument("--max-batch", type=int, default=256)
    parser.add_argument("--normalize", action="store_true")
    parser.add_argument("--version", action="version", version=f"ccr-embed-server {__version__}")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    config = ServerConfig(
        model_name=args.model, host=args.host, port=args.port,
        max_batch=args.max_batch, normalize=args.normalize,
    )
    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="info")
    return 0


if __name__ == "__main__":
    sys.exit(main())
