"""Command line for exporting and verifying weight containers.

Exit codes: 0 ok, 1 verification failed, 2 I/O or unreadable input,
3 mapping/schema violation (and usage errors).
"""

import argparse
import json
import sys

from . import mapping
from .errors import FormatError, MappingError, SchemaError
from .export import export, manifest_path_for, verify

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_IO = 2
EXIT_CONTRACT = 3


def cmd_export(args) -> int:
    manifest = export(args.checkpoint, args.flavor, args.out)
    print(json.dumps({
        "out": str(args.out),
        "manifest": str(manifest_path_for(args.out)),
        "flavor": manifest["flavor"],
        "config": manifest["config"],
        "tensors": len(manifest["tensors"]),
    }, sort_keys=True, indent=2))
    return EXIT_OK


def cmd_verify(args) -> int:
    result = verify(args.vpw, args.manifest)
    if result.ok:
        print(f"ok: {args.vpw} matches {args.manifest}")
        return EXIT_OK
    print(f"FAIL: {result.detail}", file=sys.stderr)
    return EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vpw-export",
        description="convert pretrained ViT checkpoints to VPW1 containers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="checkpoint -> VPW1 + manifest")
    p.add_argument("--flavor", required=True, choices=mapping.available_flavors())
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("verify", help="compare a VPW1 file against a manifest")
    p.add_argument("vpw")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors and 0 on --help
        return EXIT_OK if e.code == 0 else EXIT_CONTRACT
    try:
        return args.func(args)
    except FormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (MappingError, SchemaError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONTRACT


def entry() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entry()
