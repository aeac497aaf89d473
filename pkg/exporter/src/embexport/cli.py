"""Minimal CLI: emb-export --audio-dir A --captions C.json --out O
                          --weights cnn14.pt --vocab vectors.txt"""

import argparse
import logging
import sys

from .errors import ExportError
from .export import ExportJob, export_dataset


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="emb-export", description=__doc__)
    ap.add_argument("--audio-dir", required=True)
    ap.add_argument("--captions", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--weights", required=True)
    ap.add_argument("--vocab", required=True)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO)
    try:
        manifest = export_dataset(ExportJob(args.audio_dir, args.captions,
                                            args.out, args.weights, args.vocab))
    except ExportError as e:
        print(f"export error: {e}", file=sys.stderr)
        return 2
    print(f"wrote {manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
