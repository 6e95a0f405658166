#!/usr/bin/env python3
"""Validate report files against schema/report.schema.json."""
import json
import pathlib
import sys

import jsonschema

ROOT = pathlib.Path(__file__).resolve().parent.parent


def main(argv):
    if len(argv) < 2:
        print("usage: validate_report.py REPORT.json...", file=sys.stderr)
        return 2
    schema = json.loads((ROOT / "schema" / "report.schema.json").read_text())
    validator = jsonschema.Draft202012Validator(schema)
    bad = 0
    for path in argv[1:]:
        report = json.loads(pathlib.Path(path).read_text())
        errors = sorted(validator.iter_errors(report), key=lambda e: list(e.path))
        for e in errors:
            print(f"{path}: {'/'.join(map(str, e.path))}: {e.message}")
        bad += bool(errors)
        if not errors:
            print(f"{path}: ok ({len(report['cards'])} cards)")
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
