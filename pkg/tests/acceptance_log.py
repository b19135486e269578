"""Collects one PASS/FAIL line per acceptance criterion for the session summary."""

import sys

RESULTS = {}


def record(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[number] = line
    print(line, file=sys.__stdout__, flush=True)
    return ok
