"""Collects one verdict line per acceptance criterion and the symplectic
drift of every integration performed by the acceptance suite."""

RESULTS = {}
DRIFTS = []


def record(number, title, ok, detail):
    line = f"[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    RESULTS[number] = line
    print(line)
    return ok


def note_drift(label, drift):
    DRIFTS.append((label, float(drift)))
