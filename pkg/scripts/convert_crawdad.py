#!/usr/bin/env python3
"""Convert a Haggle/iMote contact list into capsim's canonical meeting CSV.

Input lines are whitespace separated: ``id1 id2 start end [count gap]``,
times in seconds from the start of the experiment (the layout of the
``contacts.Exp*.dat`` files). Each contact becomes one meeting at ``start``;
with ``--every S`` a long contact also yields a meeting every ``S`` seconds
until ``end``. Output IDs are the original device IDs, so the result feeds
straight into ``capsim preprocess``.

    python scripts/convert_crawdad.py contacts.Exp3.dat -o infocom05_raw.csv
"""

from __future__ import annotations

import argparse
import sys

from capsim.trace import TraceError, make_trace, serialize


def contacts_to_events(lines, every: int = 0):
    events = []
    for lineno, line in enumerate(lines, 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) < 4:
            raise TraceError(f"line {lineno}: expected 'id1 id2 start end ...'")
        a, b, start, end = (int(float(x)) for x in parts[:4])
        if a == b:
            continue
        events.append((start, a, b))
        if every > 0:
            events.extend((t, a, b) for t in range(start + every, end + 1, every))
    return events


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("contacts")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--every", type=int, default=0, metavar="S", help="repeat a meeting every S s of a contact")
    args = p.parse_args(argv)
    try:
        with open(args.contacts, encoding="utf-8") as fh:
            tr = make_trace(contacts_to_events(fh, args.every))
    except (OSError, TraceError, ValueError) as exc:
        print(f"convert: {exc}", file=sys.stderr)
        return 2
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write(serialize(tr))
    print(f"{args.output}: n={tr.n} duration={tr.duration} events={len(tr.events)}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
