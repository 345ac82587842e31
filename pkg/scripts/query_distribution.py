"""Share of queries per click-count class in a click log (long-tail profile)."""

import argparse
import sys

from genr.corpus import ingest_clicks
from genr.evaluate import distribution_csv, query_distribution, share_below


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("clicks", help="clicks TSV")
    args = ap.parse_args()
    events = ingest_clicks(args.clicks)
    sys.stdout.write(distribution_csv(query_distribution(events)))
    print(f"# share of queries with < 5 clicks: {share_below(events):.3f}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
