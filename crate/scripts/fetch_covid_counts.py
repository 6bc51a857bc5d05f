#!/usr/bin/env python3
"""Fetches daily new case counts for one U.S. county from the NYT archive.

    python3 scripts/fetch_covid_counts.py --fips 42003 --days 200 --out allegheny.csv

Writes `date,index,value` rows starting at 2020-01-22, where `value` is the
day's new cases (differences of the cumulative counts, clipped at zero) and
`index` counts days from the start. Needs network access; not used by the
tests, which run on the bundled samples in data/.
"""
import argparse
import csv
import datetime
import io
import urllib.request

URL = "https://raw.githubusercontent.com/nytimes/covid-19-data/master/us-counties-2020.csv"
START = datetime.date(2020, 1, 22)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--fips", required=True, help="county FIPS code, e.g. 42003 (Allegheny, PA)")
    ap.add_argument("--days", type=int, default=200)
    ap.add_argument("--out", required=True)
    ap.add_argument("--url", default=URL)
    args = ap.parse_args()

    with urllib.request.urlopen(args.url) as resp:
        rows = csv.DictReader(io.TextIOWrapper(resp, encoding="utf-8"))
        cumulative = {r["date"]: int(r["cases"]) for r in rows if r["fips"] == args.fips}

    prev = 0
    with open(args.out, "w", newline="") as fh:
        fh.write("date,index,value\n")
        for day in range(args.days):
            date = (START + datetime.timedelta(days=day)).isoformat()
            total = cumulative.get(date, prev)
            fh.write(f"{date},{day},{max(0, total - prev)}\n")
            prev = max(prev, total)


if __name__ == "__main__":
    main()
