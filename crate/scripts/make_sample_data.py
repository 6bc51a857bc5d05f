#!/usr/bin/env python3
"""Writes the synthetic county case-count series in data/.

Deterministic: no randomness, so rerunning reproduces the files byte for byte.
"""
import datetime
import math
import pathlib

DAYS = 200
START = datetime.date(2020, 1, 22)
WEEKDAY = [1.0, 1.05, 1.1, 1.05, 1.0, 0.85, 0.8]


def wave(day, onset, peak_day, peak, tail, second_day, second_peak):
    if day < onset:
        return 0
    if day <= peak_day:
        x = 1 + (peak - 1) * ((day - onset) / (peak_day - onset)) ** 1.5
    else:
        x = tail + (peak - tail) * math.exp(-(day - peak_day) / 18)
    x += second_peak * math.exp(-(((day - second_day) / 18) ** 2))
    return max(1, round(x * WEEKDAY[day % 7]))


SERIES = {
    "allegheny_sample.csv": dict(onset=52, peak_day=78, peak=90, tail=8, second_day=180, second_peak=70),
    "st_louis_sample.csv": dict(onset=56, peak_day=84, peak=70, tail=12, second_day=175, second_peak=45),
}


def main():
    out = pathlib.Path(__file__).resolve().parent.parent / "data"
    for name, shape in SERIES.items():
        lines = ["date,index,value"]
        for day in range(DAYS):
            date = START + datetime.timedelta(days=day)
            lines.append(f"{date.isoformat()},{day},{wave(day, **shape)}")
        (out / name).write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
