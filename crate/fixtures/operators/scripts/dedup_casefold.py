import argparse
import csv
import os


def read_rows(path):
    with open(path, newline="", encoding="utf-8-sig") as f:
        reader = csv.DictReader(f)
        return reader.fieldnames or [], list(reader)


def write_rows(path, fields, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)

def transform(fields, rows):
    seen = set()
    kept = []
    for r in rows:
        key = tuple(r[k].strip().casefold() for k in fields)
        if key not in seen:
            seen.add(key)
            kept.append(r)
    return fields, kept


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--input", nargs="+", required=True)
    parser.add_argument("--output_path_dir", required=True)
    args = parser.parse_args()
    os.makedirs(args.output_path_dir, exist_ok=True)
    for path in args.input:
        fields, rows = read_rows(path)
        fields, rows = transform(fields, rows)
        write_rows(os.path.join(args.output_path_dir, os.path.basename(path)), fields, rows)


if __name__ == "__main__":
    main()
