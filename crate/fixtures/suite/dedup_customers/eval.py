import argparse
import csv

ORDERED = False


def load(path):
    with open(path, newline="", encoding="utf-8-sig") as f:
        rows = list(csv.reader(f))
    return (rows[0], rows[1:]) if rows else ([], [])


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--pred", nargs="+", required=True)
    parser.add_argument("--gt", required=True)
    args = parser.parse_args()
    gt_header, gt_rows = load(args.gt)
    pred_header, pred_rows = load(args.pred[0])
    if pred_header != gt_header:
        print(0.0)
        return
    total = max(len(gt_rows), len(pred_rows))
    if total == 0:
        print(1.0)
        return
    if ORDERED:
        matched = sum(1 for a, b in zip(pred_rows, gt_rows) if a == b)
    else:
        remaining = [tuple(r) for r in gt_rows]
        matched = 0
        for row in pred_rows:
            if tuple(row) in remaining:
                remaining.remove(tuple(row))
                matched += 1
    print(round(matched / total, 6))


if __name__ == "__main__":
    main()
