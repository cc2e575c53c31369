#!/usr/bin/env python3
"""Convert a LINQS-format citation dataset (<name>.content, <name>.cites) into the
edge/attribute/label/id files and manifest.json read by `daegc`.

    python3 scripts/linqs_convert.py path/to/cora data/cora --name cora

Citations that mention papers absent from the content file are dropped.
"""
import argparse
import json
from pathlib import Path


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("src", type=Path, help="directory holding <name>.content and <name>.cites")
    ap.add_argument("dst", type=Path)
    ap.add_argument("--name", required=True)
    args = ap.parse_args()

    ids, rows, classes = [], [], []
    for line in (args.src / f"{args.name}.content").read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        ids.append(parts[0])
        rows.append(parts[1:-1])
        classes.append(parts[-1])
    known = set(ids)
    class_ids = {c: i for i, c in enumerate(sorted(set(classes)))}

    edges, dropped = [], 0
    for line in (args.src / f"{args.name}.cites").read_text().splitlines():
        parts = line.split()
        if len(parts) != 2:
            continue
        if parts[0] in known and parts[1] in known:
            edges.append(f"{parts[1]}\t{parts[0]}")
        else:
            dropped += 1

    args.dst.mkdir(parents=True, exist_ok=True)
    (args.dst / "graph.ids").write_text("\n".join(ids) + "\n")
    (args.dst / "graph.attrs").write_text("\n".join(" ".join(r) for r in rows) + "\n")
    (args.dst / "graph.labels").write_text("\n".join(str(class_ids[c]) for c in classes) + "\n")
    (args.dst / "graph.edges").write_text("\n".join(edges) + "\n")
    manifest = {
        "name": args.name,
        "edge_file": "graph.edges",
        "attr_file": "graph.attrs",
        "label_file": "graph.labels",
        "id_file": "graph.ids",
    }
    (args.dst / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"{len(ids)} nodes, {len(edges)} citation lines ({dropped} dangling dropped), "
          f"{len(class_ids)} classes")


if __name__ == "__main__":
    main()
