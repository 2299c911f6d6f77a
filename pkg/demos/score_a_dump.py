"""Score and select from an external prediction dump through the CLI.

Writes a tiny JSON Lines dump and a catalog into a temporary directory,
then runs ``owal3d score`` and ``owal3d select`` on them exactly as a user
would from the shell.
"""

import json
import os
import tempfile

from owal3d.cli import main


def line(fid, boxes, embedding):
    return json.dumps(
        {
            "frame_id": fid,
            "boxes": [
                {"label": c, "confidence": y, "center": [0, 0, 0], "size": [4.5, 1.9, 1.6], "heading": 0.0}
                for c, y in boxes
            ],
            "embedding": embedding,
        }
    )


with tempfile.TemporaryDirectory() as tmp:
    dump = os.path.join(tmp, "preds.jsonl")
    catalog = os.path.join(tmp, "catalog.json")
    with open(dump, "w") as fh:
        fh.write(line("000001", [(1, 1.0)], [0.0, 0.0]) + "\n")
        fh.write(line("000002", [(1, 0.5), (2, 0.5)], [1.0, 0.0]) + "\n")
        fh.write(line("000003", [(1, 1.0), (2, 1.0), (1, 0.0)], [0.0, 3.0]) + "\n")
        fh.write(line("000004", [(2, 0.3)] * 3, [2.0, 2.0]) + "\n")
    with open(catalog, "w") as fh:
        json.dump({"known": [1, 2], "unknown": [3]}, fh)

    print("$ owal3d score --policy olc --diagnostics")
    main(["score", "--policy", "olc", "--dump", dump, "--catalog", catalog, "--diagnostics"])
    print("\n$ owal3d select --policy olc --k 2")
    main(["select", "--policy", "olc", "--dump", dump, "--catalog", catalog, "--k", "2"])
    print("\n$ owal3d select --policy coreset --k 2")
    main(["select", "--policy", "coreset", "--dump", dump, "--k", "2"])
