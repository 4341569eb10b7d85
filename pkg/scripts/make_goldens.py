#!/usr/bin/env python3
"""Regenerate the golden files the determinism tests compare against.

Run from the repo root after changing the demo recording, templates, or
pipeline serialization:

    python3 scripts/make_goldens.py

The replay is a pure function of recording_demo.json, so the outputs
only change when inputs or code change. Commit the results.
"""

from __future__ import annotations

import json
from pathlib import Path

from npcforge import data_path
from npcforge.corpus import corpus_stats, load_corpus
from npcforge.pipeline import replay, transcript_json

DATA = Path(data_path(""))


def main() -> None:
    transcript = transcript_json(replay(data_path("recording_demo.json")))
    golden_path = DATA / "golden_demo_transcript.json"
    golden_path.write_text(transcript, encoding="utf-8")
    print(f"wrote {golden_path} ({len(transcript)} bytes)")

    stats = corpus_stats(load_corpus(data_path("corpus_demo.json")))
    stats_path = DATA / "golden_demo_stats.json"
    stats_path.write_text(
        json.dumps(stats, indent=2, ensure_ascii=False, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    print(f"wrote {stats_path}")


if __name__ == "__main__":
    main()
