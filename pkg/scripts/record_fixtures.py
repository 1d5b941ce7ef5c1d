"""Record wire fixtures for the studio contract tests.

Builds a small throwaway run, drives the HTTP service in-process, and dumps
each endpoint's real response under frontend/tests/fixtures/. Re-run after
any change to the wire format, then commit the updated fixtures.
"""
from __future__ import annotations

import json
import sys
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from stylesynth.cli import cli
from stylesynth.config import RunPaths, load_config
from stylesynth.service import create_app

FIXTURES = Path(__file__).resolve().parent.parent / "frontend" / "tests" / "fixtures"


def main() -> int:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        cfg_path = Path(tmp) / "config.json"
        cfg_path.write_text(
            json.dumps(
                {
                    "corpus": {"n_target": 24, "n_style": 24, "n_semantics": 24, "seed": 3},
                    "train": {"steps": 15, "batch": 4, "seed": 3},
                    "diffusion": {"t_steps": 10},
                    "sample": {"lambda": 4},
                    "paths": {"run_root": str(Path(tmp) / "runs")},
                }
            )
        )
        if cli(["--config", str(cfg_path), "train"]) != 0:
            return 1
        client = TestClient(create_app(RunPaths(load_config(cfg_path))))

        def dump(name: str, payload) -> None:
            (FIXTURES / f"{name}.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
            print(f"wrote {name}.json")

        dump("health", client.get("/health").json())
        dump("item", client.get("/item/0.json").json())
        dump("search_content", client.post("/search", json={"modality": "content", "query": 7, "k": 4}).json())
        dump("search_style", client.post("/search", json={"modality": "style", "query": 24, "k": 4}).json())
        generate_request = {
            "content_refs": [{"id": 48, "weight": 1.0}],
            "style_refs": [{"id": 24, "weight": 2.0}],
            "lambda": 4,
            "g_s": 5.0,
            "g_y": 5.0,
            "seed": 11,
            "postprocess": False,
        }
        generated = client.post("/generate", json=generate_request).json()
        dump("generate_request", generate_request)
        dump("generate", generated)
        dump("session", client.get(f"/session/{generated['item_id']}").json())
        dump("error_404", client.get("/session/gen-404").json())
    return 0


if __name__ == "__main__":
    sys.exit(main())
