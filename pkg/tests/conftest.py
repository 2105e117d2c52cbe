import json
from pathlib import Path

import pytest

REPO = Path(__file__).resolve().parent.parent
CORPUS = REPO / "corpus"
FIXTURES = REPO / "fixtures"


@pytest.fixture(scope="session")
def corpus_dir() -> Path:
    return CORPUS


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def manifest() -> dict:
    with open(CORPUS / "manifest.json") as fh:
        return json.load(fh)["programs"]


@pytest.fixture(scope="session")
def corpus_sources(manifest) -> dict[str, str]:
    return {name: (CORPUS / f"{name}.s").read_text() for name in manifest}


@pytest.fixture(scope="session")
def corpus_images(corpus_sources):
    from scylla.asm import parse_assembly
    from scylla.image import layout_image
    return {name: layout_image(parse_assembly(src))
            for name, src in corpus_sources.items()}


@pytest.fixture(scope="session")
def corpus_encrypted(corpus_images):
    from scylla.crypto import encrypt_pipeline
    return {name: encrypt_pipeline(image, 42)
            for name, image in corpus_images.items()}
