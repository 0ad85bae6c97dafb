"""Shared fixtures."""

from __future__ import annotations

from pathlib import Path

import pytest

from rerank_distill.mock_judge import MockTeacher
from rerank_distill.models import Candidate, CandidatePool, Document, Query

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def mock_teacher() -> MockTeacher:
    return MockTeacher(seed=7)


@pytest.fixture
def router_query() -> Query:
    return Query(id="q1", text="How do I reset the router admin password?")


@pytest.fixture
def router_documents() -> dict[str, Document]:
    docs = [
        Document("d1", "To reset the router admin password hold the reset button for ten seconds."),
        Document("d2", "The router admin page shows the Wi-Fi channel."),
        Document("d3", "Password managers keep passwords in a vault."),
        Document("d4", "The office moved to a new building."),
    ]
    return {doc.id: doc for doc in docs}


@pytest.fixture
def router_pool() -> CandidatePool:
    return CandidatePool(
        query_id="q1",
        candidates=(
            Candidate("d1", 0.8),
            Candidate("d2", 0.7),
            Candidate("d3", 0.5),
            Candidate("d4", 0.3),
        ),
    )
