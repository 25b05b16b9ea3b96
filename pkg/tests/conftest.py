import pytest

from convlink.kb import KnowledgeBase


@pytest.fixture
def small_kb():
    articles = [
        {"id": "Pink_Floyd", "title": "Pink_Floyd",
         "body": "english rock band formed in london progressive music"},
        {"id": "Gavin_Floyd", "title": "Gavin_Floyd",
         "body": "american baseball starting pitcher major league sports"},
        {"id": "Obama", "title": "Barack_Obama",
         "body": "american politician president united states government"},
    ]
    anchors = (
        [{"anchor_text": "pink floyd", "entity_id": "Pink_Floyd"}] * 40
        + [{"anchor_text": "floyd", "entity_id": "Gavin_Floyd"}] * 5
        + [{"anchor_text": "floyd", "entity_id": "Pink_Floyd"}] * 3
        + [{"anchor_text": "barack obama", "entity_id": "Obama"}] * 10
    )
    return KnowledgeBase.ingest(articles, anchors)
